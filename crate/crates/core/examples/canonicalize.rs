//! Bring a volume stored in an arbitrary orientation onto the canonical
//! LPS 1 mm grid: reorientation is a lossless axis shuffle, resampling
//! interpolates onto the target lattice, and both preserve world
//! coordinates.
//!
//! Run with: `cargo run --example canonicalize`

use ndarray::Array3;

use multiview_mri::affine;
use multiview_mri::volume::{canonicalize, reorient_to_lps, resample_to_grid, ResampleMode};
use multiview_mri::{AxisCode, Volume};

fn main() -> multiview_mri::Result<()> {
    // A volume whose voxel axes run Right / Anterior / Superior: the first
    // two axes point *against* the LPS convention. Column i of the affine
    // is the world step per voxel step along axis i.
    let mut aff = affine::IDENTITY;
    aff[0][0] = -1.0; // +x voxel step moves right (negative L)
    aff[1][1] = -2.0; // +y voxel step moves anterior (negative P), 2 mm
    aff[2][2] = 1.5; // +z voxel step moves superior, 1.5 mm
    aff[0][3] = 19.0;
    aff[1][3] = 38.0;
    let data = Array3::from_shape_fn((20, 20, 16), |(x, y, z)| (x * 400 + y * 20 + z) as f32);
    let vol = Volume::new(data, aff)?;
    println!("input axis codes:  {:?}", vol.axis_codes);

    // Reorientation permutes/flips voxel axes only; every voxel keeps its
    // world position exactly.
    let lps = reorient_to_lps(&vol)?;
    println!("output axis codes: {:?}", lps.axis_codes);
    assert_eq!(
        lps.axis_codes,
        [AxisCode::Left, AxisCode::Posterior, AxisCode::Superior]
    );
    // Check one voxel: input (3, 5, 7) must appear wherever the LPS grid
    // places the same world point.
    let world = affine::apply(&vol.affine, [3.0, 5.0, 7.0]);
    let inv = affine::invert(&lps.affine)?;
    let idx = affine::apply(&inv, world);
    let v_in = vol.data[(3, 5, 7)];
    let v_out = lps.data[(idx[0].round() as usize, idx[1].round() as usize, idx[2].round() as usize)];
    assert_eq!(v_in, v_out, "reorientation moves voxels without changing them");
    println!("voxel (3,5,7) -> world {world:?} -> LPS index {idx:?} holds the same value");

    // Reorienting twice changes nothing.
    let twice = reorient_to_lps(&lps)?;
    assert_eq!(twice.data, lps.data);
    assert_eq!(twice.affine, lps.affine);

    // Resample onto an explicit isotropic grid. Trilinear for images.
    let target = affine::scaling([1.0, 1.0, 1.0]);
    let iso = resample_to_grid(&lps, &target, (24, 44, 28), ResampleMode::Trilinear)?;
    println!("resampled to dims {:?}, spacing {:?}", iso.dims(), iso.spacing());

    // `canonicalize` is the one-call version used by the pipeline.
    let canon = canonicalize(&vol, (24, 44, 28), ResampleMode::Trilinear)?;
    assert_eq!(canon.data, iso.data, "canonicalize == reorient + resample");
    assert_eq!(canon.affine, affine::IDENTITY);
    println!("canonical volume has the identity affine (LPS, 1 mm, origin 0)");
    Ok(())
}
