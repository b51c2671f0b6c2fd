//! Write a volume to NIfTI-1 (plain and gzipped), read it back, and show
//! that voxels, affine, and header metadata survive the round trip exactly.
//!
//! Run with: `cargo run --example nifti_roundtrip`

use ndarray::Array3;

use multiview_mri::affine;
use multiview_mri::nifti::{read_nifti, read_nifti_file, write_nifti, write_nifti_file, Datatype};
use multiview_mri::Volume;

fn main() -> multiview_mri::Result<()> {
    // A small ramp volume with anisotropic 1 x 1.5 x 2 mm voxels.
    let data = Array3::from_shape_fn((6, 5, 4), |(x, y, z)| (x + 10 * y + 100 * z) as f32 * 0.5);
    let vol = Volume::new(data, affine::scaling([1.0, 1.5, 2.0]))?;

    // In-memory round trip, float32 payload.
    let bytes = write_nifti(&vol, Datatype::Float32)?;
    println!("uncompressed file size: {} bytes", bytes.len());
    let back = read_nifti(&bytes, false)?;
    assert_eq!(back.data, vol.data, "voxel payload is bit-identical");
    assert_eq!(back.affine, vol.affine, "affine is bit-identical");
    assert!(!back.lossy_downcast, "float32 reads back without loss");

    // The same volume as uint8: values here are exact in u8 range after
    // scaling, so the reader applies slope/intercept transparently.
    let small = Volume::new(
        Array3::from_shape_fn((4, 4, 4), |(x, y, z)| (x + y + z) as f32),
        affine::IDENTITY,
    )?;
    let int_bytes = write_nifti(&small, Datatype::UInt8)?;
    let int_back = read_nifti(&int_bytes, false)?;
    assert_eq!(int_back.data, small.data);
    println!("uint8 payload round-trips exactly for integer-valued volumes");

    // On-disk: the `.gz` extension selects gzip transparently.
    let dir = std::env::temp_dir().join("mvmri_example_nifti");
    std::fs::create_dir_all(&dir)?;
    let plain = dir.join("ramp.nii");
    let gz = dir.join("ramp.nii.gz");
    write_nifti_file(&plain, &vol, Datatype::Float32)?;
    write_nifti_file(&gz, &vol, Datatype::Float32)?;
    let from_plain = read_nifti_file(&plain)?;
    let from_gz = read_nifti_file(&gz)?;
    assert_eq!(from_plain.data, from_gz.data);
    let plain_len = std::fs::metadata(&plain)?.len();
    let gz_len = std::fs::metadata(&gz)?.len();
    println!("wrote {} ({plain_len} bytes) and {} ({gz_len} bytes)", plain.display(), gz.display());

    // Malformed input fails with a typed error instead of a panic.
    let mut corrupt = bytes.clone();
    corrupt[344] = b'X'; // magic
    match read_nifti(&corrupt, false) {
        Err(e) => println!("corrupted magic rejected: {e}"),
        Ok(_) => unreachable!("corrupt file must not parse"),
    }
    Ok(())
}
