//! Measure a tumor mask slice by slice — Feret diameter, Martin diameter,
//! and cross-section area — and pick the widest slice per anatomical view
//! under each strategy.
//!
//! Run with: `cargo run --example slice_selection`

use ndarray::{Array2, Axis};

use multiview_mri::geometry::{select_multiview, select_slice, strategy_score};
use multiview_mri::phantom::{generate_case_labeled, PhantomConfig};
use multiview_mri::{SegMask, SliceStrategy, View};

/// Tumor-or-not plane at `index` along the view's fixed axis. All nonzero
/// mask labels (whole tumor) count.
fn tumor_plane(mask: &SegMask, view: View, index: usize) -> Array2<bool> {
    let labels = mask.labels.index_axis(Axis(view.fixed_axis()), index);
    Array2::from_shape_fn(labels.dim(), |p| labels[p] != 0)
}

fn main() -> multiview_mri::Result<()> {
    // One synthetic case with a known ellipsoidal tumor.
    let cfg = PhantomConfig {
        n_cases: 1,
        dims: [64, 64, 48],
        seed: 7,
        ..PhantomConfig::default()
    };
    let (vol, mask) = generate_case_labeled(&cfg, 0, 1)?;
    println!("tumor voxels: {}", mask.tumor_voxels());

    // Per-slice measurements on the axial stack (fixed voxel axis 2).
    let [a, b] = View::Axial.plane_axes();
    let spacing = [cfg.spacing[a], cfg.spacing[b]];
    println!("\naxial slices around the widest cut:");
    println!("{:>6} {:>12} {:>12} {:>12}", "slice", "feret mm", "martin mm", "area mm^2");
    let (best, _) = select_slice(&mask, View::Axial, SliceStrategy::Feret)?;
    for index in best.saturating_sub(2)..=(best + 2).min(cfg.dims[2] - 1) {
        let plane = tumor_plane(&mask, View::Axial, index);
        print!("{index:>6}");
        for strategy in SliceStrategy::ALL {
            print!(" {:>12.3}", strategy_score(&plane, spacing, strategy));
        }
        println!();
    }

    // Each strategy ranks slices by its own measure; all three agree that
    // the widest cut of an ellipsoid lies near its equator.
    println!("\nbest axial slice per strategy:");
    for strategy in SliceStrategy::ALL {
        let (index, score) = select_slice(&mask, View::Axial, strategy)?;
        let unit = if strategy == SliceStrategy::Area { "mm^2" } else { "mm" };
        println!("  {:<7} slice {index:>3} (score {score:.3} {unit})", strategy.name());
    }

    // The pipeline's entry point grabs one image slice per view.
    let triple = select_multiview(&vol, &mask, SliceStrategy::Feret)?;
    println!("\nselected image slices (feret strategy):");
    for sel in [&triple.axial, &triple.sagittal, &triple.coronal] {
        println!(
            "  {:<9} index {:>3}, diameter {:.3} mm, shape {:?}",
            sel.slice.view.to_string(),
            sel.index,
            sel.score_mm,
            sel.slice.data.dim(),
        );
    }

    // An empty mask is a typed error, not a silent zero.
    let empty = SegMask::new(ndarray::Array3::zeros((8, 8, 8)), [1.0; 3])?;
    match select_slice(&empty, View::Axial, SliceStrategy::Feret) {
        Err(e) => println!("\nempty mask rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
