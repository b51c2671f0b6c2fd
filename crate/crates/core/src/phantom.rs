//! Synthetic MRI phantoms with known ground truth.
//!
//! Each case is a 3-D volume containing one ellipsoidal "tumor" made of
//! three concentric label shells, on a noisy background with a smooth
//! low-frequency intensity field. Positive cases differ from negative ones
//! only through `class_effect`: a label-weighted intensity shift inside the
//! tumor and a slight enlargement of the ellipsoid. With
//! `class_effect = 0` the two classes are statistically identical, which
//! makes the generator usable for null-hypothesis checks.
//!
//! All randomness is drawn from per-purpose RNG streams of a single seed,
//! so datasets are bit-reproducible and any case can be regenerated in
//! isolation.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::affine;
use crate::error::{Error, Result};
use crate::geometry::SegMask;
use crate::nifti::{write_nifti_file, Datatype, Volume};

/// Dataset split assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Manifest(format!(
                "unknown split {other:?} (expected train, val, or test)"
            ))),
        }
    }
}

/// Phantom dataset settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub n_cases: usize,
    pub dims: [usize; 3],
    /// Voxel spacing in millimetres.
    pub spacing: [f64; 3],
    /// Strength of the label signal: intensity shift per shell label unit
    /// in positive cases, plus a small tumor enlargement.
    pub class_effect: f64,
    /// Standard deviation of the additive Gaussian voxel noise.
    pub noise_sigma: f64,
    /// Peak amplitude of the smooth background field.
    pub field_amplitude: f64,
    /// Train/val/test fractions; must sum to 1.
    pub splits: [f64; 3],
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            n_cases: 60,
            dims: [96, 96, 64],
            spacing: [1.0, 1.0, 1.0],
            class_effect: 8.0,
            noise_sigma: 2.0,
            field_amplitude: 8.0,
            splits: [0.6, 0.2, 0.2],
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cases == 0 {
            return Err(Error::InvalidConfig("n_cases must be at least 1".into()));
        }
        if self.dims.iter().any(|&d| d < 16) {
            return Err(Error::PhantomBounds(format!(
                "dims {:?} too small; every axis needs at least 16 voxels",
                self.dims
            )));
        }
        if self.spacing.iter().any(|&s| !s.is_finite() || s <= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "spacing must be finite and positive, got {:?}",
                self.spacing
            )));
        }
        for (name, v) in [
            ("class_effect", self.class_effect),
            ("noise_sigma", self.noise_sigma),
            ("field_amplitude", self.field_amplitude),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if self.splits.iter().any(|&f| !(0.0..=1.0).contains(&f)) {
            return Err(Error::InvalidConfig(format!(
                "split fractions must lie in [0, 1], got {:?}",
                self.splits
            )));
        }
        let sum: f64 = self.splits.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "split fractions must sum to 1, got {:?} (sum {sum})"
            , self.splits)));
        }
        Ok(())
    }
}

/// Minimum number of cases each class must receive.
fn min_per_class(n: usize) -> usize {
    match n {
        1 => 0,
        n if n < 10 => 1,
        _ => 2,
    }
}

// RNG stream layout (one ChaCha8 stream per purpose, all from one seed):
const STREAM_LABELS: u64 = 0;
const STREAM_LABEL_RETRY: u64 = 2000; // + attempt
const STREAM_SPLITS: u64 = 3000;
const STREAM_CASE: u64 = 1000; // + 4 * case + {0 geometry, 1 field, 2 noise}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws a balanced-ish random label vector; redraws (bounded) until each
/// class has its minimum share.
pub fn assign_labels(cfg: &PhantomConfig) -> Result<Vec<u8>> {
    cfg.validate()?;
    let need = min_per_class(cfg.n_cases);
    for attempt in 0..1000u64 {
        let stream = if attempt == 0 { STREAM_LABELS } else { STREAM_LABEL_RETRY + attempt };
        let mut rng = stream_rng(cfg.seed, stream);
        let labels: Vec<u8> = (0..cfg.n_cases).map(|_| rng.random::<bool>() as u8).collect();
        let pos = labels.iter().filter(|&&l| l != 0).count();
        if pos >= need && cfg.n_cases - pos >= need {
            return Ok(labels);
        }
    }
    Err(Error::InvalidConfig(format!(
        "could not draw a label assignment with at least {need} cases per class out of {}",
        cfg.n_cases
    )))
}

/// Stratified split assignment: within each class, cases are shuffled and
/// allocated to train/val/test by largest-remainder rounding of the
/// fractions, so class balance carries over to every split.
pub fn assign_splits(labels: &[u8], fractions: [f64; 3], seed: u64) -> Vec<Split> {
    let mut out = vec![Split::Train; labels.len()];
    let mut rng = stream_rng(seed, STREAM_SPLITS);
    for class in [0u8, 1u8] {
        let mut idx: Vec<usize> = (0..labels.len())
            .filter(|&i| (labels[i] != 0) == (class != 0))
            .collect();
        use rand::seq::SliceRandom;
        idx.shuffle(&mut rng);
        let n = idx.len();
        let mut counts = [0usize; 3];
        let mut rema: Vec<(usize, f64)> = Vec::new();
        let mut assigned = 0usize;
        for (k, &f) in fractions.iter().enumerate() {
            let exact = f * n as f64;
            counts[k] = exact.floor() as usize;
            assigned += counts[k];
            rema.push((k, exact - exact.floor()));
        }
        rema.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for (k, _) in rema.into_iter().take(n - assigned) {
            counts[k] += 1;
        }
        let mut at = 0usize;
        for (k, split) in Split::ALL.iter().enumerate() {
            for &case in idx.iter().skip(at).take(counts[k]) {
                out[case] = *split;
            }
            at += counts[k];
        }
    }
    out
}

/// Normalized ellipsoid radius of a voxel center.
fn norm_radius(p: [f64; 3], center: [f64; 3], axes: [f64; 3]) -> f64 {
    let mut acc = 0.0;
    for k in 0..3 {
        let d = (p[k] - center[k]) / axes[k];
        acc += d * d;
    }
    acc.sqrt()
}

/// Concentric shell label for a normalized radius, or 0 outside.
fn shell_label(r: f64) -> u8 {
    if r <= 0.5 {
        1 // necrotic core
    } else if r <= 0.8 {
        2 // edema shell
    } else if r <= 1.0 {
        4 // enhancing rim
    } else {
        0
    }
}

/// Tumor geometry drawn for one case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TumorGeometry {
    /// Ellipsoid center in voxel coordinates.
    pub center: [f64; 3],
    /// Ellipsoid semi-axes in voxels (after any class enlargement).
    pub semi_axes: [f64; 3],
}

fn draw_geometry(cfg: &PhantomConfig, case: usize, label: u8) -> Result<TumorGeometry> {
    let mut rng = stream_rng(cfg.seed, STREAM_CASE + 4 * case as u64);
    let mut center = [0.0; 3];
    let mut axes = [0.0; 3];
    for k in 0..3 {
        let d = cfg.dims[k] as f64;
        center[k] = rng.random_range(0.38 * d..=0.62 * d);
        axes[k] = rng.random_range(0.12 * d..=0.18 * d);
    }
    // Positive cases get a slightly larger tumor, capped at +25 %.
    if label != 0 {
        let scale = 1.0 + (0.01 * cfg.class_effect).min(0.25);
        for a in axes.iter_mut() {
            *a *= scale;
        }
    }
    for k in 0..3 {
        let d = cfg.dims[k] as f64;
        let room = (center[k] - 1.0).min(d - 2.0 - center[k]);
        axes[k] = axes[k].min(room);
        if axes[k] < 2.0 {
            return Err(Error::PhantomBounds(format!(
                "case {case}: tumor semi-axis along axis {k} is {:.2} voxels; dims {:?} leave no room",
                axes[k], cfg.dims
            )));
        }
    }
    Ok(TumorGeometry { center, semi_axes: axes })
}

/// Smooth low-frequency field: uniform values on a coarse lattice,
/// trilinearly upsampled to the voxel grid.
fn smooth_field(cfg: &PhantomConfig, case: usize) -> Array3<f64> {
    let [nx, ny, nz] = cfg.dims;
    let coarse: [usize; 3] = cfg.dims.map(|d| d / 16 + 2);
    let mut rng = stream_rng(cfg.seed, STREAM_CASE + 4 * case as u64 + 1);
    let amp = cfg.field_amplitude;
    let grid = Array3::from_shape_fn((coarse[0], coarse[1], coarse[2]), |_| rng.random_range(-amp..=amp));
    let scale = |i: usize, n: usize, c: usize| -> f64 {
        if n <= 1 {
            0.0
        } else {
            i as f64 * (c - 1) as f64 / (n - 1) as f64
        }
    };
    Array3::from_shape_fn((nx, ny, nz), |(i, j, k)| {
        let t = [scale(i, nx, coarse[0]), scale(j, ny, coarse[1]), scale(k, nz, coarse[2])];
        let lo = t.map(|v| v.floor() as usize);
        let hi = [0, 1, 2].map(|a| (lo[a] + 1).min(coarse[a] - 1));
        let fr = [0, 1, 2].map(|a| t[a] - lo[a] as f64);
        let mut acc = 0.0;
        for (cx, wx) in [(lo[0], 1.0 - fr[0]), (hi[0], fr[0])] {
            for (cy, wy) in [(lo[1], 1.0 - fr[1]), (hi[1], fr[1])] {
                for (cz, wz) in [(lo[2], 1.0 - fr[2]), (hi[2], fr[2])] {
                    let w = wx * wy * wz;
                    if w != 0.0 {
                        acc += w * grid[[cx, cy, cz]];
                    }
                }
            }
        }
        acc
    })
}

const BACKGROUND_MEAN: f64 = 100.0;
const TUMOR_MEAN: f64 = 150.0;

/// Generates one case with a forced class label. The image and mask share
/// the same grid and a diagonal LPS affine built from `cfg.spacing`.
pub fn generate_case_labeled(cfg: &PhantomConfig, case: usize, label: u8) -> Result<(Volume, SegMask)> {
    cfg.validate()?;
    let geom = draw_geometry(cfg, case, label)?;
    let field = smooth_field(cfg, case);
    let mut noise_rng = stream_rng(cfg.seed, STREAM_CASE + 4 * case as u64 + 2);
    let normal = Normal::new(0.0, cfg.noise_sigma)
        .map_err(|e| Error::InvalidConfig(format!("invalid noise sigma: {e}")))?;

    let [nx, ny, nz] = cfg.dims;
    let mut labels = Array3::<u8>::zeros((nx, ny, nz));
    let mut data = Array3::<f32>::zeros((nx, ny, nz));
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                let r = norm_radius([i as f64, j as f64, k as f64], geom.center, geom.semi_axes);
                let shell = shell_label(r);
                labels[[i, j, k]] = shell;
                let base = if shell != 0 {
                    TUMOR_MEAN + if label != 0 { shell as f64 * cfg.class_effect } else { 0.0 }
                } else {
                    BACKGROUND_MEAN
                };
                let noise = if cfg.noise_sigma > 0.0 { normal.sample(&mut noise_rng) } else { 0.0 };
                data[[i, j, k]] = (base + field[[i, j, k]] + noise) as f32;
            }
        }
    }

    let aff = affine::scaling(cfg.spacing);
    let volume = Volume::new(data, aff)?;
    let mask = SegMask::new(labels, cfg.spacing)?;
    Ok((volume, mask))
}

/// One manifest row; paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRow {
    pub case_id: String,
    pub image_path: String,
    pub mask_path: String,
    pub label: u8,
    pub split: Split,
}

/// Generates the full dataset under `out_dir`:
/// `images/<case>_image.nii.gz`, `masks/<case>_mask.nii.gz`, and
/// `manifest.csv` with columns `case_id,image_path,mask_path,label,split`.
///
/// If the manifest already exists and `overwrite` is false the dataset is
/// left untouched and the existing manifest path is returned.
pub fn write_dataset(cfg: &PhantomConfig, out_dir: &Path, overwrite: bool) -> Result<PathBuf> {
    cfg.validate()?;
    let manifest_path = out_dir.join("manifest.csv");
    if manifest_path.exists() && !overwrite {
        log::info!(
            "dataset manifest {} already exists; skipping generation (use --overwrite to regenerate)",
            manifest_path.display()
        );
        return Ok(manifest_path);
    }
    let labels = assign_labels(cfg)?;
    let splits = assign_splits(&labels, cfg.splits, cfg.seed);
    fs::create_dir_all(out_dir.join("images"))?;
    fs::create_dir_all(out_dir.join("masks"))?;

    let mut rows = Vec::with_capacity(cfg.n_cases);
    for case in 0..cfg.n_cases {
        let case_id = format!("case_{case:04}");
        let image_rel = format!("images/{case_id}_image.nii.gz");
        let mask_rel = format!("masks/{case_id}_mask.nii.gz");
        let (volume, mask) = generate_case_labeled(cfg, case, labels[case])?;
        write_nifti_file(&out_dir.join(&image_rel), &volume, Datatype::Float32)?;
        let mask_vol = Volume::new(mask.labels.mapv(|v| v as f32), volume.affine)?;
        write_nifti_file(&out_dir.join(&mask_rel), &mask_vol, Datatype::UInt8)?;
        rows.push(CaseRow {
            case_id,
            image_path: image_rel,
            mask_path: mask_rel,
            label: labels[case],
            split: splits[case],
        });
        log::debug!("generated case {case} of {}", cfg.n_cases);
    }

    let mut w = csv::Writer::from_path(&manifest_path)?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{select_slice, SliceStrategy};
    use crate::metrics::roc_auc;
    use crate::nifti::read_nifti_file;
    use crate::volume::View;

    fn small_cfg() -> PhantomConfig {
        PhantomConfig {
            n_cases: 10,
            dims: [40, 36, 32],
            class_effect: 8.0,
            noise_sigma: 2.0,
            seed: 5,
            ..PhantomConfig::default()
        }
    }

    #[test]
    fn mask_matches_ellipsoid_shells_exactly() {
        let cfg = small_cfg();
        let (_, mask) = generate_case_labeled(&cfg, 0, 1).unwrap();
        let geom = draw_geometry(&cfg, 0, 1).unwrap();
        let mut seen = [false; 3];
        for ((i, j, k), &l) in mask.labels.indexed_iter() {
            let r = norm_radius([i as f64, j as f64, k as f64], geom.center, geom.semi_axes);
            assert_eq!(l, shell_label(r), "voxel ({i},{j},{k}) radius {r}");
            match l {
                1 => seen[0] = true,
                2 => seen[1] = true,
                4 => seen[2] = true,
                _ => {}
            }
        }
        assert!(seen.iter().all(|&s| s), "all three shells should be present");
    }

    #[test]
    fn zero_class_effect_makes_classes_identical() {
        let cfg = PhantomConfig {
            class_effect: 0.0,
            ..small_cfg()
        };
        let (v0, m0) = generate_case_labeled(&cfg, 3, 0).unwrap();
        let (v1, m1) = generate_case_labeled(&cfg, 3, 1).unwrap();
        assert_eq!(m0.labels, m1.labels);
        assert_eq!(v0.data, v1.data);
    }

    #[test]
    fn positive_cases_are_brighter_and_bigger() {
        let cfg = small_cfg();
        let (v0, m0) = generate_case_labeled(&cfg, 7, 0).unwrap();
        let (v1, m1) = generate_case_labeled(&cfg, 7, 1).unwrap();
        assert!(m1.tumor_voxels() > m0.tumor_voxels());
        let mean_in = |v: &Volume, m: &SegMask| {
            let mut acc = 0.0;
            let mut n = 0usize;
            for (idx, &l) in m.labels.indexed_iter() {
                if l != 0 {
                    acc += v.data[idx] as f64;
                    n += 1;
                }
            }
            acc / n as f64
        };
        assert!(mean_in(&v1, &m1) > mean_in(&v0, &m0) + cfg.class_effect * 0.5);
    }

    #[test]
    fn tumor_intensity_separates_the_classes() {
        let cfg = PhantomConfig {
            n_cases: 16,
            dims: [36, 36, 28],
            class_effect: 8.0,
            noise_sigma: 2.0,
            seed: 11,
            ..PhantomConfig::default()
        };
        let labels = assign_labels(&cfg).unwrap();
        let mut scores = Vec::new();
        for (case, &label) in labels.iter().enumerate() {
            let (v, m) = generate_case_labeled(&cfg, case, label).unwrap();
            let mut acc = 0.0;
            let mut n = 0usize;
            for (idx, &l) in m.labels.indexed_iter() {
                if l != 0 {
                    acc += v.data[idx] as f64;
                    n += 1;
                }
            }
            scores.push(acc / n as f64);
        }
        let auc = roc_auc(&scores, &labels).unwrap();
        assert!(auc >= 0.95, "auc {auc}");
    }

    #[test]
    fn widest_slice_sits_near_the_tumor_center() {
        let cfg = PhantomConfig {
            noise_sigma: 0.0,
            field_amplitude: 0.0,
            ..small_cfg()
        };
        let geom = draw_geometry(&cfg, 2, 0).unwrap();
        let (_, mask) = generate_case_labeled(&cfg, 2, 0).unwrap();
        for view in [View::Axial, View::Sagittal, View::Coronal] {
            let (idx, _) = select_slice(&mask, view, SliceStrategy::Feret).unwrap();
            let want = geom.center[view.fixed_axis()];
            assert!(
                (idx as f64 - want).abs() <= 1.5,
                "{view}: selected {idx}, center {want}"
            );
        }
    }

    #[test]
    fn label_assignment_respects_minimum_counts() {
        for (n, need) in [(1usize, 0usize), (4, 1), (9, 1), (10, 2), (60, 2)] {
            let cfg = PhantomConfig {
                n_cases: n,
                ..small_cfg()
            };
            let labels = assign_labels(&cfg).unwrap();
            assert_eq!(labels.len(), n);
            let pos = labels.iter().filter(|&&l| l != 0).count();
            assert!(pos >= need && n - pos >= need, "n={n}: {pos} positives");
        }
    }

    #[test]
    fn splits_are_stratified_and_exhaustive() {
        let cfg = PhantomConfig {
            n_cases: 20,
            ..small_cfg()
        };
        let labels = assign_labels(&cfg).unwrap();
        let splits = assign_splits(&labels, [0.6, 0.2, 0.2], cfg.seed);
        assert_eq!(splits.len(), 20);
        for split in Split::ALL {
            let total = splits.iter().filter(|&&s| s == split).count();
            assert!(total > 0, "{split} is empty");
            // Both classes appear in the train split (largest).
            if split == Split::Train {
                for class in [0u8, 1u8] {
                    let k = splits
                        .iter()
                        .zip(labels.iter())
                        .filter(|(s, l)| **s == split && **l == class)
                        .count();
                    assert!(k > 0, "train split lost class {class}");
                }
            }
        }
    }

    #[test]
    fn dataset_roundtrips_through_nifti_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PhantomConfig {
            n_cases: 3,
            dims: [24, 20, 18],
            ..small_cfg()
        };
        let manifest = write_dataset(&cfg, dir.path(), false).unwrap();
        assert!(manifest.exists());
        let mut rdr = csv::Reader::from_path(&manifest).unwrap();
        let rows: Vec<CaseRow> = rdr.deserialize().collect::<std::result::Result<_, _>>().unwrap();
        assert_eq!(rows.len(), 3);

        let labels = assign_labels(&cfg).unwrap();
        let (v, m) = generate_case_labeled(&cfg, 1, labels[1]).unwrap();
        let img = read_nifti_file(&dir.path().join(&rows[1].image_path)).unwrap();
        assert_eq!(img.data, v.data, "float32 payload must round-trip exactly");
        let msk = read_nifti_file(&dir.path().join(&rows[1].mask_path)).unwrap();
        let got = msk.data.mapv(|x| x as u8);
        assert_eq!(got, m.labels);
    }

    #[test]
    fn existing_dataset_is_not_clobbered_without_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PhantomConfig {
            n_cases: 2,
            dims: [20, 20, 16],
            ..small_cfg()
        };
        let manifest = write_dataset(&cfg, dir.path(), false).unwrap();
        let before = fs::read(&manifest).unwrap();
        fs::write(&manifest, b"sentinel").unwrap();
        let again = write_dataset(&cfg, dir.path(), false).unwrap();
        assert_eq!(fs::read(&again).unwrap(), b"sentinel");
        let regenerated = write_dataset(&cfg, dir.path(), true).unwrap();
        assert_eq!(fs::read(&regenerated).unwrap(), before);
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let cfg = small_cfg();
        let (v1, m1) = generate_case_labeled(&cfg, 4, 1).unwrap();
        let (v2, m2) = generate_case_labeled(&cfg, 4, 1).unwrap();
        assert_eq!(v1.data, v2.data);
        assert_eq!(m1.labels, m2.labels);
        let other = PhantomConfig { seed: 6, ..cfg };
        let (v3, _) = generate_case_labeled(&other, 4, 1).unwrap();
        assert_ne!(v1.data, v3.data);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = small_cfg();
        cfg.splits = [0.5, 0.2, 0.2];
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        let mut cfg = small_cfg();
        cfg.dims = [8, 40, 40];
        assert!(matches!(cfg.validate(), Err(Error::PhantomBounds(_))));
        let mut cfg = small_cfg();
        cfg.noise_sigma = f64::NAN;
        assert!(cfg.validate().is_err());
    }
}
