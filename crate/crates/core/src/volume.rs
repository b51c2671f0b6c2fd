//! Volume canonicalization and 2-D slice preparation.
//!
//! Brings volumes onto a common LPS-oriented isotropic grid (reorientation +
//! resampling), z-scores slices, and applies seeded training-time
//! augmentation (flips, rotation, sharpness).

use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::affine::{self, Affine};
use crate::error::{Error, Result};
use crate::nifti::Volume;

/// Canonical grid dimensions: 240 x 240 x 155 voxels at 1 mm isotropic.
pub const CANONICAL_DIMS: (usize, usize, usize) = (240, 240, 155);

/// The canonical voxel-to-world transform (1 mm LPS, zero origin).
pub fn canonical_affine() -> Affine {
    affine::IDENTITY
}

/// Anatomical viewing plane of a 2-D slice.
///
/// On the canonical LPS grid, a sagittal slice fixes voxel axis 0, a coronal
/// slice fixes axis 1, and an axial slice fixes axis 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Axial,
    Sagittal,
    Coronal,
}

impl View {
    /// The voxel axis a slice of this view holds fixed.
    pub fn fixed_axis(self) -> usize {
        match self {
            View::Sagittal => 0,
            View::Coronal => 1,
            View::Axial => 2,
        }
    }

    /// The two in-plane voxel axes, in slice (row, column) order.
    pub fn plane_axes(self) -> [usize; 2] {
        match self {
            View::Sagittal => [1, 2],
            View::Coronal => [0, 2],
            View::Axial => [0, 1],
        }
    }

    /// Lower-case view name.
    pub fn name(self) -> &'static str {
        match self {
            View::Axial => "axial",
            View::Sagittal => "sagittal",
            View::Coronal => "coronal",
        }
    }

    /// All three views in the fixed (axial, sagittal, coronal) order used
    /// for feature concatenation.
    pub const ALL: [View; 3] = [View::Axial, View::Sagittal, View::Coronal];
}

impl std::fmt::Display for View {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A single 2-D plane extracted from a 3-D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice2D {
    pub data: Array2<f32>,
    pub view: View,
    /// Position along the fixed axis the slice was taken from.
    pub index: usize,
    /// In-plane spacing in millimetres, in (row, column) order.
    pub spacing: [f64; 2],
}

/// Interpolation used when resampling onto a new grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResampleMode {
    /// Trilinear interpolation; appropriate for intensity images.
    Trilinear,
    /// Nearest-neighbour lookup; appropriate for label maps.
    Nearest,
}

/// Reorders and flips voxel axes so they run along (+L, +P, +S).
///
/// World coordinates are preserved: the returned affine maps each relocated
/// voxel to the same millimetre position as before. A volume that is already
/// LPS-oriented comes back with identical data. Applying the operation twice
/// equals applying it once.
pub fn reorient_to_lps(vol: &Volume) -> Result<Volume> {
    let codes = vol.axis_codes;
    // src[t] = which voxel axis supplies canonical axis t, and whether its
    // direction must be reversed.
    let mut src = [0usize; 3];
    let mut flip = [false; 3];
    for (col, code) in codes.iter().enumerate() {
        src[code.world_axis()] = col;
        flip[code.world_axis()] = !code.is_positive();
    }

    let dims_in = [vol.data.dim().0, vol.data.dim().1, vol.data.dim().2];
    let mut view = vol.data.view().permuted_axes([src[0], src[1], src[2]]);
    for (t, &f) in flip.iter().enumerate() {
        if f {
            view.invert_axis(Axis(t));
        }
    }
    let data = view.as_standard_layout().to_owned();

    let mut out = affine::IDENTITY;
    for t in 0..3 {
        let s = src[t];
        let sign = if flip[t] { -1.0 } else { 1.0 };
        for r in 0..3 {
            out[r][t] = sign * vol.affine[r][s];
        }
    }
    for r in 0..3 {
        out[r][3] = vol.affine[r][3];
        for t in 0..3 {
            if flip[t] {
                out[r][3] += vol.affine[r][src[t]] * (dims_in[src[t]] - 1) as f64;
            }
        }
    }
    Volume::new(data, out)
}

/// Resamples a volume onto the grid described by `target_affine` and
/// `target_dims`.
///
/// Every output voxel is mapped through both affines into the input's
/// continuous index space and interpolated there; points outside the input
/// domain contribute zero.
pub fn resample_to_grid(
    vol: &Volume,
    target_affine: &Affine,
    target_dims: (usize, usize, usize),
    mode: ResampleMode,
) -> Result<Volume> {
    let (ni, nj, nk) = target_dims;
    if ni == 0 || nj == 0 || nk == 0 {
        return Err(Error::InvalidConfig("target dims must be positive".into()));
    }
    let to_input = affine::compose(&affine::invert(&vol.affine)?, target_affine);
    let (si, sj, sk) = vol.data.dim();
    let data = &vol.data;

    let sample_nearest = |c: [f64; 3]| -> f32 {
        let r = [c[0].round(), c[1].round(), c[2].round()];
        if r[0] < 0.0 || r[1] < 0.0 || r[2] < 0.0 {
            return 0.0;
        }
        let (x, y, z) = (r[0] as usize, r[1] as usize, r[2] as usize);
        if x >= si || y >= sj || z >= sk {
            return 0.0;
        }
        data[[x, y, z]]
    };
    let sample_trilinear = |c: [f64; 3]| -> f32 {
        let x0 = c[0].floor();
        let y0 = c[1].floor();
        let z0 = c[2].floor();
        let fx = c[0] - x0;
        let fy = c[1] - y0;
        let fz = c[2] - z0;
        let mut acc = 0.0f64;
        for (dx, wx) in [(0isize, 1.0 - fx), (1, fx)] {
            if wx == 0.0 {
                continue;
            }
            for (dy, wy) in [(0isize, 1.0 - fy), (1, fy)] {
                if wy == 0.0 {
                    continue;
                }
                for (dz, wz) in [(0isize, 1.0 - fz), (1, fz)] {
                    if wz == 0.0 {
                        continue;
                    }
                    let (x, y, z) = (x0 as isize + dx, y0 as isize + dy, z0 as isize + dz);
                    if x < 0 || y < 0 || z < 0 {
                        continue;
                    }
                    let (x, y, z) = (x as usize, y as usize, z as usize);
                    if x >= si || y >= sj || z >= sk {
                        continue;
                    }
                    acc += wx * wy * wz * data[[x, y, z]] as f64;
                }
            }
        }
        acc as f32
    };

    let mut out = Array3::<f32>::zeros((ni, nj, nk));
    for i in 0..ni {
        for j in 0..nj {
            for k in 0..nk {
                let u = [i as f64, j as f64, k as f64];
                let c = affine::apply(&to_input, u);
                out[[i, j, k]] = match mode {
                    ResampleMode::Nearest => sample_nearest(c),
                    ResampleMode::Trilinear => sample_trilinear(c),
                };
            }
        }
    }
    let mut res = Volume::new(out, *target_affine)?;
    res.lossy_downcast = vol.lossy_downcast;
    Ok(res)
}

/// Reorients to LPS and resamples onto the canonical 1 mm grid (or a reduced
/// grid of the given dimensions).
pub fn canonicalize(vol: &Volume, dims: (usize, usize, usize), mode: ResampleMode) -> Result<Volume> {
    let lps = reorient_to_lps(vol)?;
    resample_to_grid(&lps, &canonical_affine(), dims, mode)
}

/// Standardizes a slice to zero mean and unit population standard deviation.
///
/// Statistics are accumulated in f64. A constant slice (zero variance) maps
/// to all zeros.
pub fn zscore_normalize(s: &Slice2D) -> Slice2D {
    Slice2D {
        data: zscore_array(&s.data),
        ..s.clone()
    }
}

fn zscore_array(a: &Array2<f32>) -> Array2<f32> {
    let n = a.len() as f64;
    let mean = a.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = a.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    if var == 0.0 {
        return Array2::zeros(a.dim());
    }
    let std = var.sqrt();
    a.mapv(|v| ((v as f64 - mean) / std) as f32)
}

/// Training-time augmentation parameters.
///
/// Applied in a fixed order: horizontal flip, vertical flip, rotation
/// (bilinear, zero fill, about the slice center), then a sharpness
/// adjustment `s + alpha * (s - box3(s))` with `alpha` drawn from
/// `sharpness`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub p_hflip: f64,
    pub p_vflip: f64,
    /// Rotation angle range in degrees, within [-180, 180].
    pub rotation_deg: [f64; 2],
    /// Sharpness factor range; 0 leaves the slice unchanged.
    pub sharpness: [f64; 2],
    /// Base seed for the per-sample augmentation streams.
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            p_hflip: 0.5,
            p_vflip: 0.5,
            rotation_deg: [-10.0, 10.0],
            sharpness: [0.0, 1.0],
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Checks ranges: probabilities in [0, 1], rotation inside [-180, 180],
    /// and both intervals ordered.
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_hflip", self.p_hflip), ("p_vflip", self.p_vflip)] {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} = {p} must be in [0, 1]")));
            }
        }
        let [lo, hi] = self.rotation_deg;
        if !lo.is_finite() || !hi.is_finite() || lo > hi || lo < -180.0 || hi > 180.0 {
            return Err(Error::InvalidConfig(format!(
                "rotation range [{lo}, {hi}] must be ordered and within [-180, 180]"
            )));
        }
        let [lo, hi] = self.sharpness;
        if !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(Error::InvalidConfig(format!(
                "sharpness range [{lo}, {hi}] must be ordered and finite"
            )));
        }
        Ok(())
    }
}

fn draw_uniform<R: Rng>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..=range[1])
    }
}

/// Applies one random augmentation draw to a slice.
///
/// Exactly four random numbers are consumed from `rng` (two flip decisions,
/// one angle, one sharpness factor), so identical RNG states produce
/// identical outputs. With all probabilities zero and both ranges `[0, 0]`,
/// the output equals the input.
pub fn augment<R: Rng>(s: &Slice2D, cfg: &AugmentConfig, rng: &mut R) -> Result<Slice2D> {
    cfg.validate()?;
    let hflip = rng.random::<f64>() < cfg.p_hflip;
    let vflip = rng.random::<f64>() < cfg.p_vflip;
    let angle = draw_uniform(rng, cfg.rotation_deg);
    let alpha = draw_uniform(rng, cfg.sharpness);

    let mut data = s.data.clone();
    if hflip {
        data.invert_axis(Axis(1));
    }
    if vflip {
        data.invert_axis(Axis(0));
    }
    if angle != 0.0 {
        data = rotate_bilinear(&data, angle);
    }
    if alpha != 0.0 {
        let smooth = box3_smooth(&data);
        ndarray::Zip::from(&mut data).and(&smooth).for_each(|v, &sm| {
            *v += alpha as f32 * (*v - sm);
        });
    }
    Ok(Slice2D {
        data,
        ..s.clone()
    })
}

/// Rotates a slice about its center by `angle_deg` (positive angles turn the
/// row axis toward the column axis), with bilinear sampling and zero fill.
pub fn rotate_bilinear(a: &Array2<f32>, angle_deg: f64) -> Array2<f32> {
    let (h, w) = a.dim();
    let cr = (h as f64 - 1.0) / 2.0;
    let cc = (w as f64 - 1.0) / 2.0;
    let theta = angle_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    Array2::from_shape_fn((h, w), |(r, c)| {
        let dr = r as f64 - cr;
        let dc = c as f64 - cc;
        // Inverse rotation of the output coordinate.
        let sr = cr + cos * dr + sin * dc;
        let sc = cc - sin * dr + cos * dc;
        bilinear_zero(a, sr, sc)
    })
}

fn bilinear_zero(a: &Array2<f32>, r: f64, c: f64) -> f32 {
    let (h, w) = a.dim();
    let r0 = r.floor();
    let c0 = c.floor();
    let fr = r - r0;
    let fc = c - c0;
    let mut acc = 0.0f64;
    for (dr, wr) in [(0isize, 1.0 - fr), (1, fr)] {
        if wr == 0.0 {
            continue;
        }
        for (dc, wc) in [(0isize, 1.0 - fc), (1, fc)] {
            if wc == 0.0 {
                continue;
            }
            let (rr, cc) = (r0 as isize + dr, c0 as isize + dc);
            if rr < 0 || cc < 0 || rr as usize >= h || cc as usize >= w {
                continue;
            }
            acc += wr * wc * a[[rr as usize, cc as usize]] as f64;
        }
    }
    acc as f32
}

/// 3x3 box smoothing; border pixels average over their in-bounds neighbours,
/// so a constant slice stays constant.
pub fn box3_smooth(a: &Array2<f32>) -> Array2<f32> {
    let (h, w) = a.dim();
    Array2::from_shape_fn((h, w), |(r, c)| {
        let mut acc = 0.0f64;
        let mut count = 0.0f64;
        for dr in -1isize..=1 {
            for dc in -1isize..=1 {
                let (rr, cc) = (r as isize + dr, c as isize + dc);
                if rr < 0 || cc < 0 || rr as usize >= h || cc as usize >= w {
                    continue;
                }
                acc += a[[rr as usize, cc as usize]] as f64;
                count += 1.0;
            }
        }
        (acc / count) as f32
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine::IDENTITY;
    use approx::assert_abs_diff_eq;
    use ndarray::Array3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn canonical_test_volume(dims: (usize, usize, usize)) -> Volume {
        let data = Array3::from_shape_fn(dims, |(i, j, k)| (i * 10000 + j * 100 + k) as f32);
        Volume::new(data, IDENTITY).unwrap()
    }

    /// Builds a scrambled copy of `vol`: output axis `a` runs along input
    /// axis `perm[a]`, reversed when `flips[a]`, with the affine adjusted so
    /// world coordinates are unchanged.
    fn scramble(vol: &Volume, perm: [usize; 3], flips: [bool; 3]) -> Volume {
        let dims_in = vol.data.dim();
        let dims_in = [dims_in.0, dims_in.1, dims_in.2];
        let dims_out = [dims_in[perm[0]], dims_in[perm[1]], dims_in[perm[2]]];
        let data = Array3::from_shape_fn((dims_out[0], dims_out[1], dims_out[2]), |(a, b, c)| {
            let u = [a, b, c];
            let mut v = [0usize; 3];
            for axis in 0..3 {
                let idx = if flips[axis] { dims_out[axis] - 1 - u[axis] } else { u[axis] };
                v[perm[axis]] = idx;
            }
            vol.data[[v[0], v[1], v[2]]]
        });
        let mut aff = IDENTITY;
        for axis in 0..3 {
            let sign = if flips[axis] { -1.0 } else { 1.0 };
            for r in 0..3 {
                aff[r][axis] = sign * vol.affine[r][perm[axis]];
            }
        }
        for r in 0..3 {
            aff[r][3] = vol.affine[r][3];
            for axis in 0..3 {
                if flips[axis] {
                    aff[r][3] += vol.affine[r][perm[axis]] * (dims_out[axis] - 1) as f64;
                }
            }
        }
        Volume::new(data, aff).unwrap()
    }

    #[test]
    fn reorient_recovers_canonical_volume_for_all_scrambles() {
        let vol = canonical_test_volume((4, 5, 6));
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        for perm in perms {
            for f in 0..8u8 {
                let flips = [f & 1 != 0, f & 2 != 0, f & 4 != 0];
                let scrambled = scramble(&vol, perm, flips);
                let restored = reorient_to_lps(&scrambled).unwrap();
                assert_eq!(restored.data, vol.data, "perm {perm:?} flips {flips:?}");
                assert_eq!(restored.affine, vol.affine);
            }
        }
    }

    #[test]
    fn reorient_is_idempotent() {
        let vol = canonical_test_volume((3, 4, 5));
        let scrambled = scramble(&vol, [2, 0, 1], [true, false, true]);
        let once = reorient_to_lps(&scrambled).unwrap();
        let twice = reorient_to_lps(&once).unwrap();
        assert_eq!(once.data, twice.data);
        assert_eq!(once.affine, twice.affine);
    }

    #[test]
    fn reorient_preserves_world_coordinates() {
        let vol = canonical_test_volume((4, 5, 6));
        // Anisotropic spacing and a shifted origin.
        let mut aff = crate::affine::scaling([0.8, 1.1, 2.0]);
        aff[0][3] = -12.0;
        aff[1][3] = 4.0;
        let vol = Volume::new(vol.data, aff).unwrap();
        let scrambled = scramble(&vol, [1, 2, 0], [false, true, true]);
        let restored = reorient_to_lps(&scrambled).unwrap();
        // Same voxel value set, and matching world position per value.
        for ((i, j, k), &v) in vol.data.indexed_iter() {
            let w_orig = crate::affine::apply(&vol.affine, [i as f64, j as f64, k as f64]);
            let ((a, b, c), _) = restored
                .data
                .indexed_iter()
                .find(|(_, &rv)| rv == v)
                .expect("value present");
            let w_new = crate::affine::apply(&restored.affine, [a as f64, b as f64, c as f64]);
            for d in 0..3 {
                assert_abs_diff_eq!(w_orig[d], w_new[d], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn resample_own_grid_nearest_is_exact() {
        let vol = canonical_test_volume((5, 6, 7));
        let dims = vol.dims();
        let out = resample_to_grid(&vol, &vol.affine, dims, ResampleMode::Nearest).unwrap();
        assert_eq!(out.data, vol.data);
    }

    #[test]
    fn resample_own_grid_trilinear_is_close() {
        let mut aff = crate::affine::scaling([1.3, 0.7, 2.0]);
        aff[2][3] = 5.0;
        let data = Array3::from_shape_fn((5, 6, 7), |(i, j, k)| ((i * 31 + j * 7 + k * 13) % 17) as f32);
        let vol = Volume::new(data, aff).unwrap();
        let out = resample_to_grid(&vol, &vol.affine, vol.dims(), ResampleMode::Trilinear).unwrap();
        for (a, b) in vol.data.iter().zip(out.data.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-5);
        }
    }

    #[test]
    fn resample_doubles_a_linear_ramp() {
        // f(x) = 2x sampled at 1 mm; resampling at 0.5 mm must give f = i.
        let n = 9;
        let data = Array3::from_shape_fn((n, 3, 3), |(i, _, _)| 2.0 * i as f32);
        let vol = Volume::new(data, IDENTITY).unwrap();
        let target = crate::affine::scaling([0.5, 1.0, 1.0]);
        let out = resample_to_grid(&vol, &target, (2 * n - 1, 3, 3), ResampleMode::Trilinear).unwrap();
        for i in 0..(2 * n - 1) {
            assert_abs_diff_eq!(out.data[[i, 1, 1]], i as f32, epsilon = 1e-5);
        }
    }

    #[test]
    fn resample_outside_is_zero() {
        let vol = canonical_test_volume((4, 4, 4));
        let mut target = IDENTITY;
        target[0][3] = 100.0; // entirely outside
        let out = resample_to_grid(&vol, &target, (3, 3, 3), ResampleMode::Trilinear).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    fn slice_from(data: Array2<f32>) -> Slice2D {
        Slice2D {
            data,
            view: View::Axial,
            index: 0,
            spacing: [1.0, 1.0],
        }
    }

    #[test]
    fn zscore_standardizes_mean_and_std() {
        let data = Array2::from_shape_fn((8, 9), |(r, c)| (r * 9 + c) as f32 * 3.0 - 50.0);
        let z = zscore_normalize(&slice_from(data));
        let n = z.data.len() as f64;
        let mean = z.data.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = z.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-5);
        assert_abs_diff_eq!(var.sqrt(), 1.0, epsilon = 1e-5);
    }

    #[test]
    fn zscore_constant_slice_is_zeros() {
        let z = zscore_normalize(&slice_from(Array2::from_elem((4, 4), 7.5)));
        assert!(z.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zscore_is_affine_invariant() {
        let data = Array2::from_shape_fn((6, 7), |(r, c)| ((r * 13 + c * 5) % 11) as f32);
        let base = zscore_normalize(&slice_from(data.clone()));
        let scaled = zscore_normalize(&slice_from(data.mapv(|v| 2.5 * v + 17.0)));
        for (a, b) in base.data.iter().zip(scaled.data.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-5);
        }
    }

    fn identity_augment() -> AugmentConfig {
        AugmentConfig {
            p_hflip: 0.0,
            p_vflip: 0.0,
            rotation_deg: [0.0, 0.0],
            sharpness: [0.0, 0.0],
            seed: 0,
        }
    }

    #[test]
    fn augment_identity_config_returns_input() {
        let s = slice_from(Array2::from_shape_fn((5, 6), |(r, c)| (r * 6 + c) as f32));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = augment(&s, &identity_augment(), &mut rng).unwrap();
        assert_eq!(out.data, s.data);
    }

    #[test]
    fn augment_certain_hflip_reverses_columns() {
        let s = slice_from(Array2::from_shape_fn((2, 4), |(r, c)| (r * 4 + c) as f32));
        let cfg = AugmentConfig {
            p_hflip: 1.0,
            ..identity_augment()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = augment(&s, &cfg, &mut rng).unwrap();
        for r in 0..2 {
            for c in 0..4 {
                assert_eq!(out.data[[r, c]], s.data[[r, 3 - c]]);
            }
        }
    }

    #[test]
    fn augment_is_deterministic_given_seed() {
        let s = slice_from(Array2::from_shape_fn((16, 16), |(r, c)| ((r * 31 + c * 17) % 23) as f32));
        let cfg = AugmentConfig::default();
        let a = augment(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        let b = augment(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        assert_eq!(a.data, b.data);
        let c = augment(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(100)).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn augment_rejects_bad_ranges() {
        let cfg = AugmentConfig {
            rotation_deg: [-200.0, 0.0],
            ..AugmentConfig::default()
        };
        let s = slice_from(Array2::zeros((3, 3)));
        assert!(matches!(
            augment(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::InvalidConfig(_))
        ));
        let cfg = AugmentConfig {
            p_hflip: 1.5,
            ..AugmentConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rotate_quarter_turn_matches_index_mapping() {
        let n = 7;
        let a = Array2::from_shape_fn((n, n), |(r, c)| (r * n + c) as f32);
        let rot = rotate_bilinear(&a, 90.0);
        for r in 0..n {
            for c in 0..n {
                assert_abs_diff_eq!(rot[[r, c]], a[[c, n - 1 - r]], epsilon = 1e-3);
            }
        }
    }

    #[test]
    fn sharpness_keeps_constant_slice_constant() {
        let s = slice_from(Array2::from_elem((5, 5), 3.0));
        let cfg = AugmentConfig {
            sharpness: [0.7, 0.7],
            ..identity_augment()
        };
        let out = augment(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(out.data, s.data);
    }

    #[test]
    fn sharpness_boosts_an_edge() {
        let mut data = Array2::zeros((5, 8));
        for r in 0..5 {
            for c in 4..8 {
                data[[r, c]] = 10.0;
            }
        }
        let s = slice_from(data);
        let cfg = AugmentConfig {
            sharpness: [1.0, 1.0],
            ..identity_augment()
        };
        let out = augment(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        // The bright side of the edge overshoots, the dark side undershoots.
        assert!(out.data[[2, 4]] > 10.0);
        assert!(out.data[[2, 3]] < 0.0);
    }
}
