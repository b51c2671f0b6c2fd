//! Tumor-mask geometry and maximum-diameter slice selection.
//!
//! Measures binary tumor cross-sections in millimetres — Feret diameter
//! (longest point-to-point distance, via convex hull + rotating calipers),
//! Martin diameter (chord through the area bisector), and area — and picks,
//! for each anatomical view, the slice that maximizes the chosen measure.

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nifti::Volume;
use crate::volume::{Slice2D, View};

/// Segmentation labels recognized in tumor masks.
///
/// 0 = background, 1 = necrotic core, 2 = edema, 4 = enhancing tumor.
pub const KNOWN_LABELS: [u8; 4] = [0, 1, 2, 4];

/// Labels that count as tumor tissue when binarizing.
pub const TUMOR_LABELS: [u8; 3] = [1, 2, 4];

/// A validated 3-D segmentation mask with voxel spacing in millimetres.
#[derive(Debug, Clone)]
pub struct SegMask {
    pub labels: Array3<u8>,
    pub spacing: [f64; 3],
}

impl SegMask {
    /// Wraps a label array, rejecting any voxel outside {0, 1, 2, 4}.
    pub fn new(labels: Array3<u8>, spacing: [f64; 3]) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|l| !KNOWN_LABELS.contains(l)) {
            return Err(Error::UnknownLabel(bad));
        }
        if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::InvalidConfig(format!("mask spacing {spacing:?} must be positive")));
        }
        Ok(SegMask { labels, spacing })
    }

    /// Converts an integer-valued volume (e.g. a label map read from NIfTI)
    /// into a mask, taking spacing from the volume's affine.
    pub fn from_volume(vol: &Volume) -> Result<Self> {
        let mut labels = Array3::zeros(vol.data.dim());
        for (dst, &v) in labels.iter_mut().zip(vol.data.iter()) {
            if v == 0.0 || v == 1.0 || v == 2.0 || v == 4.0 {
                *dst = v as u8;
            } else {
                return Err(Error::UnknownLabel(v as u8));
            }
        }
        SegMask::new(labels, vol.spacing())
    }

    /// Mask dimensions `(ni, nj, nk)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        self.labels.dim()
    }

    /// Total number of tumor voxels (labels 1, 2 or 4).
    pub fn tumor_voxels(&self) -> usize {
        self.labels.iter().filter(|l| TUMOR_LABELS.contains(l)).count()
    }
}

/// Which per-slice tumor measure drives slice selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SliceStrategy {
    /// Longest distance between any two tumor-pixel centers.
    #[default]
    Feret,
    /// Longest area-bisecting chord over both in-plane axes.
    Martin,
    /// Tumor cross-section area.
    Area,
}

impl SliceStrategy {
    pub fn name(self) -> &'static str {
        match self {
            SliceStrategy::Feret => "feret",
            SliceStrategy::Martin => "martin",
            SliceStrategy::Area => "area",
        }
    }

    pub const ALL: [SliceStrategy; 3] = [SliceStrategy::Feret, SliceStrategy::Martin, SliceStrategy::Area];
}

impl std::fmt::Display for SliceStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SliceStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "feret" => Ok(SliceStrategy::Feret),
            "martin" => Ok(SliceStrategy::Martin),
            "area" => Ok(SliceStrategy::Area),
            other => Err(Error::InvalidConfig(format!(
                "unknown slice strategy '{other}' (expected feret, martin or area)"
            ))),
        }
    }
}

/// Scan direction for the Martin diameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanAxis {
    /// Advance row by row; the bisecting chord runs along a row.
    Rows,
    /// Advance column by column; the bisecting chord runs along a column.
    Cols,
}

/// Extracts the 2-D plane of `vol` at `index` along the view's fixed axis.
pub fn extract_slice(vol: &Volume, view: View, index: usize) -> Result<Slice2D> {
    let axis = view.fixed_axis();
    let len = vol.data.shape()[axis];
    if index >= len {
        return Err(Error::SliceOutOfRange {
            view: view.name(),
            index,
            len,
        });
    }
    let data = vol.data.index_axis(Axis(axis), index).to_owned();
    let [a, b] = view.plane_axes();
    let sp = vol.spacing();
    Ok(Slice2D {
        data,
        view,
        index,
        spacing: [sp[a], sp[b]],
    })
}

/// Extracts the 2-D label plane of a mask at `index` along the view's fixed axis.
pub fn extract_mask_slice(mask: &SegMask, view: View, index: usize) -> Result<Array2<u8>> {
    let axis = view.fixed_axis();
    let len = mask.labels.shape()[axis];
    if index >= len {
        return Err(Error::SliceOutOfRange {
            view: view.name(),
            index,
            len,
        });
    }
    Ok(mask.labels.index_axis(Axis(axis), index).to_owned())
}

/// Collapses labels to a binary tumor mask (union of labels 1, 2 and 4),
/// rejecting any unknown label.
pub fn binary_tumor(labels: &Array2<u8>) -> Result<Array2<bool>> {
    let mut out = Array2::from_elem(labels.dim(), false);
    for (dst, &l) in out.iter_mut().zip(labels.iter()) {
        if !KNOWN_LABELS.contains(&l) {
            return Err(Error::UnknownLabel(l));
        }
        *dst = TUMOR_LABELS.contains(&l);
    }
    Ok(out)
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Convex hull of a planar point set via the monotone chain, returned in
/// counter-clockwise order starting from the lexicographically smallest
/// vertex. Collinear points are excluded; inputs of at most two distinct
/// points are returned as-is.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    let n = pts.len();
    if n <= 2 {
        return pts;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * n);
    // Lower chain over ascending x, then upper chain over descending x.
    for &p in pts.iter() {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop(); // last point repeats the first
    hull
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Maximum squared vertex distance of a strictly convex CCW polygon, by
/// rotating calipers: for each edge the farthest vertex advances
/// monotonically, so all antipodal pairs are visited in O(n).
fn hull_max_dist2(hull: &[[f64; 2]]) -> f64 {
    let n = hull.len();
    match n {
        0 | 1 => 0.0,
        2 => dist2(hull[0], hull[1]),
        _ => {
            let mut best = 0.0f64;
            let mut j = 1;
            for i in 0..n {
                let i1 = (i + 1) % n;
                loop {
                    let j1 = (j + 1) % n;
                    // Advance while the next vertex sits farther from edge (i, i1).
                    if cross(hull[i], hull[i1], hull[j1]) > cross(hull[i], hull[i1], hull[j]) {
                        j = j1;
                    } else {
                        break;
                    }
                }
                best = best.max(dist2(hull[i], hull[j])).max(dist2(hull[i1], hull[j]));
            }
            best
        }
    }
}

/// Centers of the true pixels in physical (row-mm, col-mm) coordinates.
fn pixel_centers(mask: &Array2<bool>, spacing: [f64; 2]) -> Vec<[f64; 2]> {
    mask.indexed_iter()
        .filter(|(_, &on)| on)
        .map(|((r, c), _)| [r as f64 * spacing[0], c as f64 * spacing[1]])
        .collect()
}

/// Feret diameter in millimetres: the longest distance between any two true
/// pixel centers, computed on the convex hull with rotating calipers.
/// Empty and single-pixel masks measure 0.
pub fn feret_diameter(mask: &Array2<bool>, spacing: [f64; 2]) -> f64 {
    let pts = pixel_centers(mask, spacing);
    if pts.len() < 2 {
        return 0.0;
    }
    let hull = convex_hull(&pts);
    hull_max_dist2(&hull).sqrt()
}

/// Martin diameter in millimetres along one scan direction: scanning line by
/// line, the chord of the first line at which the cumulative pixel area
/// reaches at least half the total. Pixels are unit squares, so a single
/// pixel yields one in-line spacing. An empty mask measures 0.
pub fn martin_diameter(mask: &Array2<bool>, spacing: [f64; 2], scan: ScanAxis) -> f64 {
    let (line_axis, inline_spacing) = match scan {
        ScanAxis::Rows => (Axis(0), spacing[1]),
        ScanAxis::Cols => (Axis(1), spacing[0]),
    };
    let counts: Vec<usize> = mask
        .axis_iter(line_axis)
        .map(|line| line.iter().filter(|&&v| v).count())
        .collect();
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let mut cum = 0usize;
    for &c in &counts {
        cum += c;
        if 2 * cum >= total {
            return c as f64 * inline_spacing;
        }
    }
    unreachable!("cumulative count reaches the total");
}

/// Tumor cross-section area in square millimetres.
pub fn tumor_area(mask: &Array2<bool>, spacing: [f64; 2]) -> f64 {
    let count = mask.iter().filter(|&&v| v).count();
    count as f64 * spacing[0] * spacing[1]
}

/// Per-slice score for a selection strategy. The Martin score is the larger
/// of the two scan directions.
pub fn strategy_score(mask: &Array2<bool>, spacing: [f64; 2], strategy: SliceStrategy) -> f64 {
    match strategy {
        SliceStrategy::Feret => feret_diameter(mask, spacing),
        SliceStrategy::Martin => martin_diameter(mask, spacing, ScanAxis::Rows)
            .max(martin_diameter(mask, spacing, ScanAxis::Cols)),
        SliceStrategy::Area => tumor_area(mask, spacing),
    }
}

/// Finds the slice index maximizing the strategy score for one view.
///
/// Only slices containing tumor are candidates; ties break toward the lower
/// index. Returns `(index, score_mm)`, or [`Error::NoTumor`] when the mask
/// is empty.
pub fn select_slice(mask: &SegMask, view: View, strategy: SliceStrategy) -> Result<(usize, f64)> {
    let axis = view.fixed_axis();
    let n = mask.labels.shape()[axis];
    let [a, b] = view.plane_axes();
    let spacing = [mask.spacing[a], mask.spacing[b]];
    let mut best: Option<(usize, f64)> = None;
    for idx in 0..n {
        let labels = mask.labels.index_axis(Axis(axis), idx);
        let bin = Array2::from_shape_fn(labels.dim(), |p| TUMOR_LABELS.contains(&labels[p]));
        if !bin.iter().any(|&v| v) {
            continue;
        }
        let score = strategy_score(&bin, spacing, strategy);
        match best {
            Some((_, s)) if score <= s => {}
            _ => best = Some((idx, score)),
        }
    }
    best.ok_or(Error::NoTumor)
}

/// A selected slice together with its position and score.
#[derive(Debug, Clone)]
pub struct SelectedSlice {
    pub slice: Slice2D,
    pub index: usize,
    pub score_mm: f64,
}

/// One image slice per anatomical view, selected by tumor diameter.
///
/// Feature concatenation downstream always runs in (axial, sagittal,
/// coronal) order.
#[derive(Debug, Clone)]
pub struct ViewTriple {
    pub axial: SelectedSlice,
    pub sagittal: SelectedSlice,
    pub coronal: SelectedSlice,
}

impl ViewTriple {
    /// The three slices in fixed concatenation order.
    pub fn slices(&self) -> [&Slice2D; 3] {
        [&self.axial.slice, &self.sagittal.slice, &self.coronal.slice]
    }
}

/// Selects the maximum-diameter slice of each view and extracts the
/// corresponding image planes.
pub fn select_multiview(vol: &Volume, mask: &SegMask, strategy: SliceStrategy) -> Result<ViewTriple> {
    if vol.dims() != mask.dims() {
        return Err(Error::ShapeMismatch(format!(
            "volume dims {:?} != mask dims {:?}",
            vol.dims(),
            mask.dims()
        )));
    }
    let pick = |view: View| -> Result<SelectedSlice> {
        let (index, score_mm) = select_slice(mask, view, strategy)?;
        Ok(SelectedSlice {
            slice: extract_slice(vol, view, index)?,
            index,
            score_mm,
        })
    };
    Ok(ViewTriple {
        axial: pick(View::Axial)?,
        sagittal: pick(View::Sagittal)?,
        coronal: pick(View::Coronal)?,
    })
}
