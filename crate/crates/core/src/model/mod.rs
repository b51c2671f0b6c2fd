//! Three-branch convolutional classifier with exact manual gradients.
//!
//! Each anatomical view feeds its own small CNN branch (3x3 convolutions,
//! ReLU, 2x2 max-pooling, global average pooling, linear projection); the
//! three feature vectors are concatenated in fixed (axial, sagittal,
//! coronal) order and classified by three fully-connected layers ending in
//! a sigmoid. Forward and backward passes are hand-written and verified
//! against central finite differences.

mod checkpoint;
mod optim;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, NamedTensor};
pub use optim::{adagrad_step, Optimizer, OptimizerKind};
pub use train::{train, EpochStats, Sample, TrainConfig, TrainHistory};

use ndarray::{s, Array1, Array2, Array3, Array4, Zip};
use num_traits::{Float, FromPrimitive, NumAssignOps};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ViewTriple;
use crate::volume::Slice2D;

/// Floating-point element type for model parameters: f32 for training,
/// f64 for gradient checking.
pub trait Real:
    Float + NumAssignOps + FromPrimitive + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

#[inline]
fn real<F: Real>(x: f64) -> F {
    F::from_f64(x).expect("finite f64 converts to any Real")
}

/// Probabilities are kept inside [PROB_EPS, 1 - PROB_EPS] so the
/// cross-entropy loss stays finite.
pub const PROB_EPS: f64 = 1e-7;

/// Architecture of one per-view convolutional branch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BranchSpec {
    /// Output channels of each 3x3 conv layer; every layer is followed by
    /// ReLU and 2x2 max-pooling.
    pub conv_filters: Vec<usize>,
    /// Length of the per-view feature vector after global average pooling
    /// and linear projection.
    pub feature_dim: usize,
}

impl Default for BranchSpec {
    fn default() -> Self {
        BranchSpec {
            conv_filters: vec![8, 16],
            feature_dim: 64,
        }
    }
}

/// Full model architecture: three identical-shape branches plus the fused
/// classifier's hidden widths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub branch: BranchSpec,
    /// Widths of the two hidden fully-connected layers.
    pub hidden: [usize; 2],
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            branch: BranchSpec::default(),
            hidden: [64, 16],
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.branch.conv_filters.is_empty() || self.branch.conv_filters.iter().any(|&f| f == 0) {
            return Err(Error::InvalidConfig(
                "conv_filters must be a non-empty list of positive channel counts".into(),
            ));
        }
        if self.branch.feature_dim == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidConfig("feature_dim and hidden widths must be positive".into()));
        }
        Ok(())
    }

    /// Minimum input height/width: each conv layer halves the plane.
    pub fn min_input_extent(&self) -> usize {
        1 << self.branch.conv_filters.len()
    }
}

/// 3x3 convolution, stride 1, zero padding 1 (same spatial size).
#[derive(Debug, Clone)]
pub struct Conv2d<F> {
    /// Shape `(out_channels, in_channels, 3, 3)`.
    pub weight: Array4<F>,
    pub bias: Array1<F>,
}

/// Dense layer with weight shape `(out, in)`.
#[derive(Debug, Clone)]
pub struct Linear<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

/// One per-view feature extractor.
#[derive(Debug, Clone)]
pub struct Branch<F> {
    pub convs: Vec<Conv2d<F>>,
    pub proj: Linear<F>,
}

/// The fused fully-connected head: `3 * feature_dim -> hidden[0] ->
/// hidden[1] -> 1`, ReLU between layers, sigmoid on the output.
#[derive(Debug, Clone)]
pub struct Classifier<F> {
    pub fc1: Linear<F>,
    pub fc2: Linear<F>,
    pub fc3: Linear<F>,
}

/// All trainable parameters. The same structure doubles as the gradient
/// container returned by [`backward`].
#[derive(Debug, Clone)]
pub struct ModelParams<F> {
    pub spec: ModelSpec,
    pub axial: Branch<F>,
    pub sagittal: Branch<F>,
    pub coronal: Branch<F>,
    pub classifier: Classifier<F>,
}

// Weights are Glorot-uniform; biases are drawn from [0, 1/sqrt(fan_in)]
// (non-negative so stacked ReLU layers cannot start with every unit dead,
// which would freeze training at a constant output).
fn glorot_linear<F: Real, R: Rng>(rng: &mut R, out_dim: usize, in_dim: usize) -> Linear<F> {
    let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
    let weight = Array2::from_shape_fn((out_dim, in_dim), |_| real(rng.random_range(-bound..=bound)));
    let b_bound = 1.0 / (in_dim as f64).sqrt();
    let bias = Array1::from_shape_fn(out_dim, |_| real(rng.random_range(0.0..=b_bound)));
    Linear { weight, bias }
}

fn glorot_conv<F: Real, R: Rng>(rng: &mut R, out_c: usize, in_c: usize) -> Conv2d<F> {
    let (fan_in, fan_out) = (in_c * 9, out_c * 9);
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let weight = Array4::from_shape_fn((out_c, in_c, 3, 3), |_| real(rng.random_range(-bound..=bound)));
    let b_bound = 1.0 / (fan_in as f64).sqrt();
    let bias = Array1::from_shape_fn(out_c, |_| real(rng.random_range(0.0..=b_bound)));
    Conv2d { weight, bias }
}

fn init_branch<F: Real, R: Rng>(rng: &mut R, spec: &BranchSpec) -> Branch<F> {
    let mut convs = Vec::with_capacity(spec.conv_filters.len());
    let mut in_c = 1; // single input channel
    for &out_c in &spec.conv_filters {
        convs.push(glorot_conv(rng, out_c, in_c));
        in_c = out_c;
    }
    let proj = glorot_linear(rng, spec.feature_dim, in_c);
    Branch { convs, proj }
}

impl<F: Real> ModelParams<F> {
    /// Seeded Glorot-uniform initialization (weights in
    /// `+-sqrt(6 / (fan_in + fan_out))`, biases in `+-1/sqrt(fan_in)`).
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let axial = init_branch(&mut rng, &spec.branch);
        let sagittal = init_branch(&mut rng, &spec.branch);
        let coronal = init_branch(&mut rng, &spec.branch);
        let concat = 3 * spec.branch.feature_dim;
        let classifier = Classifier {
            fc1: glorot_linear(&mut rng, spec.hidden[0], concat),
            fc2: glorot_linear(&mut rng, spec.hidden[1], spec.hidden[0]),
            fc3: glorot_linear(&mut rng, 1, spec.hidden[1]),
        };
        Ok(ModelParams {
            spec: spec.clone(),
            axial,
            sagittal,
            coronal,
            classifier,
        })
    }

    /// Same structure with every parameter set to zero.
    pub fn zeros_like(&self) -> Self {
        let zero_lin = |l: &Linear<F>| Linear {
            weight: Array2::zeros(l.weight.dim()),
            bias: Array1::zeros(l.bias.dim()),
        };
        let zero_branch = |b: &Branch<F>| Branch {
            convs: b
                .convs
                .iter()
                .map(|c| Conv2d {
                    weight: Array4::zeros(c.weight.dim()),
                    bias: Array1::zeros(c.bias.dim()),
                })
                .collect(),
            proj: zero_lin(&b.proj),
        };
        ModelParams {
            spec: self.spec.clone(),
            axial: zero_branch(&self.axial),
            sagittal: zero_branch(&self.sagittal),
            coronal: zero_branch(&self.coronal),
            classifier: Classifier {
                fc1: zero_lin(&self.classifier.fc1),
                fc2: zero_lin(&self.classifier.fc2),
                fc3: zero_lin(&self.classifier.fc3),
            },
        }
    }

    /// Flat views of every parameter tensor, in a fixed traversal order
    /// (axial, sagittal, coronal branches, then the classifier).
    pub fn param_slices(&self) -> Vec<&[F]> {
        let mut out = Vec::new();
        for b in [&self.axial, &self.sagittal, &self.coronal] {
            for c in &b.convs {
                out.push(c.weight.as_slice().expect("standard layout"));
                out.push(c.bias.as_slice().expect("standard layout"));
            }
            out.push(b.proj.weight.as_slice().expect("standard layout"));
            out.push(b.proj.bias.as_slice().expect("standard layout"));
        }
        for l in [&self.classifier.fc1, &self.classifier.fc2, &self.classifier.fc3] {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out
    }

    /// Mutable counterpart of [`ModelParams::param_slices`].
    pub fn param_slices_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = Vec::new();
        for b in [&mut self.axial, &mut self.sagittal, &mut self.coronal] {
            for c in &mut b.convs {
                out.push(c.weight.as_slice_mut().expect("standard layout"));
                out.push(c.bias.as_slice_mut().expect("standard layout"));
            }
            out.push(b.proj.weight.as_slice_mut().expect("standard layout"));
            out.push(b.proj.bias.as_slice_mut().expect("standard layout"));
        }
        for l in [&mut self.classifier.fc1, &mut self.classifier.fc2, &mut self.classifier.fc3] {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    /// Stable names for every tensor, aligned with [`ModelParams::param_slices`].
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (prefix, b) in [("axial", &self.axial), ("sagittal", &self.sagittal), ("coronal", &self.coronal)] {
            for (i, _) in b.convs.iter().enumerate() {
                out.push(format!("{prefix}.conv{i}.weight"));
                out.push(format!("{prefix}.conv{i}.bias"));
            }
            out.push(format!("{prefix}.proj.weight"));
            out.push(format!("{prefix}.proj.bias"));
        }
        for name in ["fc1", "fc2", "fc3"] {
            out.push(format!("classifier.{name}.weight"));
            out.push(format!("classifier.{name}.bias"));
        }
        out
    }

    /// Tensor shapes, aligned with [`ModelParams::param_slices`].
    pub fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        for b in [&self.axial, &self.sagittal, &self.coronal] {
            for c in &b.convs {
                out.push(c.weight.shape().to_vec());
                out.push(c.bias.shape().to_vec());
            }
            out.push(b.proj.weight.shape().to_vec());
            out.push(b.proj.bias.shape().to_vec());
        }
        for l in [&self.classifier.fc1, &self.classifier.fc2, &self.classifier.fc3] {
            out.push(l.weight.shape().to_vec());
            out.push(l.bias.shape().to_vec());
        }
        out
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// All parameters flattened into one vector.
    pub fn to_flat(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.param_count());
        for s in self.param_slices() {
            out.extend_from_slice(s);
        }
        out
    }

    fn get_flat(&self, idx: usize) -> F {
        let mut at = idx;
        for s in self.param_slices() {
            if at < s.len() {
                return s[at];
            }
            at -= s.len();
        }
        panic!("flat index {idx} out of range");
    }

    fn set_flat(&mut self, idx: usize, v: F) {
        let mut at = idx;
        for s in self.param_slices_mut() {
            if at < s.len() {
                s[at] = v;
                return;
            }
            at -= s.len();
        }
        panic!("flat index {idx} out of range");
    }

    /// `self += scale * other`, element-wise over all parameters.
    pub fn add_scaled(&mut self, other: &Self, scale: F) {
        let mut mine = self.param_slices_mut();
        let theirs = other.param_slices();
        assert_eq!(mine.len(), theirs.len(), "parameter structure mismatch");
        for (m, t) in mine.iter_mut().zip(theirs.iter()) {
            assert_eq!(m.len(), t.len(), "parameter tensor shape mismatch");
            for (a, &b) in m.iter_mut().zip(t.iter()) {
                *a += scale * b;
            }
        }
    }

    /// Multiplies every parameter by `scale`.
    pub fn scale(&mut self, scale: F) {
        for s in self.param_slices_mut() {
            for v in s.iter_mut() {
                *v *= scale;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

/// Per-branch intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BranchCache<F> {
    /// Input as `(1, h, w)`.
    input: Array3<F>,
    /// Post-ReLU output of each conv layer.
    acts: Vec<Array3<F>>,
    /// Post-pool output of each layer.
    pools: Vec<Array3<F>>,
    /// Flat `(y * w + x)` source index of each pooled maximum.
    pool_src: Vec<Array3<u32>>,
    /// Global average over the last pooled map.
    gap: Array1<F>,
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    branches: [BranchCache<F>; 3],
    /// Per-view feature vectors in (axial, sagittal, coronal) order.
    pub features: [Array1<F>; 3],
    concat: Array1<F>,
    h1: Array1<F>,
    h2: Array1<F>,
    /// Pre-sigmoid classifier output.
    pub logit: F,
    /// Sigmoid probability, clamped inside `(0, 1)` by [`PROB_EPS`].
    pub prob: F,
}

fn conv2d_forward<F: Real>(conv: &Conv2d<F>, x: &Array3<F>) -> Array3<F> {
    let (in_c, h, w) = x.dim();
    let out_c = conv.weight.dim().0;
    let mut out = Array3::zeros((out_c, h, w));
    for o in 0..out_c {
        out.slice_mut(s![o, .., ..]).fill(conv.bias[o]);
        for i in 0..in_c {
            for ky in 0..3isize {
                // Output rows whose shifted input row stays in bounds.
                let y0 = 0.max(1 - ky) as usize;
                let y1 = (h as isize).min(h as isize + 1 - ky) as usize;
                for kx in 0..3isize {
                    let wgt = conv.weight[[o, i, ky as usize, kx as usize]];
                    let x0 = 0.max(1 - kx) as usize;
                    let x1 = (w as isize).min(w as isize + 1 - kx) as usize;
                    if y0 >= y1 || x0 >= x1 {
                        continue;
                    }
                    let (sy, sx) = ((y0 as isize + ky - 1) as usize, (x0 as isize + kx - 1) as usize);
                    let dst = out.slice_mut(s![o, y0..y1, x0..x1]);
                    let src = x.slice(s![i, sy..sy + (y1 - y0), sx..sx + (x1 - x0)]);
                    Zip::from(dst).and(src).for_each(|d, &s| *d += wgt * s);
                }
            }
        }
    }
    out
}

fn relu_inplace<F: Real>(x: &mut Array3<F>) {
    x.mapv_inplace(|v| v.max(F::zero()));
}

fn maxpool2<F: Real>(x: &Array3<F>) -> (Array3<F>, Array3<u32>) {
    let (c, h, w) = x.dim();
    let (ph, pw) = (h / 2, w / 2);
    let mut out = Array3::zeros((c, ph, pw));
    let mut src = Array3::zeros((c, ph, pw));
    for ch in 0..c {
        for py in 0..ph {
            for px in 0..pw {
                let (y0, x0) = (2 * py, 2 * px);
                let mut best = x[[ch, y0, x0]];
                let mut best_idx = (y0 * w + x0) as u32;
                for (dy, dx) in [(0usize, 1usize), (1, 0), (1, 1)] {
                    let v = x[[ch, y0 + dy, x0 + dx]];
                    if v > best {
                        best = v;
                        best_idx = ((y0 + dy) * w + (x0 + dx)) as u32;
                    }
                }
                out[[ch, py, px]] = best;
                src[[ch, py, px]] = best_idx;
            }
        }
    }
    (out, src)
}

fn global_avg_pool<F: Real>(x: &Array3<F>) -> Array1<F> {
    let (c, h, w) = x.dim();
    let denom = real::<F>((h * w) as f64);
    Array1::from_shape_fn(c, |ch| {
        let mut acc = F::zero();
        for y in 0..h {
            for xx in 0..w {
                acc += x[[ch, y, xx]];
            }
        }
        acc / denom
    })
}

fn linear_forward<F: Real>(l: &Linear<F>, v: &Array1<F>) -> Array1<F> {
    let (out_dim, in_dim) = l.weight.dim();
    debug_assert_eq!(in_dim, v.len());
    Array1::from_shape_fn(out_dim, |i| {
        let mut acc = l.bias[i];
        let row = l.weight.row(i);
        for j in 0..in_dim {
            acc += row[j] * v[j];
        }
        acc
    })
}

fn relu1_inplace<F: Real>(v: &mut Array1<F>) {
    v.mapv_inplace(|x| x.max(F::zero()));
}

fn sigmoid<F: Real>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

fn to_input<F: Real>(slice: &Slice2D) -> Array3<F> {
    let (h, w) = slice.data.dim();
    Array3::from_shape_fn((1, h, w), |(_, r, c)| real(slice.data[[r, c]] as f64))
}

fn branch_forward<F: Real>(branch: &Branch<F>, slice: &Slice2D, min_extent: usize) -> Result<(Array1<F>, BranchCache<F>)> {
    let (h, w) = slice.data.dim();
    if h < min_extent || w < min_extent {
        return Err(Error::ShapeMismatch(format!(
            "{} slice is {h}x{w}; the network needs at least {min_extent} pixels per side",
            slice.view
        )));
    }
    let input = to_input::<F>(slice);
    let mut acts = Vec::with_capacity(branch.convs.len());
    let mut pools = Vec::with_capacity(branch.convs.len());
    let mut pool_src = Vec::with_capacity(branch.convs.len());
    let mut cur = input.clone();
    for conv in &branch.convs {
        let mut a = conv2d_forward(conv, &cur);
        relu_inplace(&mut a);
        let (p, src) = maxpool2(&a);
        acts.push(a);
        pool_src.push(src);
        cur = p.clone();
        pools.push(p);
    }
    let gap = global_avg_pool(&cur);
    let feature = linear_forward(&branch.proj, &gap);
    Ok((
        feature,
        BranchCache {
            input,
            acts,
            pools,
            pool_src,
            gap,
        },
    ))
}

/// Runs the full model on one multi-view sample.
///
/// The concatenation order is fixed: axial, then sagittal, then coronal.
pub fn forward<F: Real>(params: &ModelParams<F>, triple: &ViewTriple) -> Result<ForwardCache<F>> {
    let min_extent = params.spec.min_input_extent();
    let (f_ax, c_ax) = branch_forward(&params.axial, &triple.axial.slice, min_extent)?;
    let (f_sag, c_sag) = branch_forward(&params.sagittal, &triple.sagittal.slice, min_extent)?;
    let (f_cor, c_cor) = branch_forward(&params.coronal, &triple.coronal.slice, min_extent)?;

    let fd = params.spec.branch.feature_dim;
    let mut concat = Array1::zeros(3 * fd);
    concat.slice_mut(s![0..fd]).assign(&f_ax);
    concat.slice_mut(s![fd..2 * fd]).assign(&f_sag);
    concat.slice_mut(s![2 * fd..3 * fd]).assign(&f_cor);

    let mut h1 = linear_forward(&params.classifier.fc1, &concat);
    relu1_inplace(&mut h1);
    let mut h2 = linear_forward(&params.classifier.fc2, &h1);
    relu1_inplace(&mut h2);
    let logit = linear_forward(&params.classifier.fc3, &h2)[0];
    let eps = real::<F>(PROB_EPS);
    let prob = sigmoid(logit).max(eps).min(F::one() - eps);

    Ok(ForwardCache {
        branches: [c_ax, c_sag, c_cor],
        features: [f_ax, f_sag, f_cor],
        concat,
        h1,
        h2,
        logit,
        prob,
    })
}

/// Binary cross-entropy of one prediction, with the probability clamped
/// away from 0 and 1 by [`PROB_EPS`].
pub fn bce_loss<F: Real>(prob: F, label: u8) -> F {
    let eps = real::<F>(PROB_EPS);
    let p = prob.max(eps).min(F::one() - eps);
    if label != 0 {
        -p.ln()
    } else {
        -(F::one() - p).ln()
    }
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

/// Accumulates dL/dW and dL/db into `gl` and returns dL/d(input).
fn linear_backward<F: Real>(l: &Linear<F>, v_in: &Array1<F>, dout: &Array1<F>, gl: &mut Linear<F>) -> Array1<F> {
    let (out_dim, in_dim) = l.weight.dim();
    let mut dv = Array1::zeros(in_dim);
    for i in 0..out_dim {
        let d = dout[i];
        gl.bias[i] += d;
        let mut grow = gl.weight.row_mut(i);
        let row = l.weight.row(i);
        for j in 0..in_dim {
            grow[j] += d * v_in[j];
            dv[j] += row[j] * d;
        }
    }
    dv
}

/// ReLU derivative using the post-activation values (zero stays zero).
fn relu1_backward<F: Real>(delta: &mut Array1<F>, act: &Array1<F>) {
    for (d, &a) in delta.iter_mut().zip(act.iter()) {
        if a <= F::zero() {
            *d = F::zero();
        }
    }
}

fn conv2d_backward<F: Real>(
    conv: &Conv2d<F>,
    x_in: &Array3<F>,
    dout: &Array3<F>,
    gc: &mut Conv2d<F>,
    want_dx: bool,
) -> Option<Array3<F>> {
    let (in_c, h, w) = x_in.dim();
    let out_c = conv.weight.dim().0;
    let mut dx = if want_dx { Some(Array3::zeros((in_c, h, w))) } else { None };
    for o in 0..out_c {
        let dsl = dout.slice(s![o, .., ..]);
        let mut acc = F::zero();
        for v in dsl.iter() {
            acc += *v;
        }
        gc.bias[o] += acc;
        for i in 0..in_c {
            for ky in 0..3isize {
                let y0 = 0.max(1 - ky) as usize;
                let y1 = (h as isize).min(h as isize + 1 - ky) as usize;
                for kx in 0..3isize {
                    let x0 = 0.max(1 - kx) as usize;
                    let x1 = (w as isize).min(w as isize + 1 - kx) as usize;
                    if y0 >= y1 || x0 >= x1 {
                        continue;
                    }
                    let (sy, sx) = ((y0 as isize + ky - 1) as usize, (x0 as isize + kx - 1) as usize);
                    let d_sl = dout.slice(s![o, y0..y1, x0..x1]);
                    let x_sl = x_in.slice(s![i, sy..sy + (y1 - y0), sx..sx + (x1 - x0)]);
                    let mut wg = F::zero();
                    Zip::from(&d_sl).and(&x_sl).for_each(|&d, &xv| wg += d * xv);
                    gc.weight[[o, i, ky as usize, kx as usize]] += wg;
                    if let Some(dx) = dx.as_mut() {
                        let wgt = conv.weight[[o, i, ky as usize, kx as usize]];
                        let dx_sl = dx.slice_mut(s![i, sy..sy + (y1 - y0), sx..sx + (x1 - x0)]);
                        Zip::from(dx_sl).and(&d_sl).for_each(|xd, &d| *xd += wgt * d);
                    }
                }
            }
        }
    }
    dx
}

fn branch_backward<F: Real>(branch: &Branch<F>, cache: &BranchCache<F>, dfeat: &Array1<F>, gb: &mut Branch<F>) {
    // Projection.
    let dgap = linear_backward(&branch.proj, &cache.gap, dfeat, &mut gb.proj);
    // Global average pool.
    let last = cache.pools.last().expect("at least one conv layer");
    let (c, ph, pw) = last.dim();
    let denom = real::<F>((ph * pw) as f64);
    let mut dpool = Array3::zeros((c, ph, pw));
    for ch in 0..c {
        let g = dgap[ch] / denom;
        dpool.slice_mut(s![ch, .., ..]).fill(g);
    }
    // Conv stack in reverse.
    for l in (0..branch.convs.len()).rev() {
        let act = &cache.acts[l];
        let (ac, ah, aw) = act.dim();
        // Un-pool: route gradients to the recorded argmax positions.
        let mut dact = Array3::zeros((ac, ah, aw));
        let src = &cache.pool_src[l];
        let (_, ph, pw) = src.dim();
        for ch in 0..ac {
            for py in 0..ph {
                for px in 0..pw {
                    let flat = src[[ch, py, px]] as usize;
                    dact[[ch, flat / aw, flat % aw]] += dpool[[ch, py, px]];
                }
            }
        }
        // ReLU.
        Zip::from(&mut dact).and(act).for_each(|d, &a| {
            if a <= F::zero() {
                *d = F::zero();
            }
        });
        // Convolution; the input gradient is not needed below layer 0.
        let x_in = if l == 0 { &cache.input } else { &cache.pools[l - 1] };
        let dx = conv2d_backward(&branch.convs[l], x_in, &dact, &mut gb.convs[l], l > 0);
        if let Some(dx) = dx {
            dpool = dx;
        }
    }
}

/// Exact gradients of [`bce_loss`] with respect to every parameter for one
/// sample, returned in a [`ModelParams`]-shaped container.
pub fn backward<F: Real>(params: &ModelParams<F>, cache: &ForwardCache<F>, label: u8) -> ModelParams<F> {
    let mut g = params.zeros_like();
    let y = if label != 0 { F::one() } else { F::zero() };
    // d(BCE o sigmoid)/d(logit) = p - y.
    let dlogit = cache.prob - y;

    let dout3 = Array1::from_elem(1, dlogit);
    let mut dh2 = linear_backward(&params.classifier.fc3, &cache.h2, &dout3, &mut g.classifier.fc3);
    relu1_backward(&mut dh2, &cache.h2);
    let mut dh1 = linear_backward(&params.classifier.fc2, &cache.h1, &dh2, &mut g.classifier.fc2);
    relu1_backward(&mut dh1, &cache.h1);
    let dconcat = linear_backward(&params.classifier.fc1, &cache.concat, &dh1, &mut g.classifier.fc1);

    let fd = params.spec.branch.feature_dim;
    let d_ax = dconcat.slice(s![0..fd]).to_owned();
    let d_sag = dconcat.slice(s![fd..2 * fd]).to_owned();
    let d_cor = dconcat.slice(s![2 * fd..3 * fd]).to_owned();
    branch_backward(&params.axial, &cache.branches[0], &d_ax, &mut g.axial);
    branch_backward(&params.sagittal, &cache.branches[1], &d_sag, &mut g.sagittal);
    branch_backward(&params.coronal, &cache.branches[2], &d_cor, &mut g.coronal);
    g
}

/// Sigmoid probabilities for a batch of samples.
pub fn predict<F: Real>(params: &ModelParams<F>, samples: &[Sample]) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|(triple, _)| forward(params, triple).map(|c| c.prob.to_f64().expect("finite probability")))
        .collect()
}

/// Fraction of samples whose thresholded probability matches the label
/// (scores at the threshold count as positive).
pub fn accuracy_at<F: Real>(params: &ModelParams<F>, samples: &[Sample], threshold: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySplit("accuracy"));
    }
    let probs = predict(params, samples)?;
    let hits = probs
        .iter()
        .zip(samples.iter())
        .filter(|(p, (_, y))| (**p >= threshold) == (*y != 0))
        .count();
    Ok(hits as f64 / samples.len() as f64)
}

/// Compares analytic gradients against central finite differences of the
/// loss and returns the maximum relative error
/// `|g_a - g_n| / max(|g_a|, |g_n|, 1e-8)`.
///
/// When the model has more than `max_checked` parameters, a seeded random
/// subsample of that size is checked instead of every coordinate. Only
/// meaningful for `F = f64`, where finite differences resolve below the
/// 1e-4 acceptance threshold.
pub fn grad_check<F: Real>(
    params: &ModelParams<F>,
    sample: &Sample,
    fd_eps: f64,
    max_checked: usize,
    seed: u64,
) -> Result<f64> {
    let (triple, label) = sample;
    let cache = forward(params, triple)?;
    let analytic = backward(params, &cache, *label);
    let flat = analytic.to_flat();
    let total = flat.len();

    let indices: Vec<usize> = if total <= max_checked {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = std::collections::BTreeSet::new();
        while picked.len() < max_checked {
            picked.insert(rng.random_range(0..total));
        }
        picked.into_iter().collect()
    };

    let mut probe = params.clone();
    let eps = real::<F>(fd_eps);
    let mut worst = 0.0f64;
    for idx in indices {
        let orig = probe.get_flat(idx);
        probe.set_flat(idx, orig + eps);
        let lp = bce_loss(forward(&probe, triple)?.prob, *label);
        probe.set_flat(idx, orig - eps);
        let lm = bce_loss(forward(&probe, triple)?.prob, *label);
        probe.set_flat(idx, orig);
        let numeric = ((lp - lm) / (eps + eps)).to_f64().expect("finite loss");
        let ga = flat[idx].to_f64().expect("finite gradient");
        let rel = (ga - numeric).abs() / ga.abs().max(numeric.abs()).max(1e-8);
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::View;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;

    fn slice_of(view: View, h: usize, w: usize, seed: u64) -> Slice2D {
        let mut state = seed.wrapping_add(0x9e3779b97f4a7c15);
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) % 2000) as f32 / 1000.0 - 1.0
        };
        Slice2D {
            data: Array2::from_shape_fn((h, w), |_| next()),
            view,
            index: 0,
            spacing: [1.0, 1.0],
        }
    }

    pub(crate) fn triple_of(h: usize, w: usize, seed: u64) -> ViewTriple {
        use crate::geometry::SelectedSlice;
        let mk = |view: View, s: u64| SelectedSlice {
            slice: slice_of(view, h, w, s),
            index: 0,
            score_mm: 1.0,
        };
        ViewTriple {
            axial: mk(View::Axial, seed),
            sagittal: mk(View::Sagittal, seed + 1),
            coronal: mk(View::Coronal, seed + 2),
        }
    }

    fn small_spec() -> ModelSpec {
        ModelSpec {
            branch: BranchSpec {
                conv_filters: vec![2, 3],
                feature_dim: 4,
            },
            hidden: [5, 3],
        }
    }

    #[test]
    fn init_is_seed_deterministic() {
        let spec = ModelSpec::default();
        let a = ModelParams::<f32>::init(&spec, 7).unwrap();
        let b = ModelParams::<f32>::init(&spec, 7).unwrap();
        assert_eq!(a.to_flat(), b.to_flat());
        let c = ModelParams::<f32>::init(&spec, 8).unwrap();
        assert_ne!(a.to_flat(), c.to_flat());
    }

    #[test]
    fn init_respects_glorot_bounds() {
        let spec = small_spec();
        let p = ModelParams::<f64>::init(&spec, 3).unwrap();
        // First conv: fan_in 9, fan_out 18.
        let bound = (6.0 / 27.0f64).sqrt();
        for w in p.axial.convs[0].weight.iter() {
            assert!(w.abs() <= bound);
        }
        let fc1 = &p.classifier.fc1;
        let bound = (6.0 / (fc1.weight.dim().0 + fc1.weight.dim().1) as f64).sqrt();
        for w in fc1.weight.iter() {
            assert!(w.abs() <= bound);
        }
    }

    #[test]
    fn zero_params_predict_one_half() {
        let spec = small_spec();
        let p = ModelParams::<f64>::init(&spec, 1).unwrap().zeros_like();
        let cache = forward(&p, &triple_of(12, 12, 5)).unwrap();
        assert_eq!(cache.prob, 0.5);
        assert_abs_diff_eq!(bce_loss(cache.prob, 1), std::f64::consts::LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(bce_loss(cache.prob, 0), std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn loss_clamps_extreme_probabilities() {
        // p = 1e-9 clamps to 1e-7, so the loss is -ln(1e-7) = 16.118...
        let l = bce_loss(1e-9f64, 1);
        assert_abs_diff_eq!(l, -(1e-7f64).ln(), epsilon = 1e-9);
        assert!(bce_loss(1.0f64, 0).is_finite());
        assert!(bce_loss(0.0f64, 1).is_finite());
    }

    #[test]
    fn probabilities_stay_strictly_inside_unit_interval() {
        let spec = small_spec();
        let p = ModelParams::<f32>::init(&spec, 11).unwrap();
        for s in 0..5 {
            let cache = forward(&p, &triple_of(10, 14, s * 31)).unwrap();
            assert!(cache.prob > 0.0 && cache.prob < 1.0);
        }
    }

    #[test]
    fn swapping_views_changes_the_output() {
        let spec = small_spec();
        let p = ModelParams::<f64>::init(&spec, 2).unwrap();
        let t = triple_of(12, 12, 77);
        let base = forward(&p, &t).unwrap().prob;
        let mut swapped = t.clone();
        std::mem::swap(&mut swapped.axial, &mut swapped.coronal);
        let other = forward(&p, &swapped).unwrap().prob;
        assert_ne!(base, other);
    }

    #[test]
    fn too_small_slices_are_a_shape_error() {
        let spec = small_spec(); // two pooling stages need >= 4 px per side
        let p = ModelParams::<f32>::init(&spec, 1).unwrap();
        let t = triple_of(3, 12, 1);
        assert!(matches!(forward(&p, &t), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn zero_input_kills_first_conv_weight_gradients_but_not_biases() {
        let spec = small_spec();
        let p = ModelParams::<f64>::init(&spec, 5).unwrap();
        let mut t = triple_of(12, 12, 1);
        for s in [&mut t.axial, &mut t.sagittal, &mut t.coronal] {
            s.slice.data.fill(0.0);
        }
        let cache = forward(&p, &t).unwrap();
        let g = backward(&p, &cache, 1);
        for b in [&g.axial, &g.sagittal, &g.coronal] {
            assert!(b.convs[0].weight.iter().all(|&v| v == 0.0));
        }
        // Positive first-layer biases survive the ReLU, so their gradients flow.
        assert!(
            [&g.axial, &g.sagittal, &g.coronal]
                .iter()
                .any(|b| b.convs[0].bias.iter().any(|&v| v != 0.0)),
            "expected some nonzero first-conv bias gradient"
        );
    }

    #[test]
    fn dead_hidden_units_get_zero_gradients() {
        let spec = small_spec();
        let mut p = ModelParams::<f64>::init(&spec, 9).unwrap();
        // Force hidden unit 0 of fc2 permanently inactive.
        for w in p.classifier.fc2.weight.row_mut(0).iter_mut() {
            *w = -1.0;
        }
        p.classifier.fc2.bias[0] = -5.0;
        let t = triple_of(12, 12, 3);
        let cache = forward(&p, &t).unwrap();
        let g = backward(&p, &cache, 0);
        assert!(g.classifier.fc2.weight.row(0).iter().all(|&v| v == 0.0));
        assert_eq!(g.classifier.fc2.bias[0], 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let spec = small_spec();
        let p = ModelParams::<f64>::init(&spec, 42).unwrap();
        let sample = (triple_of(12, 10, 17), 1u8);
        let err = grad_check(&p, &sample, 1e-5, 800, 0).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn gradient_check_covers_default_architecture() {
        let spec = ModelSpec::default();
        let p = ModelParams::<f64>::init(&spec, 4).unwrap();
        let sample = (triple_of(16, 16, 23), 0u8);
        let err = grad_check(&p, &sample, 1e-5, 400, 1).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn batch_gradient_is_mean_of_sample_gradients() {
        let spec = small_spec();
        let p = ModelParams::<f64>::init(&spec, 6).unwrap();
        let samples: Vec<Sample> = (0..3).map(|i| (triple_of(8, 8, 100 + i), (i % 2) as u8)).collect();
        let mut acc = p.zeros_like();
        for (t, y) in &samples {
            let cache = forward(&p, t).unwrap();
            acc.add_scaled(&backward(&p, &cache, *y), 1.0);
        }
        acc.scale(1.0 / 3.0);
        // The mean gradient of a constant batch equals the sample gradient.
        let single = vec![samples[0].clone(); 4];
        let mut acc2 = p.zeros_like();
        for (t, y) in &single {
            let cache = forward(&p, t).unwrap();
            acc2.add_scaled(&backward(&p, &cache, *y), 1.0);
        }
        acc2.scale(1.0 / 4.0);
        let cache = forward(&p, &samples[0].0).unwrap();
        let direct = backward(&p, &cache, samples[0].1);
        for (a, b) in acc2.to_flat().iter().zip(direct.to_flat().iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
        // And a mixed batch differs from any single sample's gradient.
        assert_ne!(acc.to_flat(), direct.to_flat());
    }
}
