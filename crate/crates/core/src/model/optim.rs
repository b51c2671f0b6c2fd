//! First-order optimizers over the flattened parameter vector.

use serde::{Deserialize, Serialize};

use super::{real, ModelParams, Real};

/// Update rule used by [`Optimizer`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adagrad,
    Adam,
}

/// One Adagrad update on a flat parameter slice:
/// `accum += g^2; p -= lr * g / (sqrt(accum) + eps)`.
pub fn adagrad_step<F: Real>(params: &mut [F], grads: &[F], accum: &mut [F], lr: F, eps: F) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), accum.len());
    for ((p, &g), a) in params.iter_mut().zip(grads.iter()).zip(accum.iter_mut()) {
        *a += g * g;
        *p -= lr * g / (a.sqrt() + eps);
    }
}

/// Stateful optimizer; state vectors are flat and follow the fixed
/// parameter traversal order of [`ModelParams::param_slices`].
#[derive(Debug, Clone)]
pub struct Optimizer<F> {
    pub kind: OptimizerKind,
    pub lr: F,
    /// Number of completed steps (drives Adam's bias correction).
    pub step_count: u64,
    /// Adagrad squared-gradient accumulator (empty for other kinds).
    pub accum: Vec<F>,
    /// Adam first-moment estimate (empty for other kinds).
    pub m: Vec<F>,
    /// Adam second-moment estimate (empty for other kinds).
    pub v: Vec<F>,
}

const ADAGRAD_EPS: f64 = 1e-10;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl<F: Real> Optimizer<F> {
    pub fn new(kind: OptimizerKind, lr: F, param_count: usize) -> Self {
        let (accum, m, v) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new(), Vec::new()),
            OptimizerKind::Adagrad => (vec![F::zero(); param_count], Vec::new(), Vec::new()),
            OptimizerKind::Adam => (
                Vec::new(),
                vec![F::zero(); param_count],
                vec![F::zero(); param_count],
            ),
        };
        Optimizer {
            kind,
            lr,
            step_count: 0,
            accum,
            m,
            v,
        }
    }

    /// Applies one update using `grads` (a [`ModelParams`]-shaped container
    /// of dL/dp values, e.g. a mean over a batch).
    pub fn step(&mut self, params: &mut ModelParams<F>, grads: &ModelParams<F>) {
        self.step_count += 1;
        let gslices = grads.param_slices();
        let mut pslices = params.param_slices_mut();
        let mut offset = 0usize;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in pslices.iter_mut().zip(gslices.iter()) {
                    for (pv, &gv) in p.iter_mut().zip(g.iter()) {
                        *pv -= self.lr * gv;
                    }
                }
            }
            OptimizerKind::Adagrad => {
                let eps = real::<F>(ADAGRAD_EPS);
                for (p, g) in pslices.iter_mut().zip(gslices.iter()) {
                    let acc = &mut self.accum[offset..offset + g.len()];
                    adagrad_step(p, g, acc, self.lr, eps);
                    offset += g.len();
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2, eps) = (real::<F>(ADAM_BETA1), real::<F>(ADAM_BETA2), real::<F>(ADAM_EPS));
                let t = real::<F>(self.step_count as f64);
                let c1 = F::one() - b1.powf(t);
                let c2 = F::one() - b2.powf(t);
                for (p, g) in pslices.iter_mut().zip(gslices.iter()) {
                    for (i, (pv, &gv)) in p.iter_mut().zip(g.iter()).enumerate() {
                        let m = &mut self.m[offset + i];
                        *m = b1 * *m + (F::one() - b1) * gv;
                        let v = &mut self.v[offset + i];
                        *v = b2 * *v + (F::one() - b2) * gv * gv;
                        let mhat = *m / c1;
                        let vhat = *v / c2;
                        *pv -= self.lr * mhat / (vhat.sqrt() + eps);
                    }
                    offset += g.len();
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::triple_of;
    use super::super::{backward, bce_loss, forward, BranchSpec, ModelParams, ModelSpec};
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn adagrad_step_matches_worked_example() {
        // param 1.0, grad 2.0, lr 0.1: accum becomes 4.0 and the update is
        // 0.1 * 2.0 / (2.0 + 1e-10), i.e. the parameter lands at ~0.9.
        let mut p = [1.0f64];
        let mut acc = [0.0f64];
        adagrad_step(&mut p, &[2.0], &mut acc, 0.1, 1e-10);
        assert_abs_diff_eq!(acc[0], 4.0, epsilon = 0.0);
        assert_abs_diff_eq!(p[0], 0.9, epsilon = 1e-9);
    }

    #[test]
    fn adagrad_shrinks_effective_step_over_time() {
        let mut p = [0.0f64];
        let mut acc = [0.0f64];
        adagrad_step(&mut p, &[1.0], &mut acc, 0.1, 1e-10);
        let first = p[0].abs();
        let before = p[0];
        adagrad_step(&mut p, &[1.0], &mut acc, 0.1, 1e-10);
        let second = (p[0] - before).abs();
        assert!(second < first, "second step {second} should be smaller than first {first}");
    }

    fn tiny_spec() -> ModelSpec {
        ModelSpec {
            branch: BranchSpec {
                conv_filters: vec![2],
                feature_dim: 3,
            },
            hidden: [4, 2],
        }
    }

    fn loss_on<FN: Fn(&ModelParams<f64>) -> f64>(f: FN, p: &ModelParams<f64>) -> f64 {
        f(p)
    }

    #[test]
    fn each_optimizer_reduces_the_loss_on_one_sample() {
        let spec = tiny_spec();
        let sample = (triple_of(8, 8, 9), 1u8);
        let loss_of = |p: &ModelParams<f64>| bce_loss(forward(p, &sample.0).unwrap().prob, sample.1);
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adagrad, OptimizerKind::Adam] {
            let mut p = ModelParams::<f64>::init(&spec, 12).unwrap();
            let before = loss_on(loss_of, &p);
            let mut opt = Optimizer::new(kind, 0.05, p.param_count());
            for _ in 0..25 {
                let cache = forward(&p, &sample.0).unwrap();
                let g = backward(&p, &cache, sample.1);
                opt.step(&mut p, &g);
            }
            let after = loss_on(loss_of, &p);
            assert!(
                after < before,
                "{kind:?}: loss went from {before} to {after}"
            );
        }
    }

    #[test]
    fn optimizer_step_matches_flat_adagrad() {
        let spec = tiny_spec();
        let sample = (triple_of(8, 8, 2), 0u8);
        let mut p = ModelParams::<f64>::init(&spec, 3).unwrap();
        let cache = forward(&p, &sample.0).unwrap();
        let g = backward(&p, &cache, sample.1);

        let mut flat_p = p.to_flat();
        let flat_g = g.to_flat();
        let mut acc = vec![0.0; flat_p.len()];
        adagrad_step(&mut flat_p, &flat_g, &mut acc, 0.01, 1e-10);

        let mut opt = Optimizer::new(OptimizerKind::Adagrad, 0.01, p.param_count());
        opt.step(&mut p, &g);
        assert_eq!(p.to_flat(), flat_p);
        assert_eq!(opt.accum, acc);
    }
}
