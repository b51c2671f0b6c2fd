//! Mini-batch training loop with early stopping on validation accuracy.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{accuracy_at, backward, bce_loss, forward, ModelParams, ModelSpec, Optimizer, OptimizerKind};
use crate::error::{Error, Result};
use crate::geometry::ViewTriple;
use crate::volume::{augment, AugmentConfig};

/// One labeled training instance: the three selected view slices and a
/// binary label.
pub type Sample = (ViewTriple, u8);

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// Epochs without a strict validation-accuracy improvement before
    /// training stops. Zero stops after the first epoch.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 16,
            optimizer: OptimizerKind::Adagrad,
            patience: 100,
            max_epochs: 400,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be finite and positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidConfig("max_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Loss and validation accuracy recorded after each epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

/// Outcome of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub stopped_early: bool,
}

/// Augments all three views of a sample with one RNG stream derived from
/// the epoch and the sample's stable dataset index, so results do not
/// depend on shuffle order or thread scheduling.
fn augment_sample(triple: &ViewTriple, acfg: &AugmentConfig, epoch: usize, sample_idx: usize) -> Result<ViewTriple> {
    let mut rng = ChaCha8Rng::seed_from_u64(acfg.seed);
    rng.set_stream(((epoch as u64) << 32) | sample_idx as u64);
    let mut out = triple.clone();
    out.axial.slice = augment(&triple.axial.slice, acfg, &mut rng)?;
    out.sagittal.slice = augment(&triple.sagittal.slice, acfg, &mut rng)?;
    out.coronal.slice = augment(&triple.coronal.slice, acfg, &mut rng)?;
    Ok(out)
}

/// Trains a fresh model on `train_set`, early-stopping on `val_set`
/// accuracy at threshold 0.5, and returns the parameters from the best
/// validation epoch together with the per-epoch history.
///
/// With `augment` set, every training sample is re-augmented each epoch;
/// validation samples are never augmented. Given identical inputs and
/// configuration the run is bit-reproducible, including under `--jobs`
/// parallelism: per-sample gradients are computed in parallel but reduced
/// in a fixed order.
pub fn train(
    train_set: &[Sample],
    val_set: &[Sample],
    spec: &ModelSpec,
    cfg: &TrainConfig,
    aug: Option<&AugmentConfig>,
) -> Result<(ModelParams<f32>, TrainHistory)> {
    cfg.validate()?;
    spec.validate()?;
    if let Some(a) = aug {
        a.validate()?;
    }
    if train_set.is_empty() {
        return Err(Error::EmptySplit("training"));
    }
    if val_set.is_empty() {
        return Err(Error::EmptySplit("validation"));
    }

    // Stream 0 of the seed initializes parameters, stream 1 drives the
    // epoch shuffles; augmentation uses its own seed (see augment_sample).
    let mut params = ModelParams::<f32>::init(spec, cfg.seed)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);

    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate as f32, params.param_count());
    let mut history = TrainHistory {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_accuracy: f64::NEG_INFINITY,
        stopped_early: false,
    };
    let mut best_params = params.clone();
    let mut since_improve = 0usize;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            // Per-sample gradients in parallel, collected in batch order.
            let results: Vec<(ModelParams<f32>, f64)> = batch
                .par_iter()
                .map(|&idx| {
                    let (triple, label) = &train_set[idx];
                    let owned;
                    let input = match aug {
                        Some(acfg) => {
                            owned = augment_sample(triple, acfg, epoch, idx)?;
                            &owned
                        }
                        None => triple,
                    };
                    let cache = forward(&params, input)?;
                    let loss = bce_loss(cache.prob, *label) as f64;
                    Ok((backward(&params, &cache, *label), loss))
                })
                .collect::<Result<_>>()?;
            let mut mean = params.zeros_like();
            for (g, loss) in &results {
                mean.add_scaled(g, 1.0);
                loss_sum += loss;
            }
            mean.scale(1.0 / batch.len() as f32);
            opt.step(&mut params, &mean);
        }

        let val_accuracy = accuracy_at(&params, val_set, 0.5)?;
        history.epochs.push(EpochStats {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_accuracy,
        });

        if val_accuracy > history.best_val_accuracy {
            history.best_val_accuracy = val_accuracy;
            history.best_epoch = epoch;
            best_params = params.clone();
            since_improve = 0;
        } else {
            since_improve += 1;
        }
        if since_improve >= cfg.patience {
            history.stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }

    Ok((best_params, history))
}
