//! JSON checkpoints that restore parameters bit-for-bit.
//!
//! Tensors are stored as named flat `f32` arrays in the fixed traversal
//! order of [`ModelParams::param_slices`]. JSON float serialization uses
//! the shortest representation that round-trips, so save/load returns the
//! exact same bits.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelParams, ModelSpec, Optimizer, OptimizerKind, TrainConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// One parameter tensor with its stable name and shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Serialized optimizer state, allowing training to resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f32,
    pub step_count: u64,
    #[serde(default)]
    pub accum: Vec<f32>,
    #[serde(default)]
    pub m: Vec<f32>,
    #[serde(default)]
    pub v: Vec<f32>,
}

impl OptimizerState {
    pub fn from_optimizer(opt: &Optimizer<f32>) -> Self {
        OptimizerState {
            kind: opt.kind,
            learning_rate: opt.lr,
            step_count: opt.step_count,
            accum: opt.accum.clone(),
            m: opt.m.clone(),
            v: opt.v.clone(),
        }
    }

    pub fn into_optimizer(self) -> Optimizer<f32> {
        Optimizer {
            kind: self.kind,
            lr: self.learning_rate,
            step_count: self.step_count,
            accum: self.accum,
            m: self.m,
            v: self.v,
        }
    }
}

/// On-disk checkpoint layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub tool_version: String,
    pub spec: ModelSpec,
    pub seed: u64,
    pub train_config: TrainConfig,
    pub tensors: Vec<NamedTensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn from_params(
        params: &ModelParams<f32>,
        train_config: &TrainConfig,
        optimizer: Option<&Optimizer<f32>>,
    ) -> Self {
        let names = params.tensor_names();
        let shapes = params.tensor_shapes();
        let tensors = params
            .param_slices()
            .into_iter()
            .zip(names)
            .zip(shapes)
            .map(|((data, name), shape)| NamedTensor {
                name,
                shape,
                data: data.to_vec(),
            })
            .collect();
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            tool_version: crate::VERSION.to_string(),
            spec: params.spec.clone(),
            seed: train_config.seed,
            train_config: train_config.clone(),
            tensors,
            optimizer: optimizer.map(OptimizerState::from_optimizer),
        }
    }

    /// Rebuilds the parameter container, verifying tensor names, shapes,
    /// and sizes against the architecture in the checkpoint.
    pub fn into_params(self) -> Result<(ModelParams<f32>, Self)> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported checkpoint format version {} (expected {})",
                self.format_version, CHECKPOINT_FORMAT_VERSION
            )));
        }
        let mut params = ModelParams::<f32>::init(&self.spec, 0)?.zeros_like();
        let names = params.tensor_names();
        let shapes = params.tensor_shapes();
        if self.tensors.len() != names.len() {
            return Err(Error::InvalidConfig(format!(
                "checkpoint has {} tensors, architecture needs {}",
                self.tensors.len(),
                names.len()
            )));
        }
        {
            let mut slices = params.param_slices_mut();
            for (i, t) in self.tensors.iter().enumerate() {
                if t.name != names[i] {
                    return Err(Error::InvalidConfig(format!(
                        "checkpoint tensor {i} is named {:?}, expected {:?}",
                        t.name, names[i]
                    )));
                }
                if t.shape != shapes[i] {
                    return Err(Error::InvalidConfig(format!(
                        "tensor {:?} has shape {:?}, expected {:?}",
                        t.name, t.shape, shapes[i]
                    )));
                }
                let expect: usize = t.shape.iter().product();
                if t.data.len() != expect {
                    return Err(Error::InvalidConfig(format!(
                        "tensor {:?} has {} values, shape {:?} needs {}",
                        t.name,
                        t.data.len(),
                        t.shape,
                        expect
                    )));
                }
                slices[i].copy_from_slice(&t.data);
            }
        }
        Ok((params, self))
    }
}

/// Writes a checkpoint as pretty-printed JSON.
pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams<f32>,
    train_config: &TrainConfig,
    optimizer: Option<&Optimizer<f32>>,
) -> Result<()> {
    let ckpt = Checkpoint::from_params(params, train_config, optimizer);
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &ckpt)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint and restores the exact saved parameters.
pub fn load_checkpoint(path: &Path) -> Result<(ModelParams<f32>, Checkpoint)> {
    let r = BufReader::new(File::open(path)?);
    let ckpt: Checkpoint = serde_json::from_reader(r)?;
    ckpt.into_params()
}

#[cfg(test)]
mod tests {
    use super::super::tests::triple_of;
    use super::super::{forward, ModelParams, ModelSpec, Optimizer, OptimizerKind, TrainConfig};
    use super::*;

    #[test]
    fn roundtrip_restores_exact_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let spec = ModelSpec::default();
        let params = ModelParams::<f32>::init(&spec, 99).unwrap();
        let cfg = TrainConfig::default();
        let mut opt = Optimizer::new(OptimizerKind::Adagrad, 0.01, params.param_count());
        opt.accum[3] = 0.125;
        opt.step_count = 17;
        save_checkpoint(&path, &params, &cfg, Some(&opt)).unwrap();

        let (restored, ckpt) = load_checkpoint(&path).unwrap();
        let a = params.to_flat();
        let b = restored.to_flat();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        let state = ckpt.optimizer.unwrap();
        assert_eq!(state.step_count, 17);
        assert_eq!(state.accum[3], 0.125);

        // Identical parameters produce identical predictions.
        let t = triple_of(16, 16, 3);
        let p1 = forward(&params, &t).unwrap().prob;
        let p2 = forward(&restored, &t).unwrap().prob;
        assert_eq!(p1.to_bits(), p2.to_bits());
    }

    #[test]
    fn tensor_names_follow_fixed_traversal_order() {
        let params = ModelParams::<f32>::init(&ModelSpec::default(), 0).unwrap();
        let names = params.tensor_names();
        assert_eq!(names[0], "axial.conv0.weight");
        assert_eq!(names[1], "axial.conv0.bias");
        assert!(names.iter().any(|n| n == "sagittal.proj.weight"));
        assert_eq!(names.last().unwrap(), "classifier.fc3.bias");
        assert_eq!(names.len(), params.param_slices().len());
    }

    #[test]
    fn wrong_format_version_is_rejected() {
        let params = ModelParams::<f32>::init(&ModelSpec::default(), 1).unwrap();
        let mut ckpt = Checkpoint::from_params(&params, &TrainConfig::default(), None);
        ckpt.format_version = 2;
        assert!(ckpt.into_params().is_err());
    }

    #[test]
    fn corrupted_tensor_metadata_is_rejected() {
        let params = ModelParams::<f32>::init(&ModelSpec::default(), 1).unwrap();
        let cfg = TrainConfig::default();

        let mut renamed = Checkpoint::from_params(&params, &cfg, None);
        renamed.tensors[0].name = "axial.conv9.weight".into();
        assert!(renamed.into_params().is_err());

        let mut reshaped = Checkpoint::from_params(&params, &cfg, None);
        reshaped.tensors[2].shape = vec![1, 2, 3];
        assert!(reshaped.into_params().is_err());

        let mut truncated = Checkpoint::from_params(&params, &cfg, None);
        truncated.tensors[1].data.pop();
        assert!(truncated.into_params().is_err());
    }
}
