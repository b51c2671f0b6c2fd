//! Multi-view MRI slice selection and classification.
//!
//! This crate implements a complete, deterministic pipeline for binary
//! classification of volumetric MRI cases from three anatomical 2-D views:
//!
//! 1. [`nifti`] — total NIfTI-1 reading/writing for 3-D volumes.
//! 2. [`volume`] — canonicalization to an LPS 1 mm grid, z-scoring, and
//!    training-time augmentation.
//! 3. [`geometry`] — tumor-mask measurements (Feret and Martin diameters,
//!    area) and maximum-diameter slice selection per view.
//! 4. [`model`] — a small three-branch CNN with a fused fully-connected
//!    classifier, trained from scratch with exact manual gradients.
//! 5. [`metrics`] — ROC AUC, confusion metrics, bootstrap confidence
//!    intervals, and paired permutation tests.
//! 6. [`phantom`] — synthetic ellipsoid-tumor volumes with known ground
//!    truth for end-to-end verification.
//! 7. [`pipeline`] — file-based orchestration (manifests, configs, and the
//!    subcommands exposed by the `mvmri` binary).
//!
//! Every stage is seeded: identical seeds and inputs reproduce results
//! bit-for-bit. See the crate examples for runnable walkthroughs of each
//! capability.

pub mod affine;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod nifti;
pub mod phantom;
pub mod pipeline;
pub mod volume;

pub use affine::Affine;
pub use error::{Error, Result};
pub use geometry::{SegMask, SliceStrategy, ViewTriple};
pub use model::{ModelParams, ModelSpec, Sample, TrainConfig};
pub use nifti::{read_nifti, write_nifti, AxisCode, Datatype, NiftiHeader, Volume};
pub use volume::{AugmentConfig, Slice2D, View};

/// Crate version string embedded in reports and file headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
