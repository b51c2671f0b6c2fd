//! File-based pipeline orchestration.
//!
//! Each stage of the workflow (phantom generation, preprocessing, slice
//! extraction, training, evaluation, strategy comparison) is exposed as a
//! library function operating on manifests and directories; the `mvmri`
//! binary is a thin argument-parsing shell around these.
//!
//! Conventions shared by all stages:
//! - Inputs and outputs are linked by CSV manifests with explicit split
//!   columns; paths inside a manifest are relative to its directory. A
//!   manifest argument may name either the CSV or the directory holding it
//!   under its conventional name.
//! - Stages are idempotent: a content hash of the resolved configuration
//!   and every input file is stored next to the outputs, and a rerun with
//!   unchanged inputs is a logged no-op unless `overwrite` is set.
//! - Per-case failures (unreadable file, no tumor, ...) are logged and
//!   skipped; they do not abort the run. Configuration and manifest errors
//!   abort with an error.
//! - Every JSON artifact embeds the tool version and the resolved
//!   configuration it was produced with, and contains no timestamps, so
//!   identical inputs yield byte-identical files.

pub mod commands;
pub mod config;
pub mod manifest;

pub use commands::{
    run_compare, run_evaluate, run_extract, run_gen_phantom, run_preprocess, run_train,
    CompareArgs, CompareReportFile, EvaluateReportFile, GlobalOpts, SliceBundle,
};
pub use config::{CompareConfig, ExtractConfig, PipelineConfig, PreprocessConfig};
pub use manifest::{
    resolve_manifest_arg, CaseManifest, SliceManifest, SliceRow, CASE_MANIFEST_NAME,
    SLICE_MANIFEST_NAME,
};
