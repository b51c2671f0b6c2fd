//! Stage implementations behind the `mvmri` subcommands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{select_multiview, SegMask, SelectedSlice, SliceStrategy, ViewTriple};
use crate::metrics::{evaluate, permutation_test_auc, EvalConfig, EvalReport};
use crate::model::{
    load_checkpoint, predict, save_checkpoint, train, ModelSpec, Sample, TrainConfig, TrainHistory,
};
use crate::nifti::{read_nifti_file, write_nifti_file, Datatype};
use crate::phantom::{write_dataset, CaseRow, PhantomConfig, Split};
use crate::pipeline::config::{CompareConfig, ExtractConfig, PreprocessConfig};
use crate::pipeline::manifest::{
    resolve_manifest_arg, CaseManifest, SliceManifest, SliceRow, CASE_MANIFEST_NAME,
    SLICE_MANIFEST_NAME,
};
use crate::volume::{canonicalize, zscore_normalize, AugmentConfig, ResampleMode, Slice2D, View};

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Copy, Default)]
pub struct GlobalOpts {
    /// Overrides every per-stage seed when set.
    pub seed: Option<u64>,
    /// Regenerate outputs even when inputs are unchanged.
    pub overwrite: bool,
}

// ---------------------------------------------------------------------------
// Idempotence: content-hash state files
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct StageState {
    version: String,
    /// SHA-256 over the resolved config and every input file.
    signature: String,
    /// Outputs relative to the state file's directory.
    outputs: Vec<String>,
}

fn hex_digest(h: Sha256) -> String {
    let mut out = String::with_capacity(64);
    for byte in h.finalize() {
        let _ = write!(out, "{byte:02x}");
    }
    out
}

fn state_is_current(state_path: &Path, signature: &str, overwrite: bool) -> bool {
    if overwrite {
        return false;
    }
    let Ok(text) = fs::read_to_string(state_path) else {
        return false;
    };
    let Ok(state) = serde_json::from_str::<StageState>(&text) else {
        return false;
    };
    let root = state_path.parent().unwrap_or_else(|| Path::new("."));
    state.signature == signature && state.outputs.iter().all(|o| root.join(o).exists())
}

fn write_state(state_path: &Path, signature: &str, outputs: Vec<String>) -> Result<()> {
    let state = StageState {
        version: crate::VERSION.to_string(),
        signature: signature.to_string(),
        outputs,
    };
    write_json(state_path, &state)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Sort key used by every per-case report.
fn sort_by_case_id<T, F: Fn(&T) -> &str>(items: &mut [T], key: F) {
    items.sort_by(|a, b| key(a).cmp(key(b)));
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CaseStatus {
    case_id: String,
    /// `"ok"` or `"skipped: <reason>"`.
    status: String,
}

// ---------------------------------------------------------------------------
// gen-phantom
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct GenPhantomReport<'a> {
    version: String,
    config: &'a PhantomConfig,
}

/// Generates a phantom dataset under `out_dir` and returns the manifest
/// path. An existing dataset is kept unless `overwrite` is set.
pub fn run_gen_phantom(cfg: &PhantomConfig, out_dir: &Path, opts: GlobalOpts) -> Result<PathBuf> {
    let mut cfg = cfg.clone();
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let existed = out_dir.join("manifest.csv").exists();
    let manifest = write_dataset(&cfg, out_dir, opts.overwrite)?;
    if existed && !opts.overwrite {
        println!("dataset already present at {}; nothing to do", out_dir.display());
    } else {
        let report = GenPhantomReport {
            version: crate::VERSION.to_string(),
            config: &cfg,
        };
        write_json(&out_dir.join("gen_phantom_report.json"), &report)?;
        println!("generated {} cases; manifest at {}", cfg.n_cases, manifest.display());
    }
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// preprocess
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct PreprocessReport<'a> {
    version: String,
    config: &'a PreprocessConfig,
    cases: Vec<CaseStatus>,
}

/// Reorients every case to LPS and resamples it onto the target grid
/// (trilinear for images, nearest for masks). Failed cases are logged and
/// skipped. Returns the output manifest path.
pub fn run_preprocess(
    manifest_path: &Path,
    out_dir: &Path,
    cfg: &PreprocessConfig,
    opts: GlobalOpts,
) -> Result<PathBuf> {
    cfg.validate()?;
    let manifest_path = &resolve_manifest_arg(manifest_path, CASE_MANIFEST_NAME);
    let manifest = CaseManifest::load(manifest_path)?;
    fs::create_dir_all(out_dir.join("preprocessed"))?;
    let out_manifest = out_dir.join("manifest.csv");

    let mut h = Sha256::new();
    h.update(serde_json::to_string(cfg)?.as_bytes());
    h.update(fs::read(manifest_path)?);
    for row in &manifest.rows {
        for p in [manifest.image_path(row), manifest.mask_path(row)] {
            match fs::read(&p) {
                Ok(bytes) => h.update(&bytes),
                Err(_) => h.update(b"<missing>"),
            }
        }
    }
    let signature = hex_digest(h);

    let state_path = out_dir.join(".preprocess.state.json");
    if state_is_current(&state_path, &signature, opts.overwrite) {
        println!(
            "preprocessed outputs in {} are up to date; nothing to do",
            out_dir.display()
        );
        return Ok(out_manifest);
    }

    let dims = (cfg.target_dims[0], cfg.target_dims[1], cfg.target_dims[2]);
    let results: Vec<(String, std::result::Result<CaseRow, String>)> = manifest
        .rows
        .par_iter()
        .map(|row| {
            let work = || -> Result<CaseRow> {
                let img = read_nifti_file(&manifest.image_path(row))?;
                let msk = read_nifti_file(&manifest.mask_path(row))?;
                let img_c = canonicalize(&img, dims, ResampleMode::Trilinear)?;
                let msk_c = canonicalize(&msk, dims, ResampleMode::Nearest)?;
                let image_rel = format!("preprocessed/{}_image.nii.gz", row.case_id);
                let mask_rel = format!("preprocessed/{}_mask.nii.gz", row.case_id);
                write_nifti_file(&out_dir.join(&image_rel), &img_c, Datatype::Float32)?;
                write_nifti_file(&out_dir.join(&mask_rel), &msk_c, Datatype::UInt8)?;
                Ok(CaseRow {
                    case_id: row.case_id.clone(),
                    image_path: image_rel,
                    mask_path: mask_rel,
                    label: row.label,
                    split: row.split,
                })
            };
            (row.case_id.clone(), work().map_err(|e| e.to_string()))
        })
        .collect();

    let mut rows = Vec::new();
    let mut statuses = Vec::new();
    for (case_id, res) in results {
        match res {
            Ok(row) => {
                statuses.push(CaseStatus {
                    case_id,
                    status: "ok".into(),
                });
                rows.push(row);
            }
            Err(reason) => {
                log::warn!("preprocess: skipping case {case_id}: {reason}");
                statuses.push(CaseStatus {
                    case_id,
                    status: format!("skipped: {reason}"),
                });
            }
        }
    }
    sort_by_case_id(&mut statuses, |s| &s.case_id);

    CaseManifest::save(&rows, &out_manifest)?;
    let report = PreprocessReport {
        version: crate::VERSION.to_string(),
        config: cfg,
        cases: statuses,
    };
    write_json(&out_dir.join("preprocess_report.json"), &report)?;

    let mut outputs: Vec<String> = vec!["manifest.csv".into(), "preprocess_report.json".into()];
    for row in &rows {
        outputs.push(row.image_path.clone());
        outputs.push(row.mask_path.clone());
    }
    write_state(&state_path, &signature, outputs)?;
    let skipped = manifest.rows.len() - rows.len();
    println!(
        "preprocessed {} of {} cases ({} skipped); manifest at {}",
        rows.len(),
        manifest.rows.len(),
        skipped,
        out_manifest.display()
    );
    Ok(out_manifest)
}

// ---------------------------------------------------------------------------
// extract
// ---------------------------------------------------------------------------

/// One stored slice with everything needed to rebuild it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SliceRecord {
    pub view: View,
    pub index: usize,
    pub score_mm: f64,
    pub spacing: [f64; 2],
    pub shape: [usize; 2],
    pub data: Vec<f32>,
}

/// Per-case slice bundle written by `extract` (one JSON file per case).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SliceBundle {
    pub version: String,
    pub case_id: String,
    pub label: u8,
    pub split: Split,
    pub strategy: SliceStrategy,
    /// Always in (axial, sagittal, coronal) order.
    pub views: Vec<SliceRecord>,
}

impl SliceBundle {
    fn from_triple(case: &CaseRow, strategy: SliceStrategy, triple: &ViewTriple) -> Self {
        let views = [&triple.axial, &triple.sagittal, &triple.coronal]
            .into_iter()
            .map(|sel| {
                let (h, w) = sel.slice.data.dim();
                SliceRecord {
                    view: sel.slice.view,
                    index: sel.index,
                    score_mm: sel.score_mm,
                    spacing: sel.slice.spacing,
                    shape: [h, w],
                    data: sel.slice.data.iter().copied().collect(),
                }
            })
            .collect();
        SliceBundle {
            version: crate::VERSION.to_string(),
            case_id: case.case_id.clone(),
            label: case.label,
            split: case.split,
            strategy,
            views,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Manifest(format!("cannot read slice bundle {}: {e}", path.display())))?;
        let bundle: SliceBundle = serde_json::from_str(&text)
            .map_err(|e| Error::Manifest(format!("slice bundle {}: {e}", path.display())))?;
        Ok(bundle)
    }

    /// Rebuilds the labeled training sample.
    pub fn to_sample(&self) -> Result<Sample> {
        if self.views.len() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "slice bundle for {} has {} views, expected 3",
                self.case_id,
                self.views.len()
            )));
        }
        let mut selected = Vec::with_capacity(3);
        for (record, want) in self.views.iter().zip(View::ALL) {
            if record.view != want {
                return Err(Error::ShapeMismatch(format!(
                    "slice bundle for {} has view {} where {} was expected",
                    self.case_id, record.view, want
                )));
            }
            let [h, w] = record.shape;
            if record.data.len() != h * w {
                return Err(Error::ShapeMismatch(format!(
                    "slice bundle for {}: {} values for shape {h}x{w}",
                    self.case_id,
                    record.data.len()
                )));
            }
            let data = ndarray::Array2::from_shape_vec((h, w), record.data.clone())
                .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
            selected.push(SelectedSlice {
                slice: Slice2D {
                    data,
                    view: record.view,
                    index: record.index,
                    spacing: record.spacing,
                },
                index: record.index,
                score_mm: record.score_mm,
            });
        }
        let coronal = selected.pop().expect("three views");
        let sagittal = selected.pop().expect("three views");
        let axial = selected.pop().expect("three views");
        Ok((
            ViewTriple {
                axial,
                sagittal,
                coronal,
            },
            self.label,
        ))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ViewIndex {
    view: View,
    index: usize,
    score_mm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ExtractCaseStatus {
    case_id: String,
    status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    views: Option<Vec<ViewIndex>>,
}

#[derive(Debug, Serialize)]
struct ExtractReport<'a> {
    version: String,
    config: &'a ExtractConfig,
    cases: Vec<ExtractCaseStatus>,
}

/// Selects the widest-tumor slice per view under the given strategy,
/// z-scores each slice, and writes one slice bundle per case plus a slice
/// manifest. Cases without tumor voxels are logged and skipped. Returns
/// the slice manifest path.
pub fn run_extract(
    manifest_path: &Path,
    out_dir: &Path,
    strategy: SliceStrategy,
    opts: GlobalOpts,
) -> Result<PathBuf> {
    let manifest_path = &resolve_manifest_arg(manifest_path, CASE_MANIFEST_NAME);
    let manifest = CaseManifest::load(manifest_path)?;
    fs::create_dir_all(out_dir.join("slices"))?;
    let out_manifest = out_dir.join("slices_manifest.csv");
    let cfg = ExtractConfig { strategy };

    let mut h = Sha256::new();
    h.update(serde_json::to_string(&cfg)?.as_bytes());
    h.update(fs::read(manifest_path)?);
    for row in &manifest.rows {
        for p in [manifest.image_path(row), manifest.mask_path(row)] {
            match fs::read(&p) {
                Ok(bytes) => h.update(&bytes),
                Err(_) => h.update(b"<missing>"),
            }
        }
    }
    let signature = hex_digest(h);
    let state_path = out_dir.join(".extract.state.json");
    if state_is_current(&state_path, &signature, opts.overwrite) {
        println!("extracted slices in {} are up to date; nothing to do", out_dir.display());
        return Ok(out_manifest);
    }

    let results: Vec<(String, std::result::Result<(SliceRow, Vec<ViewIndex>), String>)> = manifest
        .rows
        .par_iter()
        .map(|row| {
            let work = || -> Result<(SliceRow, Vec<ViewIndex>)> {
                let img = read_nifti_file(&manifest.image_path(row))?;
                let msk_vol = read_nifti_file(&manifest.mask_path(row))?;
                let mask = SegMask::from_volume(&msk_vol)?;
                let mut triple = select_multiview(&img, &mask, strategy)?;
                for sel in [&mut triple.axial, &mut triple.sagittal, &mut triple.coronal] {
                    sel.slice = zscore_normalize(&sel.slice);
                }
                let bundle = SliceBundle::from_triple(row, strategy, &triple);
                let rel = format!("slices/{}.json", row.case_id);
                write_json(&out_dir.join(&rel), &bundle)?;
                let views = bundle
                    .views
                    .iter()
                    .map(|r| ViewIndex {
                        view: r.view,
                        index: r.index,
                        score_mm: r.score_mm,
                    })
                    .collect();
                Ok((
                    SliceRow {
                        case_id: row.case_id.clone(),
                        slice_path: rel,
                        label: row.label,
                        split: row.split,
                    },
                    views,
                ))
            };
            (row.case_id.clone(), work().map_err(|e| e.to_string()))
        })
        .collect();

    let mut rows = Vec::new();
    let mut statuses = Vec::new();
    for (case_id, res) in results {
        match res {
            Ok((row, views)) => {
                statuses.push(ExtractCaseStatus {
                    case_id,
                    status: "ok".into(),
                    views: Some(views),
                });
                rows.push(row);
            }
            Err(reason) => {
                log::warn!("extract: skipping case {case_id}: {reason}");
                statuses.push(ExtractCaseStatus {
                    case_id,
                    status: format!("skipped: {reason}"),
                    views: None,
                });
            }
        }
    }
    sort_by_case_id(&mut statuses, |s| &s.case_id);

    SliceManifest::save(&rows, &out_manifest)?;
    let report = ExtractReport {
        version: crate::VERSION.to_string(),
        config: &cfg,
        cases: statuses,
    };
    write_json(&out_dir.join("extract_report.json"), &report)?;

    let mut outputs: Vec<String> = vec!["slices_manifest.csv".into(), "extract_report.json".into()];
    outputs.extend(rows.iter().map(|r| r.slice_path.clone()));
    write_state(&state_path, &signature, outputs)?;
    println!(
        "extracted {} of {} cases with the {} strategy; manifest at {}",
        rows.len(),
        manifest.rows.len(),
        strategy,
        out_manifest.display()
    );
    Ok(out_manifest)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct TrainSectionConfig<'a> {
    model: &'a ModelSpec,
    train: &'a TrainConfig,
    augment: Option<&'a AugmentConfig>,
}

#[derive(Debug, Serialize)]
struct TrainReport<'a> {
    version: String,
    config: TrainSectionConfig<'a>,
    history: &'a TrainHistory,
}

fn load_split_samples(manifest: &SliceManifest, split: Split) -> Result<Vec<Sample>> {
    manifest
        .split_rows(split)
        .into_iter()
        .map(|row| SliceBundle::load(&manifest.slice_path(row))?.to_sample())
        .collect()
}

/// Trains a model on the train/val splits of a slice manifest and writes
/// `model.json` (checkpoint) and `train_history.json` under `out_dir`.
/// Returns the checkpoint path.
pub fn run_train(
    slices_manifest: &Path,
    out_dir: &Path,
    model: &ModelSpec,
    train_cfg: &TrainConfig,
    augment: Option<&AugmentConfig>,
    opts: GlobalOpts,
) -> Result<PathBuf> {
    let mut train_cfg = train_cfg.clone();
    let mut augment = augment.cloned();
    if let Some(seed) = opts.seed {
        train_cfg.seed = seed;
        if let Some(a) = &mut augment {
            a.seed = seed;
        }
    }
    model.validate()?;
    train_cfg.validate()?;
    let slices_manifest = &resolve_manifest_arg(slices_manifest, SLICE_MANIFEST_NAME);
    let manifest = SliceManifest::load(slices_manifest)?;
    fs::create_dir_all(out_dir)?;
    let model_path = out_dir.join("model.json");

    let section = TrainSectionConfig {
        model,
        train: &train_cfg,
        augment: augment.as_ref(),
    };
    let mut h = Sha256::new();
    h.update(serde_json::to_string(&section)?.as_bytes());
    h.update(fs::read(slices_manifest)?);
    for row in &manifest.rows {
        match fs::read(manifest.slice_path(row)) {
            Ok(bytes) => h.update(&bytes),
            Err(_) => h.update(b"<missing>"),
        }
    }
    let signature = hex_digest(h);
    let state_path = out_dir.join(".train.state.json");
    if state_is_current(&state_path, &signature, opts.overwrite) {
        println!("model in {} is up to date; nothing to do", out_dir.display());
        return Ok(model_path);
    }

    let train_set = load_split_samples(&manifest, Split::Train)?;
    let val_set = load_split_samples(&manifest, Split::Val)?;
    if train_set.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if val_set.is_empty() {
        return Err(Error::EmptySplit("val"));
    }

    let (params, history) = train(&train_set, &val_set, model, &train_cfg, augment.as_ref())?;
    save_checkpoint(&model_path, &params, &train_cfg, None)?;
    let report = TrainReport {
        version: crate::VERSION.to_string(),
        config: TrainSectionConfig {
            model,
            train: &train_cfg,
            augment: augment.as_ref(),
        },
        history: &history,
    };
    write_json(&out_dir.join("train_history.json"), &report)?;
    write_state(
        &state_path,
        &signature,
        vec!["model.json".into(), "train_history.json".into()],
    )?;
    println!(
        "trained on {} cases ({} validation): best validation accuracy {:.4} at epoch {} of {}{}",
        train_set.len(),
        val_set.len(),
        history.best_val_accuracy,
        history.best_epoch,
        history.epochs.len(),
        if history.stopped_early { " (early stop)" } else { "" },
    );
    Ok(model_path)
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseScore {
    pub case_id: String,
    pub label: u8,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalMetadata {
    pub strategy: SliceStrategy,
    pub model: ModelSpec,
    pub train_seed: u64,
    pub checkpoint: String,
}

/// On-disk evaluation report: metrics plus per-case scores, sorted by
/// case id.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateReportFile {
    pub version: String,
    pub config: EvalConfig,
    pub metadata: EvalMetadata,
    pub metrics: EvalReport,
    pub cases: Vec<CaseScore>,
}

/// Scores the test split with a checkpoint and writes the evaluation
/// report to `out_path` (`evaluation.json` inside it if `out_path` is a
/// directory). Returns the report path.
pub fn run_evaluate(
    slices_manifest: &Path,
    checkpoint_path: &Path,
    out_path: &Path,
    eval_cfg: &EvalConfig,
    opts: GlobalOpts,
) -> Result<PathBuf> {
    let mut eval_cfg = eval_cfg.clone();
    if let Some(seed) = opts.seed {
        eval_cfg.seed = seed;
    }
    let slices_manifest = &resolve_manifest_arg(slices_manifest, SLICE_MANIFEST_NAME);
    let manifest = SliceManifest::load(slices_manifest)?;
    let out_path = &if out_path.is_dir() {
        out_path.join("evaluation.json")
    } else {
        out_path.to_path_buf()
    };
    if let Some(parent) = out_path.parent() {
        fs::create_dir_all(parent)?;
    }

    let mut h = Sha256::new();
    h.update(serde_json::to_string(&eval_cfg)?.as_bytes());
    h.update(fs::read(slices_manifest)?);
    h.update(fs::read(checkpoint_path).unwrap_or_else(|_| b"<missing>".to_vec()));
    for row in manifest.split_rows(Split::Test) {
        match fs::read(manifest.slice_path(row)) {
            Ok(bytes) => h.update(&bytes),
            Err(_) => h.update(b"<missing>"),
        }
    }
    let signature = hex_digest(h);
    let state_name = format!(
        ".{}.state.json",
        out_path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()
    );
    let state_path = out_path.with_file_name(state_name);
    if state_is_current(&state_path, &signature, opts.overwrite) {
        println!("evaluation report {} is up to date; nothing to do", out_path.display());
        return Ok(out_path.to_path_buf());
    }

    let rows = manifest.split_rows(Split::Test);
    if rows.is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    let bundles: Vec<SliceBundle> = rows
        .iter()
        .map(|row| SliceBundle::load(&manifest.slice_path(row)))
        .collect::<Result<_>>()?;
    let samples: Vec<Sample> = bundles.iter().map(|b| b.to_sample()).collect::<Result<_>>()?;
    let labels: Vec<u8> = samples.iter().map(|(_, l)| *l).collect();

    let (params, ckpt) = load_checkpoint(checkpoint_path)?;
    let scores = predict(&params, &samples)?;
    let metrics = evaluate(&scores, &labels, &eval_cfg)?;

    let cases: Vec<CaseScore> = bundles
        .iter()
        .zip(scores.iter())
        .map(|(b, &score)| CaseScore {
            case_id: b.case_id.clone(),
            label: b.label,
            score,
        })
        .collect();
    let report = EvaluateReportFile {
        version: crate::VERSION.to_string(),
        config: eval_cfg.clone(),
        metadata: EvalMetadata {
            strategy: bundles[0].strategy,
            model: ckpt.spec.clone(),
            train_seed: ckpt.seed,
            checkpoint: checkpoint_path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
        },
        metrics,
        cases,
    };
    write_json(out_path, &report)?;
    let out_name = out_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    write_state(&state_path, &signature, vec![out_name])?;
    println!(
        "evaluated {} test cases: AUC {:.4} (95% CI [{:.4}, {:.4}]); report at {}",
        report.cases.len(),
        report.metrics.auc,
        report.metrics.auc_ci[0],
        report.metrics.auc_ci[1],
        out_path.display()
    );
    Ok(out_path.to_path_buf())
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareRow {
    pub strategy: SliceStrategy,
    pub auc: f64,
    pub f1: f64,
    pub recall: f64,
    pub precision: f64,
    pub specificity: f64,
    pub ci: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub a: SliceStrategy,
    pub b: SliceStrategy,
    pub p_value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareSettings {
    pub compare: CompareConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareReportFile {
    pub version: String,
    pub config: CompareSettings,
    pub rows: Vec<CompareRow>,
    pub pairwise: Vec<PairwiseTest>,
}

/// Everything `compare` needs beyond the shared manifest.
pub struct CompareArgs<'a> {
    pub compare: &'a CompareConfig,
    pub model: &'a ModelSpec,
    pub train: &'a TrainConfig,
    pub augment: Option<&'a AugmentConfig>,
    pub eval: &'a EvalConfig,
}

/// Renders the strategy table with the published column layout.
fn render_table(rows: &[CompareRow], pairwise: &[PairwiseTest]) -> String {
    let mut t = String::new();
    t.push_str("Slice extraction method & AUC & F1 Score & Recall & 95% CI \\\\\n");
    for r in rows {
        let _ = writeln!(
            t,
            "{} & {:.3} & {:.3} & {:.3} & [{:.3}, {:.3}] \\\\",
            r.strategy, r.auc, r.f1, r.recall, r.ci[0], r.ci[1]
        );
    }
    t.push('\n');
    t.push_str("Pairwise permutation tests (AUC difference):\n");
    if pairwise.is_empty() {
        t.push_str("(fewer than two strategies completed)\n");
    }
    for p in pairwise {
        let _ = writeln!(t, "{} vs {}: p = {:.4}", p.a, p.b, p.p_value);
    }
    t
}

/// Runs extract → train → evaluate once per strategy (shared seed), then
/// pairwise permutation tests between every completed pair. A failing
/// strategy is logged and excluded without aborting the others. Writes
/// `compare_report.json` and `compare_table.txt` under `out_dir` and
/// returns the JSON report path.
pub fn run_compare(
    preprocessed_manifest: &Path,
    out_dir: &Path,
    args: &CompareArgs,
    opts: GlobalOpts,
) -> Result<PathBuf> {
    args.compare.validate()?;
    let mut eval_cfg = args.eval.clone();
    if let Some(seed) = opts.seed {
        eval_cfg.seed = seed;
    }
    fs::create_dir_all(out_dir)?;

    let mut completed: Vec<(SliceStrategy, EvaluateReportFile)> = Vec::new();
    for &strategy in &args.compare.strategies {
        let sdir = out_dir.join(strategy.name());
        let attempt = || -> Result<EvaluateReportFile> {
            let slices = run_extract(preprocessed_manifest, &sdir, strategy, opts)?;
            let model_path = run_train(&slices, &sdir, args.model, args.train, args.augment, opts)?;
            let report_path = sdir.join("evaluation.json");
            run_evaluate(&slices, &model_path, &report_path, &eval_cfg, opts)?;
            let text = fs::read_to_string(&report_path)?;
            Ok(serde_json::from_str(&text)?)
        };
        match attempt() {
            Ok(report) => completed.push((strategy, report)),
            Err(e) => log::warn!("compare: strategy {strategy} failed and is excluded: {e}"),
        }
    }
    if completed.is_empty() {
        return Err(Error::InvalidConfig("every comparison strategy failed".into()));
    }

    let rows: Vec<CompareRow> = completed
        .iter()
        .map(|(strategy, rep)| CompareRow {
            strategy: *strategy,
            auc: rep.metrics.auc,
            f1: rep.metrics.f1,
            recall: rep.metrics.recall,
            precision: rep.metrics.precision,
            specificity: rep.metrics.specificity,
            ci: rep.metrics.auc_ci,
        })
        .collect();

    // Pairwise tests over the cases every pair has in common.
    let mut pairwise = Vec::new();
    for i in 0..completed.len() {
        for j in (i + 1)..completed.len() {
            let (sa, ra) = &completed[i];
            let (sb, rb) = &completed[j];
            let by_id: std::collections::HashMap<&str, &CaseScore> =
                rb.cases.iter().map(|c| (c.case_id.as_str(), c)).collect();
            let mut scores_a = Vec::new();
            let mut scores_b = Vec::new();
            let mut labels = Vec::new();
            for ca in &ra.cases {
                if let Some(cb) = by_id.get(ca.case_id.as_str()) {
                    scores_a.push(ca.score);
                    scores_b.push(cb.score);
                    labels.push(ca.label);
                }
            }
            let p_value =
                permutation_test_auc(&scores_a, &scores_b, &labels, args.compare.n_perm, eval_cfg.seed)?;
            pairwise.push(PairwiseTest {
                a: *sa,
                b: *sb,
                p_value,
            });
        }
    }

    let report = CompareReportFile {
        version: crate::VERSION.to_string(),
        config: CompareSettings {
            compare: args.compare.clone(),
            eval: eval_cfg,
        },
        rows,
        pairwise,
    };
    let table = render_table(&report.rows, &report.pairwise);
    fs::write(out_dir.join("compare_table.txt"), &table)?;
    let report_path = out_dir.join("compare_report.json");
    write_json(&report_path, &report)?;
    print!("{table}");
    println!("comparison report at {}", report_path.display());
    Ok(report_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BranchSpec;

    fn quiet_logger() {
        let _ = env_logger::builder().is_test(true).try_init();
    }

    fn tiny_phantom_cfg() -> PhantomConfig {
        PhantomConfig {
            n_cases: 12,
            dims: [32, 32, 24],
            class_effect: 12.0,
            noise_sigma: 2.0,
            field_amplitude: 4.0,
            seed: 21,
            ..PhantomConfig::default()
        }
    }

    fn tiny_model() -> ModelSpec {
        ModelSpec {
            branch: BranchSpec {
                conv_filters: vec![4],
                feature_dim: 8,
            },
            hidden: [8, 4],
        }
    }

    fn tiny_train() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.02,
            batch_size: 4,
            patience: 10,
            max_epochs: 10,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn full_pipeline_runs_end_to_end_on_a_tiny_phantom() {
        quiet_logger();
        let dir = tempfile::tempdir().unwrap();
        let opts = GlobalOpts::default();
        let data = dir.path().join("data");
        let manifest = run_gen_phantom(&tiny_phantom_cfg(), &data, opts).unwrap();

        let pre = dir.path().join("pre");
        let pre_cfg = PreprocessConfig {
            target_dims: [32, 32, 24],
        };
        let pre_manifest = run_preprocess(&manifest, &pre, &pre_cfg, opts).unwrap();

        let ext = dir.path().join("ext");
        let slices = run_extract(&pre_manifest, &ext, SliceStrategy::Feret, opts).unwrap();

        let model_path = run_train(&slices, &ext, &tiny_model(), &tiny_train(), None, opts).unwrap();
        assert!(model_path.exists());

        let eval_cfg = EvalConfig {
            n_boot: 100,
            ..EvalConfig::default()
        };
        let report_path = run_evaluate(&slices, &model_path, &ext.join("evaluation.json"), &eval_cfg, opts).unwrap();
        let report: EvaluateReportFile =
            serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
        assert_eq!(report.metadata.strategy, SliceStrategy::Feret);
        assert!(!report.cases.is_empty());
        assert!(report.metrics.auc.is_finite());
        // Cases are sorted by id.
        let ids: Vec<&str> = report.cases.iter().map(|c| c.case_id.as_str()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
    }

    #[test]
    fn reruns_are_no_ops_until_overwrite() {
        quiet_logger();
        let dir = tempfile::tempdir().unwrap();
        let opts = GlobalOpts::default();
        let data = dir.path().join("data");
        let manifest = run_gen_phantom(&tiny_phantom_cfg(), &data, opts).unwrap();
        let pre = dir.path().join("pre");
        let pre_cfg = PreprocessConfig {
            target_dims: [32, 32, 24],
        };
        let pre_manifest = run_preprocess(&manifest, &pre, &pre_cfg, opts).unwrap();
        let first = fs::read(&pre_manifest).unwrap();
        let stamp = fs::metadata(pre.join("preprocessed/case_0000_image.nii.gz"))
            .unwrap()
            .modified()
            .unwrap();

        // Unchanged inputs: nothing is rewritten.
        run_preprocess(&manifest, &pre, &pre_cfg, opts).unwrap();
        let stamp2 = fs::metadata(pre.join("preprocessed/case_0000_image.nii.gz"))
            .unwrap()
            .modified()
            .unwrap();
        assert_eq!(stamp, stamp2);
        assert_eq!(fs::read(&pre_manifest).unwrap(), first);

        // Overwrite forces regeneration with identical content.
        let force = GlobalOpts {
            overwrite: true,
            ..opts
        };
        run_preprocess(&manifest, &pre, &pre_cfg, force).unwrap();
        assert_eq!(fs::read(&pre_manifest).unwrap(), first);
    }

    #[test]
    fn per_case_failures_skip_but_do_not_abort() {
        quiet_logger();
        let dir = tempfile::tempdir().unwrap();
        let opts = GlobalOpts::default();
        let data = dir.path().join("data");
        let manifest = run_gen_phantom(&tiny_phantom_cfg(), &data, opts).unwrap();
        // Corrupt one input volume.
        fs::write(data.join("images/case_0002_image.nii.gz"), b"not a volume").unwrap();

        let pre = dir.path().join("pre");
        let pre_cfg = PreprocessConfig {
            target_dims: [32, 32, 24],
        };
        let pre_manifest = run_preprocess(&manifest, &pre, &pre_cfg, opts).unwrap();
        let m = CaseManifest::load(&pre_manifest).unwrap();
        assert_eq!(m.rows.len(), 11);
        assert!(m.rows.iter().all(|r| r.case_id != "case_0002"));
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(pre.join("preprocess_report.json")).unwrap()).unwrap();
        let cases = report["cases"].as_array().unwrap();
        let bad = cases.iter().find(|c| c["case_id"] == "case_0002").unwrap();
        assert!(bad["status"].as_str().unwrap().starts_with("skipped:"));
    }

    #[test]
    fn train_rejects_missing_splits() {
        quiet_logger();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("slices_manifest.csv");
        // Only a train split: validation is missing.
        SliceManifest::save(
            &[SliceRow {
                case_id: "a".into(),
                slice_path: "slices/a.json".into(),
                label: 1,
                split: Split::Train,
            }],
            &path,
        )
        .unwrap();
        let err = run_train(
            &path,
            dir.path(),
            &tiny_model(),
            &tiny_train(),
            None,
            GlobalOpts::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::EmptySplit("val") | Error::Manifest(_)));
    }

    #[test]
    fn compare_emits_the_published_table_columns() {
        quiet_logger();
        let rows = vec![CompareRow {
            strategy: SliceStrategy::Feret,
            auc: 0.9,
            f1: 0.8,
            recall: 0.7,
            precision: 0.75,
            specificity: 0.85,
            ci: [0.6, 1.0],
        }];
        let pairwise = vec![PairwiseTest {
            a: SliceStrategy::Feret,
            b: SliceStrategy::Martin,
            p_value: 0.5,
        }];
        let table = render_table(&rows, &pairwise);
        assert!(table.starts_with("Slice extraction method & AUC & F1 Score & Recall & 95% CI \\\\\n"));
        assert!(table.contains("feret & 0.900 & 0.800 & 0.700 & [0.600, 1.000] \\\\"));
        assert!(table.contains("feret vs martin: p = 0.5000"));
    }
}
