//! Command-line front end for the multi-view MRI pipeline.
//!
//! Every stage reads and writes plain files (NIfTI volumes, CSV manifests,
//! JSON reports), so stages can be re-run, inspected, and chained freely.
//! Re-running a stage whose inputs and configuration are unchanged is a
//! no-op unless `--overwrite` is given.
//!
//! Exit code 0 means the run completed (individual cases may have been
//! skipped with a logged warning); exit code 2 means the command failed.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use multiview_mri::pipeline::{
    run_compare, run_evaluate, run_extract, run_gen_phantom, run_preprocess, run_train,
    CompareArgs, GlobalOpts, PipelineConfig,
};
use multiview_mri::SliceStrategy;

#[derive(Parser)]
#[command(
    name = "mvmri",
    version,
    about = "Multi-view MRI slice selection and binary classification pipeline",
    propagate_version = true
)]
struct Cli {
    /// Override every per-stage random seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Worker threads for per-case parallelism (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// Regenerate outputs even when inputs and configuration are unchanged.
    #[arg(long, global = true)]
    overwrite: bool,

    /// JSON configuration file; omitted sections use built-in defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled phantom dataset with paired masks.
    GenPhantom {
        /// Output dataset directory (images/, masks/, manifest.csv).
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Reorient every case to LPS and resample it onto the target grid.
    Preprocess {
        /// Case manifest CSV, or the directory containing manifest.csv.
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        /// Output directory for resampled volumes and the new manifest.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Select the widest-tumor slice per view and write slice bundles.
    Extract {
        /// Preprocessed case manifest CSV, or its directory.
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        /// Output directory for slice bundles and the slice manifest.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Slice-selection strategy: feret, martin, or area.
        #[arg(long, value_name = "NAME")]
        strategy: Option<String>,
    },
    /// Train the three-branch classifier on extracted slices.
    Train {
        /// Slice manifest produced by `extract`, or its directory.
        #[arg(long, value_name = "PATH")]
        slices: PathBuf,
        /// Output directory for the model checkpoint and training history.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Score the test split with a trained model and report metrics.
    Evaluate {
        /// Slice manifest produced by `extract`, or its directory.
        #[arg(long, value_name = "PATH")]
        slices: PathBuf,
        /// Model checkpoint produced by `train`.
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Output report path (JSON), or a directory for evaluation.json.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Run extract, train, and evaluate once per strategy and compare them.
    Compare {
        /// Preprocessed case manifest shared by all strategies, or its directory.
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        /// Output directory; each strategy gets a subdirectory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> multiview_mri::Result<()> {
    let cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let opts = GlobalOpts {
        seed: cli.seed,
        overwrite: cli.overwrite,
    };

    match cli.command {
        Command::GenPhantom { out } => {
            run_gen_phantom(&cfg.phantom, &out, opts)?;
        }
        Command::Preprocess { manifest, out } => {
            run_preprocess(&manifest, &out, &cfg.preprocess, opts)?;
        }
        Command::Extract {
            manifest,
            out,
            strategy,
        } => {
            let strategy = match strategy {
                Some(name) => name.parse::<SliceStrategy>()?,
                None => cfg.extract.strategy,
            };
            run_extract(&manifest, &out, strategy, opts)?;
        }
        Command::Train { slices, out } => {
            run_train(&slices, &out, &cfg.model, &cfg.train, cfg.augment.as_ref(), opts)?;
        }
        Command::Evaluate { slices, model, out } => {
            run_evaluate(&slices, &model, &out, &cfg.eval, opts)?;
        }
        Command::Compare { manifest, out } => {
            let args = CompareArgs {
                compare: &cfg.compare,
                model: &cfg.model,
                train: &cfg.train,
                augment: cfg.augment.as_ref(),
                eval: &cfg.eval,
            };
            run_compare(&manifest, &out, &args, opts)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: cannot configure {jobs} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
