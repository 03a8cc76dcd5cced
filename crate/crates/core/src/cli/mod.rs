//! The `chatternet` command line.
//!
//! ```text
//! chatternet ingest   --news F --subs F --comments F --out DIR
//! chatternet synth    [--config FILE] --out DIR
//! chatternet train    [--config FILE | --manifest FILE] --data DIR --out DIR [--variant V] [--m M] [--seed S]
//! chatternet evaluate --run DIR --data DIR [--delta-pred DAYS] [--per-subreddit]
//! chatternet report   --runs DIR... --out DIR
//! ```
//!
//! Flags override the matching keys of the TOML config. `--data` falls back
//! to `$CHATTERNET_DATA`. Exit status is 0 on success, 2 for usage and
//! configuration errors, 3 for data errors and 4 for numerical failures.

mod manifest;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::Store;
use crate::error::{Error, Result};
use crate::eval::{comparison_table, read_rows, scatter_csv, write_rows, ReportRow, Sweep};
use crate::model::{InfluenceState, Variant};
use crate::pipeline::{self, RunConfig};
use crate::synth::{describe, generate, SynthConfig};
use crate::train::{CheckpointLedger, EpochSummary, TrainObserver};

pub use manifest::{fingerprint_store, sha256_file, RunManifest, MANIFEST_FILE};

pub const DATA_ENV: &str = "CHATTERNET_DATA";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SCATTER_FILE: &str = "scatter.csv";

#[derive(Debug, Parser)]
#[command(name = "chatternet", version, about = "Chatter-intensity prediction from news and submission streams")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate and sort raw JSONL dumps into a store directory.
    Ingest(IngestArgs),
    /// Train one variant and write checkpoints, ledger and manifest.
    Train(TrainArgs),
    /// Score the test window with the run's checkpoint ensemble.
    Evaluate(EvaluateArgs),
    /// Generate synthetic news, submission and comment streams.
    Synth(SynthArgs),
    /// Collect the metrics of several runs into comparison tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub news: PathBuf,
    #[arg(long)]
    pub subs: PathBuf,
    #[arg(long)]
    pub comments: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Interval length in seconds.
    #[arg(long, default_value_t = 60)]
    pub delta_obs: i64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, conflicts_with = "manifest")]
    pub config: Option<PathBuf>,
    /// Repeat a run from its manifest; the data must match its fingerprints.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, env = DATA_ENV)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, conflicts_with = "manifest")]
    pub variant: Option<Variant>,
    #[arg(long, conflicts_with = "manifest")]
    pub m: Option<usize>,
    #[arg(long, conflicts_with = "manifest")]
    pub seed: Option<u64>,
    #[arg(long, conflicts_with = "manifest")]
    pub epochs: Option<usize>,
    #[arg(long, conflicts_with = "manifest")]
    pub delta_pred: Option<f64>,
    /// Defaults to the name of the output directory.
    #[arg(long, conflicts_with = "manifest")]
    pub run_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, env = DATA_ENV)]
    pub data: PathBuf,
    /// Prediction window in days; defaults to the training value.
    #[arg(long)]
    pub delta_pred: Option<f64>,
    #[arg(long)]
    pub per_subreddit: bool,
    /// Defaults to `metrics.csv` inside the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SweepArg {
    None,
    M,
    Days,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Spread the table over observation bins or prediction days.
    #[arg(long, value_enum, default_value_t = SweepArg::None)]
    pub sweep: SweepArg,
}

struct LogProgress;

impl TrainObserver for LogProgress {
    fn epoch_start(&mut self, epoch: usize, _state: &InfluenceState) {
        log::debug!("epoch {epoch} starting");
    }

    fn epoch_end(&mut self, s: &EpochSummary, ledger: &CheckpointLedger) {
        log::info!(
            "epoch {}: train {:.5} val {:.5} ({} updates, {:.1}s, ledger {}/{})",
            s.epoch,
            s.train_loss,
            s.val_loss,
            s.updates,
            s.wall_time_s,
            ledger.len(),
            ledger.capacity
        );
    }
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let store = Store::ingest(&a.news, &a.subs, &a.comments, a.delta_obs)?;
    store.save(&a.out)?;
    let s = &store.stats;
    println!(
        "{}: {} news, {} submissions, {} comments, {} subreddits, {} active intervals",
        a.out.display(),
        s.news.records,
        s.submissions.records,
        s.comments.records,
        s.subreddits.len(),
        s.intervals
    );
    Ok(())
}

/// The config file (or defaults) with command-line overrides applied.
pub fn resolve_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = a.variant {
        cfg.model.variant = v;
    }
    if let Some(m) = a.m {
        cfg.model.m = m;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(d) = a.delta_pred {
        cfg.data.delta_pred_days = d;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dir_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into())
}

fn train(a: &TrainArgs) -> Result<()> {
    let manifest = match &a.manifest {
        Some(path) => {
            let old = RunManifest::load(path)?;
            old.config.validate()?;
            old.check_data(&a.data)?;
            RunManifest::new(old.run_id, old.config, &a.data)?
        }
        None => {
            let cfg = resolve_config(a)?;
            let run_id = a.run_id.clone().unwrap_or_else(|| dir_name(&a.out));
            RunManifest::new(run_id, cfg, &a.data)?
        }
    };
    let store = Store::load(&a.data)?;
    manifest.write_new(&a.out)?;
    let cfg = &manifest.config;
    log::info!(
        "training {} (m = {}) for {} epochs into {}",
        cfg.model.variant,
        cfg.model.m,
        cfg.train.epochs,
        a.out.display()
    );
    let run = pipeline::train(&store, cfg, &a.out, &mut LogProgress)?;
    let best = run
        .outcome
        .ledger
        .best()
        .ok_or_else(|| Error::Numerical("no checkpoint was admitted".into()))?;
    println!(
        "{}: {} epochs, best validation loss {:.5} at epoch {}",
        manifest.run_id,
        run.outcome.epochs.len(),
        best.val_loss,
        best.epoch
    );
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let store = Store::load(&a.data)?;
    let mut ev = pipeline::evaluate(&a.run, &store, a.delta_pred, a.per_subreddit)?;
    let manifest = a.run.join(MANIFEST_FILE);
    if manifest.exists() {
        ev.run_id = RunManifest::load(&manifest)?.run_id;
    }
    let out = a.out.clone().unwrap_or_else(|| a.run.join(METRICS_FILE));
    let rows = ev.rows();
    write_rows(&out, &rows)?;
    let scatter = out.with_file_name(SCATTER_FILE);
    fs::write(&scatter, scatter_csv(&ev.records)).map_err(|e| Error::io(&scatter, e))?;
    let g = &ev.report.global;
    let show = |v: Option<f64>| v.map_or_else(|| "undefined".into(), |v| format!("{v:.4}"));
    println!(
        "{} ({} test submissions): MAPE {:.4} tau {} rho {} step-tau {} -> {}",
        ev.run_id,
        g.n,
        g.mape,
        show(g.kendall_tau),
        show(g.spearman_rho),
        show(g.stepwise_tau),
        out.display()
    );
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<SynthConfig>(&text).map_err(|e| Error::Config(format!("invalid synthetic config: {e}")))?
        }
        None => SynthConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let g = generate(&cfg)?;
    g.write(&a.out)?;
    let s = describe(&g);
    let path = a.out.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&s)? + "\n").map_err(|e| Error::io(&path, e))?;
    println!(
        "{}: {} news, {} submissions, {} comments",
        a.out.display(),
        s.news,
        s.submissions,
        s.comments
    );
    Ok(())
}

fn metrics_files(run: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(run)
        .map_err(|e| Error::io(run, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            name.starts_with("metrics") && name.ends_with(".csv")
        })
        .collect();
    files.sort();
    Ok(files)
}

fn report(a: &ReportArgs) -> Result<()> {
    let mut rows: Vec<ReportRow> = Vec::new();
    let mut runs = 0;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    for run in &a.runs {
        let files = metrics_files(run)?;
        if files.is_empty() {
            log::warn!("{} has no metrics files", run.display());
            continue;
        }
        runs += 1;
        for f in files {
            rows.extend(read_rows(&f)?);
        }
        let scatter = run.join(SCATTER_FILE);
        if scatter.exists() {
            let to = a.out.join(format!("scatter_{}.csv", dir_name(run)));
            fs::copy(&scatter, &to).map_err(|e| Error::io(&to, e))?;
        }
    }
    if runs == 0 {
        return Err(Error::Data("no evaluated runs found".into()));
    }
    let sweep = match a.sweep {
        SweepArg::None => Sweep::None,
        SweepArg::M => Sweep::ObservationBins,
        SweepArg::Days => Sweep::PredictionDays,
    };
    write_rows(&a.out.join("rows.csv"), &rows)?;
    let table = comparison_table(&rows, sweep);
    let path = a.out.join("comparison.csv");
    fs::write(&path, &table).map_err(|e| Error::io(&path, e))?;
    print!("{table}");
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Synth(a) => synth(a),
        Command::Report(a) => report(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
