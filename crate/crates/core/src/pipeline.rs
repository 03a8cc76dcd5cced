//! End-to-end runs: store → vocabulary and embeddings → training →
//! ensemble evaluation on the test window.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{vocabulary_for, Dataset, Labels, Splits, Store, TargetSpec};
use crate::error::{Error, Result};
use crate::eval::{report, EvalRecord, MetricReport, ReportRow};
use crate::model::{ChatterNet, ModelConfig};
use crate::text::{pretrain_embeddings, SkipGram, SkipGramConfig, TokenSequence, Vocabulary, PAD_ID};
use crate::train::{ensemble_predict, train_run, CheckpointLedger, Scored, StreamData, TrainConfig, TrainObserver, TrainOutcome};

pub const RUN_FILE: &str = "run.json";
pub const VOCAB_FILE: &str = "vocab.tsv";

pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub delta_pred_days: f64,
    pub train_fraction: f64,
    pub validation_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            delta_pred_days: 30.0,
            train_fraction: 0.6,
            validation_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextConfig {
    pub max_df: f64,
    pub min_df: u64,
    /// Initialize word vectors with skip-gram instead of at random.
    pub pretrain: bool,
    /// `dim` is taken from the model's `word_dim`.
    pub skipgram: SkipGramConfig,
}

impl Default for TextConfig {
    fn default() -> Self {
        Self {
            max_df: 0.8,
            min_df: 5,
            pretrain: true,
            skipgram: SkipGramConfig {
                iterations: 5,
                ..SkipGramConfig::default()
            },
        }
    }
}

/// Everything a training run depends on besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub text: TextConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

pub fn days_to_seconds(days: f64) -> Result<i64> {
    if !(days > 0.0 && days.is_finite()) {
        return Err(Error::Config(format!("prediction window must be positive, got {days} days")));
    }
    Ok((days * SECONDS_PER_DAY).round() as i64)
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// Checks everything that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        days_to_seconds(self.data.delta_pred_days)?;
        if self.text.pretrain && (self.text.skipgram.window == 0 || self.text.skipgram.iterations == 0) {
            return Err(Error::Config("skip-gram window and iterations must be positive".into()));
        }
        let probe = ModelConfig {
            vocab_size: self.model.vocab_size.max(1),
            subreddit_count: self.model.subreddit_count.max(1),
            ..self.model.clone()
        };
        probe.validate()
    }
}

/// Encoded streams and labels for one run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub splits: Splits,
    pub vocab: Vocabulary,
    pub dataset: Dataset,
    pub labels: Labels,
}

impl Prepared {
    pub fn data(&self) -> StreamData<'_> {
        StreamData {
            dataset: &self.dataset,
            labels: &self.labels,
        }
    }
}

/// Splits the store and builds the vocabulary from the training window.
pub fn prepare(store: &Store, cfg: &RunConfig) -> Result<Prepared> {
    let splits = Splits::by_fraction(
        &store.submissions,
        &store.clock(),
        cfg.data.train_fraction,
        cfg.data.validation_fraction,
    )?;
    let vocab = vocabulary_for(store, splits.train, cfg.text.max_df, cfg.text.min_df)?;
    prepare_with(store, cfg, splits, vocab, cfg.data.delta_pred_days)
}

/// Encodes the store with a fixed split and vocabulary.
pub fn prepare_with(
    store: &Store,
    cfg: &RunConfig,
    splits: Splits,
    vocab: Vocabulary,
    delta_pred_days: f64,
) -> Result<Prepared> {
    let dataset = Dataset::build(
        store,
        &vocab,
        &store.stats.subreddits,
        cfg.model.submission_max_len,
        cfg.model.news_max_len,
    )?;
    let labels = Labels::build(
        &dataset,
        TargetSpec {
            m: cfg.model.m,
            delta_obs: store.stats.delta_obs,
            delta_pred: days_to_seconds(delta_pred_days)?,
        },
    )?;
    Ok(Prepared {
        splits,
        vocab,
        dataset,
        labels,
    })
}

/// The model configuration with data-dependent sizes filled in.
pub fn model_config(cfg: &RunConfig, prepared: &Prepared) -> ModelConfig {
    ModelConfig {
        vocab_size: prepared.vocab.len(),
        subreddit_count: prepared.dataset.subreddits.len().max(1),
        ..cfg.model.clone()
    }
}

/// Seeded initialization, with skip-gram word vectors trained on the
/// texts of the training window when enabled.
pub fn init_model(cfg: &RunConfig, prepared: &Prepared) -> Result<ChatterNet> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = ChatterNet::new(model_config(cfg, prepared), &mut rng)?;
    if cfg.text.pretrain {
        let window = prepared.splits.train;
        let ds = &prepared.dataset;
        let docs: Vec<_> = ds
            .news
            .iter()
            .filter(|n| window.contains(n.timestamp))
            .map(|n| n.tokens.clone())
            .chain(ds.submissions.iter().filter(|s| window.contains(s.timestamp)).map(|s| s.tokens.clone()))
            .map(|ids| {
                let true_length = ids.iter().rposition(|&t| t != PAD_ID).map_or(0, |p| p + 1);
                TokenSequence { ids, true_length }
            })
            .collect();
        let sg = SkipGramConfig {
            dim: net.config.word_dim,
            seed: cfg.seed,
            ..cfg.text.skipgram
        };
        let m = pretrain_embeddings(&docs, &prepared.vocab, &SkipGram { config: sg }, &sg)?;
        net.set_word_embeddings(&m)?;
    }
    Ok(net)
}

/// What a run directory records about how it was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub config: RunConfig,
    pub splits: Splits,
    pub subreddits: Vec<String>,
}

impl RunInfo {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(RUN_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub prepared: Prepared,
    pub outcome: TrainOutcome,
}

/// Prepares the data, writes the run description, and trains.
pub fn train(store: &Store, cfg: &RunConfig, run_dir: &Path, observer: &mut dyn TrainObserver) -> Result<TrainedRun> {
    cfg.validate()?;
    let prepared = prepare(store, cfg)?;
    if prepared.dataset.submission_count(prepared.splits.validation) == 0 {
        return Err(Error::Data("the validation window holds no submissions".into()));
    }
    let mut net = init_model(cfg, &prepared)?;
    fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    prepared.vocab.save(&run_dir.join(VOCAB_FILE))?;
    let info = RunInfo {
        config: cfg.clone(),
        splits: prepared.splits,
        subreddits: prepared.dataset.subreddits.clone(),
    };
    let path = run_dir.join(RUN_FILE);
    fs::write(&path, serde_json::to_string_pretty(&info)? + "\n").map_err(|e| Error::io(&path, e))?;
    let outcome = train_run(
        &mut net,
        prepared.data(),
        prepared.splits.train,
        prepared.splits.validation,
        &cfg.train,
        run_dir,
        observer,
    )?;
    Ok(TrainedRun { prepared, outcome })
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub run_id: String,
    pub info: RunInfo,
    pub delta_pred_days: f64,
    pub scored: Vec<Scored>,
    pub records: Vec<EvalRecord>,
    pub report: MetricReport,
}

impl Evaluation {
    pub fn rows(&self) -> Vec<ReportRow> {
        self.report.rows(
            &self.run_id,
            self.info.config.model.variant.name(),
            self.info.config.model.m,
            self.delta_pred_days,
        )
    }
}

/// Averages every ledger checkpoint of a run over the test window.
pub fn evaluate(run_dir: &Path, store: &Store, delta_pred_days: Option<f64>, per_subreddit: bool) -> Result<Evaluation> {
    let info = RunInfo::load(run_dir)?;
    if info.subreddits != store.stats.subreddits {
        return Err(Error::Data("the store's subreddits differ from those the run was trained on".into()));
    }
    let ledger = CheckpointLedger::load(run_dir)?;
    if ledger.is_empty() {
        return Err(Error::Data(format!("{} has no checkpoints", run_dir.display())));
    }
    let vocab = Vocabulary::load(&run_dir.join(VOCAB_FILE))?;
    let days = delta_pred_days.unwrap_or(info.config.data.delta_pred_days);
    let prepared = prepare_with(store, &info.config, info.splits, vocab, days)?;
    let scored = ensemble_predict(
        &ledger,
        run_dir,
        prepared.data(),
        info.splits.test,
        info.config.train.warmup_intervals,
    )?;
    if scored.is_empty() {
        return Err(Error::Data("no test submissions after the warm-up intervals".into()));
    }
    let records: Vec<EvalRecord> = scored
        .iter()
        .map(|s| EvalRecord {
            subreddit: prepared.dataset.subreddits[prepared.dataset.submissions[s.index].subreddit].clone(),
            y: s.y,
            y_hat: s.prediction.y_hat,
            count: s.count,
        })
        .collect();
    let report = report(&records, per_subreddit, info.config.train.epsilon)?;
    let run_id = run_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    Ok(Evaluation {
        run_id,
        info,
        delta_pred_days: days,
        scored,
        records,
        report,
    })
}
