use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use chatternet::data::Store;
use chatternet::eval::Metrics;
use chatternet::model::{ModelConfig, Variant};
use chatternet::pipeline::{self, DataConfig, RunConfig, TextConfig};
use chatternet::synth::{generate, SynthConfig};
use chatternet::text::SkipGramConfig;
use chatternet::train::{CheckpointLedger, EpochSummary, TrainConfig, TrainObserver};

use crate::Outcome;

const EPOCHS: usize = 25;

pub fn synth_config() -> SynthConfig {
    SynthConfig {
        seed: 2024,
        beta_exo: 5.0,
        base_mu: vec![40.0],
        burst_count: 150,
        burst_duration: 1200,
        half_life: 600.0,
        ..SynthConfig::default()
    }
}

fn corpus() -> &'static Store {
    static STORE: OnceLock<Store> = OnceLock::new();
    STORE.get_or_init(|| {
        let g = generate(&synth_config()).expect("synthetic corpus");
        Store::from_streams(g.news, g.submissions, g.comments, 60, [0; 3]).expect("store")
    })
}

pub fn run_config(variant: Variant, m: usize) -> RunConfig {
    RunConfig {
        seed: 11,
        data: DataConfig {
            delta_pred_days: 1.0,
            ..DataConfig::default()
        },
        text: TextConfig {
            skipgram: SkipGramConfig {
                window: 5,
                iterations: 3,
                ..SkipGramConfig::default()
            },
            ..TextConfig::default()
        },
        model: ModelConfig {
            word_dim: 16,
            subreddit_dim: 4,
            branch_kernels: vec![1, 3],
            branch_filters: vec![16, 8],
            tec_tail_filters: vec![8, 1],
            gru_hidden: 16,
            lstm_hidden: 8,
            submission_max_len: 12,
            news_max_len: 12,
            m,
            variant,
            ..ModelConfig::default()
        },
        train: TrainConfig {
            learning_rate: 1e-3,
            epochs: std::env::var("ACCEPTANCE_EPOCHS")
                .ok()
                .and_then(|v| v.parse().ok())
                .unwrap_or(EPOCHS),
            ..TrainConfig::default()
        },
    }
}

struct Progress(String);

impl TrainObserver for Progress {
    fn epoch_end(&mut self, s: &EpochSummary, _: &CheckpointLedger) {
        eprintln!(
            "    [{}] epoch {:2}: train {:.4} val {:.4} ({:.1}s)",
            self.0, s.epoch, s.train_loss, s.val_loss, s.wall_time_s
        );
    }
}

/// Test-window metrics of one trained configuration, memoized.
fn metrics(variant: Variant, m: usize) -> Result<Metrics, String> {
    static RUNS: OnceLock<Mutex<HashMap<(Variant, usize), Metrics>>> = OnceLock::new();
    let runs = RUNS.get_or_init(Default::default);
    if let Some(x) = runs.lock().unwrap().get(&(variant, m)) {
        return Ok(x.clone());
    }
    let started = Instant::now();
    let store = corpus();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = run_config(variant, m);
    let label = format!("{variant} m={m}");
    pipeline::train(store, &cfg, dir.path(), &mut Progress(label.clone())).map_err(|e| e.to_string())?;
    let eval = pipeline::evaluate(dir.path(), store, None, false).map_err(|e| e.to_string())?;
    let x = eval.report.global;
    eprintln!(
        "    [{label}] test n={} MAPE {:.4} tau {:?} ({:.0}s)",
        x.n,
        x.mape,
        x.kendall_tau,
        started.elapsed().as_secs_f64()
    );
    runs.lock().unwrap().insert((variant, m), x.clone());
    Ok(x)
}

pub fn exogenous() -> Outcome {
    let full = metrics(Variant::Full, 0)?;
    let stat = metrics(Variant::Static, 0)?;
    let reduction = 1.0 - full.mape / stat.mape;
    let detail = format!(
        "full MAPE {:.4}, static MAPE {:.4}, relative reduction {:.1}% (need >= 20%)",
        full.mape,
        stat.mape,
        100.0 * reduction
    );
    if reduction >= 0.2 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

pub fn ablation() -> Outcome {
    let full = metrics(Variant::Full, 0)?.mape;
    let news = metrics(Variant::NewsOnly, 0)?.mape;
    let subs = metrics(Variant::SubmissionOnly, 0)?.mape;
    let stat = metrics(Variant::Static, 0)?.mape;
    let middle = news.min(subs);
    let detail = format!("MAPE full {full:.4}, news_only {news:.4}, submission_only {subs:.4}, static {stat:.4}");
    if full <= middle && middle <= stat {
        Ok(detail)
    } else {
        Err(detail)
    }
}

pub fn observation_trend() -> Outcome {
    let zero = metrics(Variant::Full, 0)?;
    let sixty = metrics(Variant::Full, 60)?;
    let (a, b) = match (zero.kendall_tau, sixty.kendall_tau) {
        (Some(a), Some(b)) => (a, b),
        other => return Err(format!("tau undefined: {other:?}")),
    };
    let detail = format!("tau(m=60) {b:.4}, tau(m=0) {a:.4}");
    if b >= a {
        Ok(detail)
    } else {
        Err(detail)
    }
}
