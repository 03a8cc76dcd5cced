use chatternet::data::Store;
use chatternet::model::{InfluenceState, ModelConfig};
use chatternet::pipeline::{self, DataConfig, RunConfig, TextConfig};
use chatternet::synth::{generate, SynthConfig};
use chatternet::train::{
    average_predictions, ensemble_predict, predict_stream, Checkpoint, CheckpointLedger, EpochSummary,
    TrainConfig, TrainObserver,
};

use crate::Outcome;

pub const FIXTURE_SUBMISSIONS: usize = 200;

/// A short synthetic corpus cut to exactly 200 submissions.
pub fn fixture() -> Store {
    let g = generate(&SynthConfig {
        seed: 99,
        horizon: 6 * 3600,
        burst_count: 4,
        burst_duration: 1200,
        half_life: 600.0,
        ..SynthConfig::default()
    })
    .expect("fixture corpus");
    assert!(g.submissions.len() >= FIXTURE_SUBMISSIONS, "fixture too small");
    let submissions = g.submissions[..FIXTURE_SUBMISSIONS].to_vec();
    let end = submissions.last().unwrap().timestamp;
    let news = g.news.into_iter().filter(|n| n.timestamp <= end).collect();
    Store::from_streams(news, submissions, g.comments, 60, [0; 3]).expect("fixture store")
}

pub fn fixture_config(epochs: usize) -> RunConfig {
    RunConfig {
        seed: 5,
        data: DataConfig {
            delta_pred_days: 1.0,
            ..DataConfig::default()
        },
        text: TextConfig {
            min_df: 2,
            ..TextConfig::default()
        },
        model: ModelConfig {
            word_dim: 8,
            subreddit_dim: 3,
            branch_kernels: vec![1, 3],
            branch_filters: vec![8, 4],
            tec_tail_filters: vec![4, 1],
            gru_hidden: 6,
            lstm_hidden: 4,
            submission_max_len: 10,
            news_max_len: 10,
            ..ModelConfig::default()
        },
        train: TrainConfig {
            learning_rate: 1e-3,
            epochs,
            warmup_intervals: 0,
            ..TrainConfig::default()
        },
    }
}

#[derive(Default)]
struct Recorder {
    starts: Vec<(usize, bool)>,
    updates: Vec<(usize, usize)>,
    summaries: Vec<EpochSummary>,
    ledger_sizes: Vec<(usize, usize)>,
}

impl TrainObserver for Recorder {
    fn epoch_start(&mut self, epoch: usize, state: &InfluenceState) {
        self.starts.push((epoch, state.g.iter().all(|&v| v == 0.0)));
    }
    fn update(&mut self, epoch: usize, batch_size: usize, _loss: f64) {
        self.updates.push((epoch, batch_size));
    }
    fn epoch_end(&mut self, summary: &EpochSummary, ledger: &CheckpointLedger) {
        self.summaries.push(summary.clone());
        self.ledger_sizes.push((ledger.capacity, ledger.len()));
    }
}

pub fn run() -> Outcome {
    let store = fixture();
    let cfg = fixture_config(25);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rec = Recorder::default();
    let trained = pipeline::train(&store, &cfg, dir.path(), &mut rec).map_err(|e| e.to_string())?;
    let train_subs = trained.prepared.dataset.submission_count(trained.prepared.splits.train);
    let mut f = Vec::new();

    if rec.summaries.len() != 25 {
        f.push(format!("{} epochs ran", rec.summaries.len()));
    }
    if rec.updates.iter().any(|&(_, b)| b != 1) {
        f.push("an update used a batch larger than one".into());
    }
    for s in &rec.summaries {
        let n = rec.updates.iter().filter(|(e, _)| *e == s.epoch).count();
        if n != train_subs || s.updates != train_subs {
            f.push(format!("epoch {}: {n} updates for {train_subs} training submissions", s.epoch));
        }
    }
    if rec.starts.len() != 25 || rec.starts.iter().any(|&(_, zero)| !zero) {
        f.push(format!("hidden states not reset at every epoch start: {:?}", rec.starts));
    }
    if rec.ledger_sizes.iter().any(|&(cap, _)| cap != 5) {
        f.push("ledger capacity differs from 5".into());
    }
    let sizes: Vec<usize> = rec.ledger_sizes.iter().map(|&(_, n)| n).collect();
    let want_sizes: Vec<usize> = (1..=25).map(|e| e.min(5)).collect();
    if sizes != want_sizes {
        f.push(format!("ledger sizes {sizes:?}"));
    }

    // the ledger holds exactly the five lowest validation losses
    let ledger = &trained.outcome.ledger;
    let mut by_loss: Vec<(f64, usize)> = rec.summaries.iter().map(|s| (s.val_loss, s.epoch)).collect();
    by_loss.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let want_epochs: Vec<usize> = by_loss[..5].iter().map(|p| p.1).collect();
    let kept: Vec<usize> = ledger.entries.iter().map(|e| e.epoch).collect();
    if kept != want_epochs {
        f.push(format!("ledger keeps epochs {kept:?}, best five are {want_epochs:?}"));
    }
    let on_disk = std::fs::read_dir(dir.path().join("checkpoints")).map_err(|e| e.to_string())?.count();
    if on_disk != 5 {
        f.push(format!("{on_disk} checkpoint directories on disk"));
    }

    // ensemble = mean of the five checkpoints' predictions
    let data = trained.prepared.data();
    let test = trained.prepared.splits.test;
    let ensemble = ensemble_predict(ledger, dir.path(), data, test, 0).map_err(|e| e.to_string())?;
    let mut per_model = Vec::new();
    for e in &ledger.entries {
        let ck = Checkpoint::load(&dir.path().join(&e.path)).map_err(|e| e.to_string())?;
        per_model.push(
            predict_stream(&ck.net, data, test, 0)
                .map_err(|e| e.to_string())?
                .iter()
                .map(|s| s.prediction.y_hat)
                .collect::<Vec<_>>(),
        );
    }
    let mean = average_predictions(&per_model).map_err(|e| e.to_string())?;
    let by_hand: Vec<f64> = (0..mean.len())
        .map(|i| per_model.iter().map(|p| p[i]).sum::<f64>() / per_model.len() as f64)
        .collect();
    let worst = ensemble
        .iter()
        .zip(&by_hand)
        .map(|(s, m)| (s.prediction.y_hat - m).abs())
        .fold(0.0, f64::max);
    if per_model.len() != 5 || ensemble.is_empty() || worst > 1e-12 {
        f.push(format!("{} models, {} test predictions, ensemble deviation {worst:e}", per_model.len(), ensemble.len()));
    }

    let losses: Vec<f64> = rec.summaries.iter().take(5).map(|s| s.train_loss).collect();
    if !losses.windows(2).all(|w| w[1] < w[0]) {
        f.push(format!("training loss not decreasing over epochs 1-5: {losses:?}"));
    }

    if f.is_empty() {
        Ok(format!(
            "{} submissions ({train_subs} train); 25 epochs x {train_subs} single-sample updates; resets at every epoch; \
             ledger {kept:?}; 5-model mean over {} test predictions; epoch 1-5 loss {:.4} -> {:.4}",
            store.submissions.len(),
            ensemble.len(),
            losses[0],
            losses[4]
        ))
    } else {
        Err(f.join("; "))
    }
}
