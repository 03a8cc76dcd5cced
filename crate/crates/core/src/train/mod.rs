//! Streaming training: one Adam step per submission, intervals in time
//! order, hidden states reset to zero at every epoch.

mod adam;
mod checkpoint;

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Labels, Window};
use crate::error::{Error, Result};
use crate::model::{ChatterNet, InfluenceState, IntervalTrace, ModelParams, Prediction, SubmissionInput};

pub use adam::Adam;
pub use checkpoint::{
    checkpoint, Admission, Checkpoint, CheckpointLedger, EpochRecord, LedgerEntry, CHECKPOINT_DIR, LEDGER_FILE,
};

pub const EPOCH_LOG: &str = "epochs.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub epsilon: f64,
    pub checkpoint_top_k: usize,
    /// Test intervals replayed without scoring before predictions count.
    pub warmup_intervals: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            epochs: 25,
            batch_size: 1,
            epsilon: 1e-7,
            checkpoint_top_k: 5,
            warmup_intervals: 60,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.batch_size != 1 {
            return Err(Error::Config(format!(
                "training is online: batch_size must be 1, got {}",
                self.batch_size
            )));
        }
        if self.epochs == 0 || self.checkpoint_top_k == 0 {
            return Err(Error::Config("epochs and checkpoint_top_k must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn optimizer(&self, params: &ModelParams) -> Adam {
        Adam::new(params, self.learning_rate, self.adam_beta1, self.adam_beta2, self.adam_epsilon)
    }
}

/// `|y − ŷ| / (y + ε)` for one sample.
pub fn relative_error(y: f64, y_hat: f64, epsilon: f64) -> f64 {
    (y - y_hat).abs() / (y + epsilon)
}

/// Derivative of [`relative_error`] in `ŷ`; zero where `ŷ = y`.
pub fn relative_error_grad(y: f64, y_hat: f64, epsilon: f64) -> f64 {
    let s = if y_hat > y {
        1.0
    } else if y_hat < y {
        -1.0
    } else {
        0.0
    };
    s / (y + epsilon)
}

/// Mean absolute relative error.
pub fn loss(y: &[f64], y_hat: &[f64], epsilon: f64) -> Result<f64> {
    if y.len() != y_hat.len() || y.is_empty() {
        return Err(Error::Shape(format!(
            "loss needs equal nonempty sequences, got {} and {}",
            y.len(),
            y_hat.len()
        )));
    }
    if let Some(bad) = y.iter().find(|&&v| !(v >= 0.0)) {
        return Err(Error::Data(format!("targets must be nonnegative, got {bad}")));
    }
    Ok(y.iter()
        .zip(y_hat)
        .map(|(&a, &b)| relative_error(a, b, epsilon))
        .sum::<f64>()
        / y.len() as f64)
}

/// A dataset paired with the labels for one target setting.
#[derive(Debug, Clone, Copy)]
pub struct StreamData<'a> {
    pub dataset: &'a Dataset,
    pub labels: &'a Labels,
}

impl<'a> StreamData<'a> {
    fn input(&self, i: usize) -> SubmissionInput<'a> {
        let s = &self.dataset.submissions[i];
        SubmissionInput {
            tokens: &s.tokens,
            subreddit: s.subreddit,
            rate: s.rate,
            bins: &self.labels.bins[i],
        }
    }
}

/// Hooks for instrumenting a run.
pub trait TrainObserver {
    fn epoch_start(&mut self, _epoch: usize, _state: &InfluenceState) {}
    fn update(&mut self, _epoch: usize, _batch_size: usize, _loss: f64) {}
    fn epoch_end(&mut self, _summary: &EpochSummary, _ledger: &CheckpointLedger) {}
}

impl TrainObserver for () {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub updates: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct EpochOutcome {
    pub train_loss: f64,
    pub updates: usize,
    pub final_state: InfluenceState,
}

fn aggregate(
    net: &ChatterNet,
    data: StreamData<'_>,
    state: &InfluenceState,
    news: &[usize],
    submissions: &[usize],
    k: i64,
) -> Result<(InfluenceState, IntervalTrace)> {
    let ds = data.dataset;
    let news: Vec<&[u32]> = news.iter().map(|&i| ds.news[i].tokens.as_slice()).collect();
    let subs: Vec<(&[u32], usize)> = submissions
        .iter()
        .map(|&i| (ds.submissions[i].tokens.as_slice(), ds.submissions[i].subreddit))
        .collect();
    net.aggregate_influence(state, &news, &subs, k)
}

/// One pass over the training window. Each submission is predicted from
/// the influence state of the preceding intervals, and its loss is
/// backpropagated through the items that produced that state.
pub fn train_epoch(
    net: &mut ChatterNet,
    adam: &mut Adam,
    data: StreamData<'_>,
    window: Window,
    epsilon: f64,
    epoch: usize,
    observer: &mut dyn TrainObserver,
) -> Result<EpochOutcome> {
    let mut state = InfluenceState::zeros(&net.config, data.dataset.clock.index_of(window.start));
    observer.epoch_start(epoch, &state);
    let mut trace = IntervalTrace::empty();
    let mut grads = net.params.zeros_like();
    let mut total = 0.0;
    let mut updates = 0;
    for items in data.dataset.intervals(window) {
        for &i in &items.submissions {
            grads.fill(0.0);
            let y = data.labels.targets[i].y;
            let (pred, cache) = net.forward_submission(&state.g, data.input(i))?;
            let l = relative_error(y, pred.y_hat, epsilon);
            if !l.is_finite() {
                return Err(Error::Numerical(format!(
                    "epoch {epoch}: non-finite loss on submission {} (y = {y}, prediction {pred:?}, \
                     influence finite: {}, first non-finite parameter: {:?})",
                    data.dataset.submissions[i].id,
                    state.is_finite(),
                    net.params.first_non_finite()
                )));
            }
            let dg = net.backward_submission(&cache, relative_error_grad(y, pred.y_hat, epsilon), &mut grads)?;
            net.backward_influence(&trace, &dg, &mut grads);
            adam.step(&mut net.params, &grads);
            if let Some(name) = net.params.first_non_finite() {
                return Err(Error::Numerical(format!(
                    "epoch {epoch}: parameter {name} became non-finite after submission {}",
                    data.dataset.submissions[i].id
                )));
            }
            observer.update(epoch, 1, l);
            total += l;
            updates += 1;
        }
        let (next, newer) = aggregate(net, data, &state, &items.news, &items.submissions, items.k)?;
        state = next;
        trace.advance(newer);
    }
    Ok(EpochOutcome {
        train_loss: if updates > 0 { total / updates as f64 } else { 0.0 },
        updates,
        final_state: state,
    })
}

/// Items of one interval and the submissions of the next one, with targets.
#[derive(Debug, Clone, Copy)]
pub struct MicroBatch<'a> {
    pub prior: &'a InfluenceState,
    pub news: &'a [&'a [u32]],
    pub submissions: &'a [(&'a [u32], usize)],
    pub k: i64,
    pub batch: &'a [(SubmissionInput<'a>, f64)],
}

/// Mean relative error over `mb.batch` after aggregating the interval.
pub fn micro_batch_loss(net: &ChatterNet, mb: MicroBatch<'_>, epsilon: f64) -> Result<f64> {
    let (state, _) = net.aggregate_influence(mb.prior, mb.news, mb.submissions, mb.k)?;
    let mut total = 0.0;
    for &(input, y) in mb.batch {
        total += relative_error(y, net.forward_submission(&state.g, input)?.0.y_hat, epsilon);
    }
    Ok(total / mb.batch.len() as f64)
}

/// [`micro_batch_loss`] and its gradient with respect to every parameter,
/// under the same truncation as training. Parameters are not changed.
pub fn micro_batch_gradient(net: &ChatterNet, mb: MicroBatch<'_>, epsilon: f64) -> Result<(f64, ModelParams)> {
    let (state, trace) = net.aggregate_influence(mb.prior, mb.news, mb.submissions, mb.k)?;
    let mut grads = net.params.zeros_like();
    let scale = 1.0 / mb.batch.len() as f64;
    let mut total = 0.0;
    for &(input, y) in mb.batch {
        let (pred, cache) = net.forward_submission(&state.g, input)?;
        total += relative_error(y, pred.y_hat, epsilon);
        let dg = net.backward_submission(&cache, scale * relative_error_grad(y, pred.y_hat, epsilon), &mut grads)?;
        net.backward_influence(&trace, &dg, &mut grads);
    }
    Ok((total * scale, grads))
}

/// A forward-only prediction for one submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    /// Index into [`Dataset::submissions`].
    pub index: usize,
    pub y: f64,
    pub count: u64,
    pub truncated: bool,
    pub prediction: Prediction,
}

/// Replays `window` from a zero state with frozen parameters. Submissions
/// in the first `warmup_intervals` intervals of the window update the
/// state but are not returned.
pub fn predict_stream(
    net: &ChatterNet,
    data: StreamData<'_>,
    window: Window,
    warmup_intervals: usize,
) -> Result<Vec<Scored>> {
    let first_k = data.dataset.clock.index_of(window.start) + 1;
    let scored_from = first_k + warmup_intervals as i64;
    let mut state = InfluenceState::zeros(&net.config, first_k - 1);
    let mut out = Vec::new();
    for items in data.dataset.intervals(window) {
        if items.k >= scored_from {
            for &i in &items.submissions {
                let (prediction, _) = net.forward_submission(&state.g, data.input(i))?;
                out.push(Scored {
                    index: i,
                    y: data.labels.targets[i].y,
                    count: data.labels.targets[i].count,
                    truncated: data.labels.truncated[i],
                    prediction,
                });
            }
        }
        state = aggregate(net, data, &state, &items.news, &items.submissions, items.k)?.0;
    }
    Ok(out)
}

/// Mean relative error of a forward-only pass over `window`.
pub fn evaluate_loss(net: &ChatterNet, data: StreamData<'_>, window: Window, epsilon: f64) -> Result<f64> {
    let scored = predict_stream(net, data, window, 0)?;
    if scored.is_empty() {
        return Err(Error::Data("no submissions in the evaluation window".into()));
    }
    let y: Vec<f64> = scored.iter().map(|s| s.y).collect();
    let y_hat: Vec<f64> = scored.iter().map(|s| s.prediction.y_hat).collect();
    loss(&y, &y_hat, epsilon)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochSummary>,
    pub ledger: CheckpointLedger,
}

fn append_epoch_log(run_dir: &Path, s: &EpochSummary) -> Result<()> {
    let path = run_dir.join(EPOCH_LOG);
    let fresh = !path.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str("epoch,train_loss,val_loss,wall_time_s\n");
    }
    text.push_str(&format!(
        "{},{},{},{:.3}\n",
        s.epoch, s.train_loss, s.val_loss, s.wall_time_s
    ));
    f.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))
}

/// Runs the full protocol: `cfg.epochs` epochs over `train`, validation
/// after each, top-k checkpoints under `run_dir`.
pub fn train_run(
    net: &mut ChatterNet,
    data: StreamData<'_>,
    train: Window,
    validation: Window,
    cfg: &TrainConfig,
    run_dir: &Path,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let mut adam = cfg.optimizer(&net.params);
    let mut ledger = CheckpointLedger::new(cfg.checkpoint_top_k);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let outcome = train_epoch(net, &mut adam, data, train, cfg.epsilon, epoch, observer)?;
        let val_loss = evaluate_loss(net, data, validation, cfg.epsilon)?;
        let summary = EpochSummary {
            epoch,
            train_loss: outcome.train_loss,
            val_loss,
            updates: outcome.updates,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train loss {:.5}, validation loss {:.5}, {} updates, {:.1}s",
            summary.train_loss,
            summary.val_loss,
            summary.updates,
            summary.wall_time_s
        );
        checkpoint(
            &mut ledger,
            run_dir,
            net,
            &outcome.final_state,
            &EpochRecord {
                epoch,
                train_loss: summary.train_loss,
                val_loss,
            },
        )?;
        append_epoch_log(run_dir, &summary)?;
        observer.epoch_end(&summary, &ledger);
        epochs.push(summary);
    }
    Ok(TrainOutcome { epochs, ledger })
}

/// Elementwise mean of several prediction vectors.
pub fn average_predictions(per_model: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = per_model
        .first()
        .ok_or_else(|| Error::Data("cannot average zero models".into()))?;
    if per_model.iter().any(|p| p.len() != first.len()) {
        return Err(Error::Shape("models produced different numbers of predictions".into()));
    }
    let n = per_model.len() as f64;
    Ok((0..first.len())
        .map(|i| per_model.iter().map(|p| p[i]).sum::<f64>() / n)
        .collect())
}

/// Forward-only predictions averaged over every checkpoint in the ledger.
/// The returned `prediction` fields are per-field means across models.
pub fn ensemble_predict(
    ledger: &CheckpointLedger,
    run_dir: &Path,
    data: StreamData<'_>,
    window: Window,
    warmup_intervals: usize,
) -> Result<Vec<Scored>> {
    if ledger.is_empty() {
        return Err(Error::Data("checkpoint ledger is empty".into()));
    }
    let mut runs = Vec::with_capacity(ledger.len());
    for entry in &ledger.entries {
        let ck = Checkpoint::load(&run_dir.join(&entry.path))?;
        if ck.net.config.m != data.labels.spec.m {
            return Err(Error::Config(format!(
                "checkpoint {} was trained with m = {}, labels use m = {}",
                entry.path.display(),
                ck.net.config.m,
                data.labels.spec.m
            )));
        }
        runs.push(predict_stream(&ck.net, data, window, warmup_intervals)?);
    }
    ensemble_of(&runs)
}

/// Combines per-model predictions of the same submissions.
pub fn ensemble_of(runs: &[Vec<Scored>]) -> Result<Vec<Scored>> {
    let first = runs.first().ok_or_else(|| Error::Data("no models to average".into()))?;
    let field = |f: fn(&Prediction) -> f64| -> Result<Vec<f64>> {
        average_predictions(&runs.iter().map(|r| r.iter().map(|s| f(&s.prediction)).collect()).collect::<Vec<_>>())
    };
    let y_hat = field(|p| p.y_hat)?;
    let b = field(|p| p.b)?;
    let b_tilde = field(|p| p.b_tilde)?;
    let r = field(|p| p.r)?;
    Ok(first
        .iter()
        .enumerate()
        .map(|(i, s)| Scored {
            prediction: Prediction {
                b_tilde: b_tilde[i],
                r: r[i],
                b: b[i],
                y_hat: y_hat[i],
            },
            ..s.clone()
        })
        .collect())
}
