//! Regression and rank metrics, and the CSV reports built from them.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bin width for step-wise labels.
pub const STEP: u64 = 10;

fn check_pair(x: &[f64], y: &[f64], min: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < min {
        return Err(Error::Data(format!("need at least {min} samples, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::Numerical("NaN in metric input".into()));
    }
    Ok(())
}

/// `100 × mean(|y − ŷ| / (y + ε))`.
pub fn mape(y: &[f64], y_hat: &[f64], epsilon: f64) -> Result<f64> {
    check_pair(y, y_hat, 1)?;
    let sum: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b).abs() / (a + epsilon)).sum();
    Ok(100.0 * sum / y.len() as f64)
}

/// Number of tied pairs within runs of equal values of a sorted slice.
fn tied_pairs<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Sorts `v` and returns the number of inversions removed.
fn merge_sort_swaps(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_sort_swaps(&mut v[..mid], &mut buf[..mid]) + merge_sort_swaps(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Kendall's τ-b in `O(n log n)`.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    let n = x.len() as u64;
    // `+ 0.0` folds −0.0 into 0.0 so the total order agrees with `==`
    let mut pairs: Vec<(f64, f64)> = x.iter().zip(y).map(|(a, b)| (a + 0.0, b + 0.0)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n0 = n * (n - 1) / 2;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let n1 = tied_pairs(&xs);
    let n3 = tied_pairs(&pairs);
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; ys.len()];
    let swaps = merge_sort_swaps(&mut ys, &mut buf);
    let n2 = tied_pairs(&ys);
    if n0 == n1 || n0 == n2 {
        return Err(Error::Undefined("Kendall tau of a constant sequence".into()));
    }
    let numerator = n0 as f64 - n1 as f64 - n2 as f64 + n3 as f64 - 2.0 * swaps as f64;
    Ok(numerator / ((n0 - n1) as f64 * (n0 - n2) as f64).sqrt())
}

/// 1-based ranks, ties receiving the mean of the ranks they span.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's ρ: Pearson correlation of average ranks.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    pearson(&average_ranks(x), &average_ranks(y))
        .ok_or_else(|| Error::Undefined("Spearman rho with zero rank variance".into()))
}

/// `floor(size / k)`.
pub fn stepwise_labels(sizes: &[u64], k: u64) -> Result<Vec<u64>> {
    if k == 0 {
        return Err(Error::Config("step width must be at least 1".into()));
    }
    Ok(sizes.iter().map(|s| s / k).collect())
}

/// Comment count implied by a chatter prediction: `round(exp(ŷ) − 1)`,
/// floored at zero.
pub fn predicted_count(y_hat: f64) -> u64 {
    let c = y_hat.exp_m1().round();
    if c.is_finite() && c > 0.0 {
        c as u64
    } else if c > 0.0 {
        u64::MAX
    } else {
        0
    }
}

/// Kendall's τ between step labels of true and predicted counts.
pub fn stepwise_tau(true_counts: &[u64], predicted_counts: &[u64], k: u64) -> Result<f64> {
    let a: Vec<f64> = stepwise_labels(true_counts, k)?.into_iter().map(|v| v as f64).collect();
    let b: Vec<f64> = stepwise_labels(predicted_counts, k)?.into_iter().map(|v| v as f64).collect();
    kendall_tau(&a, &b)
}

/// One evaluated submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub subreddit: String,
    pub y: f64,
    pub y_hat: f64,
    pub count: u64,
}

/// Metrics over one group of submissions. Correlations are `None` when
/// undefined (fewer than two samples or a constant sequence).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub mape: f64,
    /// MAPE on raw counts recovered from the prediction.
    pub mape_raw: f64,
    pub kendall_tau: Option<f64>,
    pub spearman_rho: Option<f64>,
    pub stepwise_tau: Option<f64>,
}

fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Undefined(_)) => Ok(None),
        Err(Error::Data(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

impl Metrics {
    pub fn compute(records: &[&EvalRecord], epsilon: f64) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Data("cannot compute metrics of an empty prediction set".into()));
        }
        let y: Vec<f64> = records.iter().map(|r| r.y).collect();
        let y_hat: Vec<f64> = records.iter().map(|r| r.y_hat).collect();
        let counts: Vec<u64> = records.iter().map(|r| r.count).collect();
        let pred_counts: Vec<u64> = y_hat.iter().map(|&v| predicted_count(v)).collect();
        let raw_true: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        let raw_pred: Vec<f64> = pred_counts.iter().map(|&c| c as f64).collect();
        Ok(Self {
            n: records.len(),
            mape: mape(&y, &y_hat, epsilon)?,
            mape_raw: mape(&raw_true, &raw_pred, epsilon)?,
            kendall_tau: defined(kendall_tau(&y, &y_hat))?,
            spearman_rho: defined(spearman_rho(&y, &y_hat))?,
            stepwise_tau: defined(stepwise_tau(&counts, &pred_counts, STEP))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub global: Metrics,
    pub per_subreddit: BTreeMap<String, Metrics>,
}

pub fn report(records: &[EvalRecord], per_subreddit: bool, epsilon: f64) -> Result<MetricReport> {
    let all: Vec<&EvalRecord> = records.iter().collect();
    let global = Metrics::compute(&all, epsilon)?;
    let mut groups: BTreeMap<String, Vec<&EvalRecord>> = BTreeMap::new();
    if per_subreddit {
        for r in records {
            groups.entry(r.subreddit.clone()).or_default().push(r);
        }
    }
    let per_subreddit = groups
        .into_iter()
        .map(|(k, v)| Ok((k, Metrics::compute(&v, epsilon)?)))
        .collect::<Result<_>>()?;
    Ok(MetricReport { global, per_subreddit })
}

pub const ALL: &str = "ALL";

/// One line of a metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run_id: String,
    pub variant: String,
    pub m: usize,
    pub delta_pred_days: f64,
    pub subreddit: String,
    pub n: usize,
    pub mape: f64,
    pub kendall_tau: Option<f64>,
    pub spearman_rho: Option<f64>,
    pub stepwise_tau: Option<f64>,
    pub mape_raw: f64,
}

impl ReportRow {
    fn new(run_id: &str, variant: &str, m: usize, delta_pred_days: f64, subreddit: &str, x: &Metrics) -> Self {
        Self {
            run_id: run_id.into(),
            variant: variant.into(),
            m,
            delta_pred_days,
            subreddit: subreddit.into(),
            n: x.n,
            mape: x.mape,
            kendall_tau: x.kendall_tau,
            spearman_rho: x.spearman_rho,
            stepwise_tau: x.stepwise_tau,
            mape_raw: x.mape_raw,
        }
    }
}

impl MetricReport {
    /// The ALL row followed by one row per subreddit.
    pub fn rows(&self, run_id: &str, variant: &str, m: usize, delta_pred_days: f64) -> Vec<ReportRow> {
        std::iter::once(ReportRow::new(run_id, variant, m, delta_pred_days, ALL, &self.global))
            .chain(
                self.per_subreddit
                    .iter()
                    .map(|(s, x)| ReportRow::new(run_id, variant, m, delta_pred_days, s, x)),
            )
            .collect()
    }
}

pub fn write_rows(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rows(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Which column a comparison table spreads across.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    /// One column per run (plain variant comparison).
    None,
    ObservationBins,
    PredictionDays,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"))
}

/// Pivots ALL rows into a table of variants against the sweep key, one
/// cell per metric pair `mape/tau`.
pub fn comparison_table(rows: &[ReportRow], sweep: Sweep) -> String {
    let global: Vec<&ReportRow> = rows.iter().filter(|r| r.subreddit == ALL).collect();
    let key = |r: &ReportRow| match sweep {
        Sweep::None => String::new(),
        Sweep::ObservationBins => format!("m={}", r.m),
        Sweep::PredictionDays => format!("days={}", r.delta_pred_days),
    };
    let mut columns: Vec<(f64, String)> = global
        .iter()
        .map(|r| {
            let order = match sweep {
                Sweep::None => 0.0,
                Sweep::ObservationBins => r.m as f64,
                Sweep::PredictionDays => r.delta_pred_days,
            };
            (order, key(r))
        })
        .collect();
    columns.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then_with(|| a.1.cmp(&b.1)));
    columns.dedup_by(|a, b| a.1 == b.1);
    let mut variants: Vec<&str> = global.iter().map(|r| r.variant.as_str()).collect();
    variants.sort_unstable();
    variants.dedup();

    let mut out = String::from("variant");
    for (_, c) in &columns {
        if c.is_empty() {
            out.push_str(",mape,kendall_tau,spearman_rho,stepwise_tau");
        } else {
            out.push_str(&format!(",{c} mape,{c} kendall_tau"));
        }
    }
    out.push('\n');
    for v in variants {
        out.push_str(v);
        for (_, c) in &columns {
            let cell = global.iter().find(|r| r.variant == v && key(r) == *c);
            match (cell, c.is_empty()) {
                (Some(r), true) => out.push_str(&format!(
                    ",{:.4},{},{},{}",
                    r.mape,
                    fmt_opt(r.kendall_tau),
                    fmt_opt(r.spearman_rho),
                    fmt_opt(r.stepwise_tau)
                )),
                (Some(r), false) => out.push_str(&format!(",{:.4},{}", r.mape, fmt_opt(r.kendall_tau))),
                (None, true) => out.push_str(",,,,"),
                (None, false) => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    out
}

/// Error-versus-size points: true count, predicted count, absolute error
/// of the chatter value.
pub fn scatter_csv(records: &[EvalRecord]) -> String {
    let mut out = String::from("subreddit,count,predicted_count,abs_error\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.subreddit,
            r.count,
            predicted_count(r.y_hat),
            (r.y - r.y_hat).abs()
        ));
    }
    out
}
