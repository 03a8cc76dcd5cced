//! Event model for the news, submission and comment streams.
//!
//! Time is quantized by an [`IntervalClock`]. Interval `k` covers the
//! half-open range `(origin + (k-1)·Δ, origin + k·Δ]`, so an event sitting
//! exactly on a boundary belongs to the interval that boundary closes.

mod ingest;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ingest::{ingest_jsonl, read_jsonl_strict, write_jsonl, Ingested, RecordKind, Validate};

/// A news article from the exogenous stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewsItem {
    pub id: String,
    pub timestamp: i64,
    pub title: String,
    pub body: String,
    pub source: String,
}

impl NewsItem {
    pub fn text_digest(&self) -> String {
        format!("{} {}", self.title, self.body)
    }
}

/// A root post opening a discussion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmissionItem {
    pub id: String,
    pub timestamp: i64,
    pub subreddit: String,
    pub title: String,
    #[serde(default)]
    pub selftext: String,
}

impl SubmissionItem {
    /// Title followed by the self text.
    pub fn text_digest(&self) -> String {
        if self.selftext.is_empty() {
            self.title.clone()
        } else {
            format!("{} {}", self.title, self.selftext)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommentEvent {
    pub id: String,
    pub timestamp: i64,
    pub submission_id: String,
    pub subreddit: String,
}

/// Anything carrying a timestamp and a stable identifier.
pub trait Timestamped {
    fn timestamp(&self) -> i64;
    fn id(&self) -> &str;
}

macro_rules! impl_timestamped {
    ($($ty:ty),*) => {
        $(impl Timestamped for $ty {
            fn timestamp(&self) -> i64 {
                self.timestamp
            }
            fn id(&self) -> &str {
                &self.id
            }
        })*
    };
}

impl_timestamped!(NewsItem, SubmissionItem, CommentEvent);

/// Sorts events by timestamp, breaking ties on id. Stable.
pub fn sort_events<E: Timestamped>(events: &mut [E]) {
    events.sort_by(|a, b| {
        a.timestamp()
            .cmp(&b.timestamp())
            .then_with(|| a.id().cmp(b.id()))
    });
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalClock {
    pub origin: i64,
    pub delta_obs: i64,
}

impl IntervalClock {
    pub fn new(origin: i64, delta_obs: i64) -> Result<Self> {
        if delta_obs <= 0 {
            return Err(Error::Config(format!(
                "delta_obs must be positive, got {delta_obs}"
            )));
        }
        Ok(Self { origin, delta_obs })
    }

    /// Index `k` of the interval containing `t`, i.e. `ceil((t - origin) / Δ)`.
    pub fn index_of(&self, t: i64) -> i64 {
        let offset = t - self.origin;
        let q = offset.div_euclid(self.delta_obs);
        if offset.rem_euclid(self.delta_obs) == 0 {
            q
        } else {
            q + 1
        }
    }

    /// Closing boundary `t_k` of interval `k`.
    pub fn boundary(&self, k: i64) -> i64 {
        self.origin + k * self.delta_obs
    }

    /// Whether `t` lies in `(t_{k-1}, t_k]`.
    pub fn contains(&self, k: i64, t: i64) -> bool {
        self.boundary(k - 1) < t && t <= self.boundary(k)
    }
}

/// A record refused by a stream operation, with the reason.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejected {
    pub id: String,
    pub reason: String,
}

/// Events grouped by interval index.
#[derive(Debug, Clone)]
pub struct Partition<E> {
    pub groups: BTreeMap<i64, Vec<E>>,
    pub rejected: Vec<Rejected>,
}

impl<E> Partition<E> {
    pub fn event_count(&self) -> usize {
        self.groups.values().map(Vec::len).sum()
    }
}

/// Assigns every event to the interval containing its timestamp.
///
/// Out-of-order input is sorted first (timestamp, then id). Events with a
/// negative timestamp are rejected.
pub fn partition_intervals<E: Timestamped + Clone>(
    events: &[E],
    clock: &IntervalClock,
) -> Partition<E> {
    let mut sorted: Vec<E> = events.to_vec();
    sort_events(&mut sorted);
    let mut groups: BTreeMap<i64, Vec<E>> = BTreeMap::new();
    let mut rejected = Vec::new();
    for event in sorted {
        if event.timestamp() < 0 {
            log::warn!(
                "rejecting event {} with negative timestamp {}",
                event.id(),
                event.timestamp()
            );
            rejected.push(Rejected {
                id: event.id().to_string(),
                reason: format!("negative timestamp {}", event.timestamp()),
            });
            continue;
        }
        groups
            .entry(clock.index_of(event.timestamp()))
            .or_default()
            .push(event);
    }
    Partition { groups, rejected }
}

/// Comment counts per observation bin of one submission.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ObservationBins {
    pub counts: Vec<u32>,
}

impl ObservationBins {
    pub fn m(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }
}

/// Counts comments into `m` bins of width `delta_obs` following the
/// submission; bin `l` (1-based) covers `(t_j+(l-1)Δ, t_j+lΔ]`.
pub fn bin_comments(
    submission_time: i64,
    comment_times: &[i64],
    m: usize,
    delta_obs: i64,
) -> ObservationBins {
    let mut counts = vec![0u32; m];
    if m == 0 || delta_obs <= 0 {
        return ObservationBins { counts };
    }
    let clock = IntervalClock {
        origin: submission_time,
        delta_obs,
    };
    for &t in comment_times {
        let l = clock.index_of(t);
        if l >= 1 && (l as usize) <= m {
            counts[l as usize - 1] += 1;
        }
    }
    ObservationBins { counts }
}

/// Chatter label for one submission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChatterTarget {
    /// Comments inside the prediction window.
    pub count: u64,
    /// `ln(1 + count)`.
    pub y: f64,
    pub delta_pred: i64,
}

impl ChatterTarget {
    pub fn from_count(count: u64, delta_pred: i64) -> Self {
        Self {
            count,
            y: (count as f64).ln_1p(),
            delta_pred,
        }
    }
}

/// Counts comments in the prediction window `(t_j + mΔ_obs, t_j + Δ_pred]`.
pub fn chatter_target(
    submission_time: i64,
    comment_times: &[i64],
    m: usize,
    delta_obs: i64,
    delta_pred: i64,
) -> Result<ChatterTarget> {
    let observed_end = (m as i64)
        .checked_mul(delta_obs)
        .ok_or_else(|| Error::Config("observation window overflows".into()))?;
    if observed_end >= delta_pred {
        return Err(Error::Config(format!(
            "observation window m·Δ_obs = {observed_end}s must be shorter than Δ_pred = {delta_pred}s"
        )));
    }
    let lo = submission_time + observed_end;
    let hi = submission_time + delta_pred;
    let count = comment_times.iter().filter(|&&t| lo < t && t <= hi).count() as u64;
    Ok(ChatterTarget::from_count(count, delta_pred))
}

/// True when the prediction window runs past the end of the corpus, so the
/// target count is truncated.
pub fn is_truncated(submission_time: i64, delta_pred: i64, corpus_end: i64) -> bool {
    submission_time + delta_pred > corpus_end
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubredditActivity {
    pub subreddit: String,
    pub k: i64,
    pub comment_count: u64,
    pub normalized_rate: f64,
}

/// Commenting activity of `subreddit` in the interval preceding `k`.
pub fn subreddit_rate(
    subreddit: &str,
    k: i64,
    comments: &[CommentEvent],
    clock: &IntervalClock,
) -> SubredditActivity {
    let comment_count = if k <= 0 {
        0
    } else {
        comments
            .iter()
            .filter(|c| c.subreddit == subreddit && clock.contains(k - 1, c.timestamp))
            .count() as u64
    };
    SubredditActivity {
        subreddit: subreddit.to_string(),
        k,
        comment_count,
        normalized_rate: (comment_count as f64).ln_1p(),
    }
}

/// Per-(subreddit, interval) comment counts, for bulk rate lookups.
#[derive(Debug, Clone, Default)]
pub struct ActivityIndex {
    counts: HashMap<(String, i64), u64>,
}

impl ActivityIndex {
    pub fn build(comments: &[CommentEvent], clock: &IntervalClock) -> Self {
        let mut counts = HashMap::new();
        for c in comments {
            *counts
                .entry((c.subreddit.clone(), clock.index_of(c.timestamp)))
                .or_insert(0) += 1;
        }
        Self { counts }
    }

    /// Same contract as [`subreddit_rate`].
    pub fn rate(&self, subreddit: &str, k: i64) -> SubredditActivity {
        let comment_count = if k <= 0 {
            0
        } else {
            self.counts
                .get(&(subreddit.to_string(), k - 1))
                .copied()
                .unwrap_or(0)
        };
        SubredditActivity {
            subreddit: subreddit.to_string(),
            k,
            comment_count,
            normalized_rate: (comment_count as f64).ln_1p(),
        }
    }
}

/// Comment timestamps per submission id.
#[derive(Debug, Clone, Default)]
pub struct LinkedComments {
    pub times: HashMap<String, Vec<i64>>,
    pub orphaned: Vec<Rejected>,
    pub early: Vec<Rejected>,
}

/// Joins comments onto their submissions. Comments referencing an unknown
/// submission, or arriving before their submission, are dropped.
pub fn link_comments(submissions: &[SubmissionItem], comments: &[CommentEvent]) -> LinkedComments {
    let posted: HashMap<&str, i64> = submissions
        .iter()
        .map(|s| (s.id.as_str(), s.timestamp))
        .collect();
    let mut linked = LinkedComments::default();
    for c in comments {
        match posted.get(c.submission_id.as_str()) {
            None => linked.orphaned.push(Rejected {
                id: c.id.clone(),
                reason: format!("unknown submission {}", c.submission_id),
            }),
            Some(&t0) if c.timestamp < t0 => {
                log::warn!(
                    "dropping comment {} at {} before its submission {} at {}",
                    c.id,
                    c.timestamp,
                    c.submission_id,
                    t0
                );
                linked.early.push(Rejected {
                    id: c.id.clone(),
                    reason: format!("timestamp {} precedes submission at {}", c.timestamp, t0),
                });
            }
            Some(_) => linked
                .times
                .entry(c.submission_id.clone())
                .or_default()
                .push(c.timestamp),
        }
    }
    for times in linked.times.values_mut() {
        times.sort_unstable();
    }
    linked
}
