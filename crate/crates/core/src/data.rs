//! The ingested store and its encoded, interval-indexed form.
//!
//! A store directory holds the three streams as time-sorted JSONL files plus
//! a `stats.json` sidecar. [`Dataset`] turns a store into token ids and
//! per-submission comment offsets; [`Labels`] then derives observation bins
//! and targets for one `(m, Δ_obs, Δ_pred)` setting.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stream::{
    bin_comments, chatter_target, ingest_jsonl, is_truncated, link_comments, read_jsonl_strict,
    sort_events, write_jsonl, ActivityIndex, ChatterTarget, CommentEvent, IntervalClock, NewsItem,
    SubmissionItem,
};
use crate::text::{build_vocab, encode, normalize, Vocabulary};

pub const NEWS_FILE: &str = "news.jsonl";
pub const SUBMISSIONS_FILE: &str = "submissions.jsonl";
pub const COMMENTS_FILE: &str = "comments.jsonl";
pub const STATS_FILE: &str = "stats.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamStats {
    pub records: usize,
    pub skipped: usize,
    pub first_timestamp: Option<i64>,
    pub last_timestamp: Option<i64>,
}

impl StreamStats {
    fn of(timestamps: impl Iterator<Item = i64> + Clone, skipped: usize) -> Self {
        Self {
            records: timestamps.clone().count(),
            skipped,
            first_timestamp: timestamps.clone().min(),
            last_timestamp: timestamps.max(),
        }
    }
}

/// Contents of the `stats.json` sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreStats {
    pub origin: i64,
    pub delta_obs: i64,
    pub news: StreamStats,
    pub submissions: StreamStats,
    pub comments: StreamStats,
    pub orphaned_comments: usize,
    pub early_comments: usize,
    pub subreddits: Vec<String>,
    pub intervals: usize,
}

/// Validated, time-sorted streams.
#[derive(Debug, Clone)]
pub struct Store {
    pub news: Vec<NewsItem>,
    pub submissions: Vec<SubmissionItem>,
    pub comments: Vec<CommentEvent>,
    pub stats: StoreStats,
}

impl Store {
    /// Builds a store from in-memory streams, sorting them and dropping
    /// comments that do not belong to a known, earlier submission.
    pub fn from_streams(
        mut news: Vec<NewsItem>,
        mut submissions: Vec<SubmissionItem>,
        mut comments: Vec<CommentEvent>,
        delta_obs: i64,
        skipped: [usize; 3],
    ) -> Result<Self> {
        sort_events(&mut news);
        sort_events(&mut submissions);
        sort_events(&mut comments);
        let linked = link_comments(&submissions, &comments);
        let dropped: BTreeSet<&str> = linked
            .orphaned
            .iter()
            .chain(&linked.early)
            .map(|r| r.id.as_str())
            .collect();
        let (orphaned, early) = (linked.orphaned.len(), linked.early.len());
        if !dropped.is_empty() {
            comments = comments
                .into_iter()
                .filter(|c| !dropped.contains(c.id.as_str()))
                .collect();
        }

        let first = news
            .first()
            .map(|n| n.timestamp)
            .into_iter()
            .chain(submissions.first().map(|s| s.timestamp))
            .chain(comments.first().map(|c| c.timestamp))
            .min()
            .unwrap_or(0);
        let clock = IntervalClock::new(first.div_euclid(delta_obs) * delta_obs, delta_obs)?;
        let subreddits: Vec<String> = submissions
            .iter()
            .map(|s| s.subreddit.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let intervals: BTreeSet<i64> = news
            .iter()
            .map(|n| clock.index_of(n.timestamp))
            .chain(submissions.iter().map(|s| clock.index_of(s.timestamp)))
            .collect();
        let stats = StoreStats {
            origin: clock.origin,
            delta_obs,
            news: StreamStats::of(news.iter().map(|n| n.timestamp), skipped[0]),
            submissions: StreamStats::of(submissions.iter().map(|s| s.timestamp), skipped[1]),
            comments: StreamStats::of(comments.iter().map(|c| c.timestamp), skipped[2]),
            orphaned_comments: orphaned,
            early_comments: early,
            subreddits,
            intervals: intervals.len(),
        };
        Ok(Self {
            news,
            submissions,
            comments,
            stats,
        })
    }

    /// Reads and validates the three raw JSONL dumps.
    pub fn ingest(news: &Path, submissions: &Path, comments: &Path, delta_obs: i64) -> Result<Self> {
        let n = ingest_jsonl::<NewsItem>(news)?;
        let s = ingest_jsonl::<SubmissionItem>(submissions)?;
        let c = ingest_jsonl::<CommentEvent>(comments)?;
        log::info!(
            "ingested {} news ({} skipped), {} submissions ({} skipped), {} comments ({} skipped)",
            n.records.len(),
            n.skipped,
            s.records.len(),
            s.skipped,
            c.records.len(),
            c.skipped
        );
        Self::from_streams(
            n.records,
            s.records,
            c.records,
            delta_obs,
            [n.skipped, s.skipped, c.skipped],
        )
    }

    pub fn clock(&self) -> IntervalClock {
        IntervalClock {
            origin: self.stats.origin,
            delta_obs: self.stats.delta_obs,
        }
    }

    /// Latest timestamp across all streams.
    pub fn corpus_end(&self) -> i64 {
        [
            self.stats.news.last_timestamp,
            self.stats.submissions.last_timestamp,
            self.stats.comments.last_timestamp,
        ]
        .into_iter()
        .flatten()
        .max()
        .unwrap_or(self.stats.origin)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(&dir.join(NEWS_FILE), &self.news)?;
        write_jsonl(&dir.join(SUBMISSIONS_FILE), &self.submissions)?;
        write_jsonl(&dir.join(COMMENTS_FILE), &self.comments)?;
        let path = dir.join(STATS_FILE);
        let json = serde_json::to_string_pretty(&self.stats)?;
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(STATS_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let stats: StoreStats = serde_json::from_str(&text)?;
        Ok(Self {
            news: read_jsonl_strict(&dir.join(NEWS_FILE))?,
            submissions: read_jsonl_strict(&dir.join(SUBMISSIONS_FILE))?,
            comments: read_jsonl_strict(&dir.join(COMMENTS_FILE))?,
            stats,
        })
    }
}

/// Time ranges `(start, end]` of the train, validation and test streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Window,
    pub validation: Window,
    pub test: Window,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: i64,
    pub end: i64,
}

impl Window {
    pub fn contains(&self, t: i64) -> bool {
        self.start < t && t <= self.end
    }
}

impl Splits {
    /// Splits submissions chronologically by count, snapping the cut points
    /// to interval boundaries so no interval straddles two splits.
    pub fn by_fraction(submissions: &[SubmissionItem], clock: &IntervalClock, train: f64, validation: f64) -> Result<Self> {
        if !(train > 0.0 && validation > 0.0 && train + validation < 1.0) {
            return Err(Error::Config(format!(
                "split fractions {train}/{validation} must be positive and sum below one"
            )));
        }
        if submissions.len() < 3 {
            return Err(Error::Data(format!(
                "need at least 3 submissions to split, got {}",
                submissions.len()
            )));
        }
        let n = submissions.len();
        let cut = |frac: f64| {
            let i = ((n as f64 * frac).round() as usize).clamp(1, n - 1) - 1;
            clock.boundary(clock.index_of(submissions[i].timestamp))
        };
        let start = clock.boundary(clock.index_of(submissions[0].timestamp) - 1);
        let end = submissions[n - 1].timestamp;
        let a = cut(train);
        let b = cut(train + validation).max(a);
        Ok(Self {
            train: Window { start, end: a },
            validation: Window { start: a, end: b },
            test: Window { start: b, end },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedNews {
    pub id: String,
    pub timestamp: i64,
    pub interval: i64,
    pub tokens: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSubmission {
    pub id: String,
    pub timestamp: i64,
    pub interval: i64,
    pub subreddit: usize,
    pub tokens: Vec<u32>,
    /// `ln(1 + comments in the subreddit's previous interval)`.
    pub rate: f64,
    /// Sorted comment timestamps, none earlier than the submission.
    pub comments: Vec<i64>,
}

/// Items of one interval, in timestamp order.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalItems {
    pub k: i64,
    pub news: Vec<usize>,
    pub submissions: Vec<usize>,
}

/// Token-encoded streams.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub clock: IntervalClock,
    pub news: Vec<EncodedNews>,
    pub submissions: Vec<EncodedSubmission>,
    pub subreddits: Vec<String>,
    pub corpus_end: i64,
}

/// Builds the shared vocabulary from the texts published inside `window`.
pub fn vocabulary_for(store: &Store, window: Window, max_df: f64, min_df: u64) -> Result<Vocabulary> {
    let docs: Vec<Vec<String>> = store
        .news
        .iter()
        .filter(|n| window.contains(n.timestamp))
        .map(|n| normalize(&n.text_digest()))
        .chain(
            store
                .submissions
                .iter()
                .filter(|s| window.contains(s.timestamp))
                .map(|s| normalize(&s.text_digest())),
        )
        .collect();
    build_vocab(&docs, max_df, min_df)
}

impl Dataset {
    pub fn build(
        store: &Store,
        vocab: &Vocabulary,
        subreddits: &[String],
        submission_len: usize,
        news_len: usize,
    ) -> Result<Self> {
        let clock = store.clock();
        let sub_index: HashMap<&str, usize> = subreddits
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let activity = ActivityIndex::build(&store.comments, &clock);
        let mut linked = link_comments(&store.submissions, &store.comments).times;

        let news = store
            .news
            .iter()
            .map(|n| EncodedNews {
                id: n.id.clone(),
                timestamp: n.timestamp,
                interval: clock.index_of(n.timestamp),
                tokens: encode(&normalize(&n.text_digest()), vocab, news_len).ids,
            })
            .collect();
        let submissions = store
            .submissions
            .iter()
            .map(|s| {
                let subreddit = *sub_index.get(s.subreddit.as_str()).ok_or_else(|| {
                    Error::Data(format!("submission {} has unknown subreddit {}", s.id, s.subreddit))
                })?;
                let k = clock.index_of(s.timestamp);
                let mut comments = linked.remove(&s.id).unwrap_or_default();
                comments.sort_unstable();
                Ok(EncodedSubmission {
                    id: s.id.clone(),
                    timestamp: s.timestamp,
                    interval: k,
                    subreddit,
                    tokens: encode(&normalize(&s.text_digest()), vocab, submission_len).ids,
                    rate: activity.rate(&s.subreddit, k).normalized_rate,
                    comments,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            clock,
            news,
            submissions,
            subreddits: subreddits.to_vec(),
            corpus_end: store.corpus_end(),
        })
    }

    /// Intervals holding at least one item published inside `window`, in
    /// order. Empty intervals are omitted: they leave the influence state
    /// unchanged.
    pub fn intervals(&self, window: Window) -> Vec<IntervalItems> {
        let mut by_k: BTreeMap<i64, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
        for (i, n) in self.news.iter().enumerate() {
            if window.contains(n.timestamp) {
                by_k.entry(n.interval).or_default().0.push(i);
            }
        }
        for (i, s) in self.submissions.iter().enumerate() {
            if window.contains(s.timestamp) {
                by_k.entry(s.interval).or_default().1.push(i);
            }
        }
        by_k
            .into_iter()
            .map(|(k, (news, submissions))| IntervalItems { k, news, submissions })
            .collect()
    }

    pub fn submission_count(&self, window: Window) -> usize {
        self.submissions
            .iter()
            .filter(|s| window.contains(s.timestamp))
            .count()
    }
}

/// Observation window and prediction horizon in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub m: usize,
    pub delta_obs: i64,
    pub delta_pred: i64,
}

/// Bins and targets for every submission of a dataset, index-aligned with
/// [`Dataset::submissions`].
#[derive(Debug, Clone, PartialEq)]
pub struct Labels {
    pub spec: TargetSpec,
    pub bins: Vec<Vec<u32>>,
    pub targets: Vec<ChatterTarget>,
    /// Prediction window extends past the corpus end.
    pub truncated: Vec<bool>,
}

impl Labels {
    pub fn build(dataset: &Dataset, spec: TargetSpec) -> Result<Self> {
        let mut bins = Vec::with_capacity(dataset.submissions.len());
        let mut targets = Vec::with_capacity(dataset.submissions.len());
        let mut truncated = Vec::with_capacity(dataset.submissions.len());
        for s in &dataset.submissions {
            bins.push(bin_comments(s.timestamp, &s.comments, spec.m, spec.delta_obs).counts);
            targets.push(chatter_target(
                s.timestamp,
                &s.comments,
                spec.m,
                spec.delta_obs,
                spec.delta_pred,
            )?);
            truncated.push(is_truncated(s.timestamp, spec.delta_pred, dataset.corpus_end));
        }
        Ok(Self {
            spec,
            bins,
            targets,
            truncated,
        })
    }
}
