//! Seeded generator of coupled news, submission and comment streams.
//!
//! News about each topic arrives as a Poisson process whose rate jumps by
//! `burst_multiplier` inside burst windows. A submission picks its topic
//! with weight `1 + beta_exo·news_mass + beta_endo·submission_mass`, where
//! a mass is the topic's share of exponentially decayed recent counts. Its
//! comment count is Poisson with mean
//! `base_mu·(1 + beta_exo·news_mass + beta_endo·submission_mass)`, and the
//! comments follow it after exponentially distributed delays.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::data::{COMMENTS_FILE, NEWS_FILE, SUBMISSIONS_FILE};
use crate::error::{Error, Result};
use crate::stream::{write_jsonl, CommentEvent, NewsItem, SubmissionItem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Burst {
    pub topic: usize,
    pub start: i64,
    pub end: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub topic_count: usize,
    pub vocab_per_topic: usize,
    /// Topic-neutral words shared by all texts.
    pub filler_words: usize,
    pub subreddit_count: usize,
    /// Seconds of simulated news and submissions.
    pub horizon: i64,
    /// News articles per second per topic outside bursts.
    pub news_rate: f64,
    pub burst_count: usize,
    pub burst_duration: i64,
    pub burst_multiplier: f64,
    /// Explicit burst windows; when empty, `burst_count` windows are drawn.
    pub bursts: Vec<Burst>,
    /// Submissions per second, per subreddit (recycled if shorter).
    pub submission_rate: Vec<f64>,
    pub beta_exo: f64,
    pub beta_endo: f64,
    /// Baseline comment mean, per subreddit (recycled if shorter).
    pub base_mu: Vec<f64>,
    /// Half-life in seconds of the news and submission masses.
    pub half_life: f64,
    /// Mean delay in seconds between a submission and each comment.
    pub comment_delay: f64,
    pub news_words: usize,
    pub submission_words: usize,
    /// Probability that a text word is drawn from the topic vocabulary.
    pub topic_word_prob: f64,
    pub start_time: i64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            topic_count: 6,
            vocab_per_topic: 12,
            filler_words: 24,
            subreddit_count: 4,
            horizon: 4 * 86_400,
            news_rate: 1.0 / 120.0,
            burst_count: 16,
            burst_duration: 3 * 3600,
            burst_multiplier: 10.0,
            bursts: Vec::new(),
            submission_rate: vec![0.0045, 0.0040, 0.0035, 0.0025],
            beta_exo: 5.0,
            beta_endo: 0.0,
            base_mu: vec![12.0],
            half_life: 3600.0,
            comment_delay: 7200.0,
            news_words: 10,
            submission_words: 8,
            topic_word_prob: 0.6,
            start_time: 1_538_352_000,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic config: {m}")));
        if self.topic_count == 0 || self.vocab_per_topic == 0 || self.subreddit_count == 0 {
            return bad("topic_count, vocab_per_topic and subreddit_count must be positive");
        }
        if self.horizon <= 0 {
            return bad("horizon must be positive");
        }
        if self.submission_rate.is_empty() || self.base_mu.is_empty() {
            return bad("submission_rate and base_mu need at least one entry");
        }
        let rates = [self.news_rate, self.beta_exo, self.beta_endo, self.burst_multiplier];
        if rates.iter().chain(&self.submission_rate).any(|r| !(r.is_finite() && *r >= 0.0)) {
            return bad("rates and couplings must be finite and nonnegative");
        }
        if self.base_mu.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return bad("base_mu must be positive");
        }
        if !(self.half_life > 0.0 && self.comment_delay > 0.0) {
            return bad("half_life and comment_delay must be positive");
        }
        if !(0.0..=1.0).contains(&self.topic_word_prob) || self.news_words == 0 || self.submission_words == 0 {
            return bad("text settings out of range");
        }
        if self.topic_word_prob < 1.0 && self.filler_words == 0 {
            return bad("filler_words must be positive when topic_word_prob < 1");
        }
        if self.burst_count > 0 && self.burst_duration <= 0 && self.bursts.is_empty() {
            return bad("burst_duration must be positive");
        }
        if let Some(b) = self.bursts.iter().find(|b| b.topic >= self.topic_count || b.end <= b.start) {
            return bad(&format!("invalid burst {b:?}"));
        }
        Ok(())
    }

    fn submission_rate_of(&self, s: usize) -> f64 {
        self.submission_rate[s % self.submission_rate.len()]
    }

    fn base_mu_of(&self, s: usize) -> f64 {
        self.base_mu[s % self.base_mu.len()]
    }

    pub fn subreddit_name(s: usize) -> String {
        format!("community{s:02}")
    }
}

pub const TRUTH_FILE: &str = "truth.jsonl";

/// Ground truth attached to a generated submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionTruth {
    pub id: String,
    pub topic: usize,
    pub news_mass: f64,
    pub submission_mass: f64,
    pub in_burst: bool,
    pub comment_mean: f64,
    pub comment_count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub news: Vec<NewsItem>,
    pub submissions: Vec<SubmissionItem>,
    pub comments: Vec<CommentEvent>,
    pub news_topics: Vec<usize>,
    pub truth: Vec<SubmissionTruth>,
    pub bursts: Vec<Burst>,
}

const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

/// A pronounceable, purely alphabetic pseudo-word unique to `id`.
pub fn pseudo_word(mut id: usize) -> String {
    let base = ONSETS.len() * VOWELS.len();
    let mut w = String::new();
    for _ in 0..3 {
        let syl = id % base;
        w.push_str(ONSETS[syl / VOWELS.len()]);
        w.push_str(VOWELS[syl % VOWELS.len()]);
        id /= base;
    }
    w.push('x');
    w
}

/// Exponentially decayed per-topic counts.
#[derive(Debug, Clone)]
struct Decayed {
    values: Vec<f64>,
    at: f64,
    rate: f64,
}

impl Decayed {
    fn new(topics: usize, half_life: f64) -> Self {
        Self {
            values: vec![0.0; topics],
            at: 0.0,
            rate: std::f64::consts::LN_2 / half_life,
        }
    }

    fn advance(&mut self, t: f64) {
        let f = (-(t - self.at) * self.rate).exp();
        self.values.iter_mut().for_each(|v| *v *= f);
        self.at = t;
    }

    fn add(&mut self, topic: usize) {
        self.values[topic] += 1.0;
    }

    fn share(&self, topic: usize) -> f64 {
        let total: f64 = self.values.iter().sum();
        if total > 0.0 {
            self.values[topic] / total
        } else {
            0.0
        }
    }
}

struct Texts {
    topic_words: Vec<Vec<String>>,
    filler: Vec<String>,
    topic_prob: f64,
}

impl Texts {
    fn new(cfg: &SynthConfig) -> Self {
        let topic_words = (0..cfg.topic_count)
            .map(|z| (0..cfg.vocab_per_topic).map(|i| pseudo_word(z * cfg.vocab_per_topic + i)).collect())
            .collect();
        let offset = cfg.topic_count * cfg.vocab_per_topic;
        Self {
            topic_words,
            filler: (0..cfg.filler_words).map(|i| pseudo_word(offset + i)).collect(),
            topic_prob: cfg.topic_word_prob,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng, topic: usize, words: usize) -> String {
        (0..words)
            .map(|_| {
                let pool = if rng.gen_bool(self.topic_prob) {
                    &self.topic_words[topic]
                } else {
                    &self.filler
                };
                pool[rng.gen_range(0..pool.len())].as_str()
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn in_burst(bursts: &[Burst], topic: usize, t: i64) -> bool {
    bursts.iter().any(|b| b.topic == topic && b.start <= t && t < b.end)
}

/// Arrival times of a Poisson process whose rate is piecewise constant
/// between `breaks`.
fn piecewise_arrivals(rng: &mut ChaCha8Rng, horizon: i64, rate_at: impl Fn(i64) -> f64, breaks: &[i64]) -> Vec<f64> {
    let mut cuts: Vec<i64> = breaks.iter().copied().filter(|&b| b > 0 && b < horizon).collect();
    cuts.push(0);
    cuts.push(horizon);
    cuts.sort_unstable();
    cuts.dedup();
    let mut out = Vec::new();
    for w in cuts.windows(2) {
        let rate = rate_at(w[0]);
        if rate <= 0.0 {
            continue;
        }
        let gap = Exp::new(rate).expect("positive rate");
        let mut t = w[0] as f64;
        loop {
            t += gap.sample(rng);
            if t >= w[1] as f64 {
                break;
            }
            out.push(t);
        }
    }
    out
}

pub fn generate(cfg: &SynthConfig) -> Result<Generated> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bursts = if cfg.bursts.is_empty() {
        (0..cfg.burst_count)
            .map(|_| {
                let topic = rng.gen_range(0..cfg.topic_count);
                let start = rng.gen_range(0..cfg.horizon.max(1));
                Burst {
                    topic,
                    start,
                    end: start + cfg.burst_duration,
                }
            })
            .collect()
    } else {
        cfg.bursts.clone()
    };
    let texts = Texts::new(cfg);

    // Arrival times relative to the start of the horizon.
    let mut news_events: Vec<(f64, usize)> = Vec::new();
    for z in 0..cfg.topic_count {
        let breaks: Vec<i64> = bursts
            .iter()
            .filter(|b| b.topic == z)
            .flat_map(|b| [b.start, b.end])
            .collect();
        let rate = |t: i64| {
            if in_burst(&bursts, z, t) {
                cfg.news_rate * cfg.burst_multiplier
            } else {
                cfg.news_rate
            }
        };
        news_events.extend(piecewise_arrivals(&mut rng, cfg.horizon, rate, &breaks).into_iter().map(|t| (t, z)));
    }
    let mut sub_events: Vec<(f64, usize)> = Vec::new();
    for s in 0..cfg.subreddit_count {
        let rate = cfg.submission_rate_of(s);
        sub_events.extend(piecewise_arrivals(&mut rng, cfg.horizon, |_| rate, &[]).into_iter().map(|t| (t, s)));
    }
    news_events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    sub_events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut news_mass = Decayed::new(cfg.topic_count, cfg.half_life);
    let mut sub_mass = Decayed::new(cfg.topic_count, cfg.half_life);
    let mut news = Vec::with_capacity(news_events.len());
    let mut news_topics = Vec::with_capacity(news_events.len());
    let mut submissions = Vec::with_capacity(sub_events.len());
    let mut truth = Vec::with_capacity(sub_events.len());
    let mut comments = Vec::new();
    let delay = Exp::new(1.0 / cfg.comment_delay).expect("positive delay");
    let mut ni = 0;
    for (si, &(t, s)) in sub_events.iter().enumerate() {
        while ni < news_events.len() && news_events[ni].0 < t {
            let (tn, z) = news_events[ni];
            news_mass.advance(tn);
            news_mass.add(z);
            news.push(NewsItem {
                id: format!("n{ni:06}"),
                timestamp: cfg.start_time + tn.floor() as i64,
                title: texts.sample(&mut rng, z, cfg.news_words),
                body: String::new(),
                source: format!("wire{}", ni % 3),
            });
            news_topics.push(z);
            ni += 1;
        }
        news_mass.advance(t);
        sub_mass.advance(t);
        let weights: Vec<f64> = (0..cfg.topic_count)
            .map(|z| 1.0 + cfg.beta_exo * news_mass.share(z) + cfg.beta_endo * sub_mass.share(z))
            .collect();
        let mut pick = rng.gen_range(0.0..weights.iter().sum::<f64>());
        let mut topic = cfg.topic_count - 1;
        for (z, w) in weights.iter().enumerate() {
            if pick < *w {
                topic = z;
                break;
            }
            pick -= w;
        }
        let nm = news_mass.share(topic);
        let sm = sub_mass.share(topic);
        let mean = cfg.base_mu_of(s) * (1.0 + cfg.beta_exo * nm + cfg.beta_endo * sm);
        let count = Poisson::new(mean).map_err(|e| Error::Config(e.to_string()))?.sample(&mut rng) as u64;
        let id = format!("s{si:06}");
        let ts = cfg.start_time + t.floor() as i64;
        let subreddit = SynthConfig::subreddit_name(s);
        for c in 0..count {
            comments.push(CommentEvent {
                id: format!("{id}c{c:04}"),
                timestamp: ts + 1 + delay.sample(&mut rng).floor() as i64,
                submission_id: id.clone(),
                subreddit: subreddit.clone(),
            });
        }
        submissions.push(SubmissionItem {
            id: id.clone(),
            timestamp: ts,
            subreddit,
            title: texts.sample(&mut rng, topic, cfg.submission_words),
            selftext: String::new(),
        });
        truth.push(SubmissionTruth {
            id,
            topic,
            news_mass: nm,
            submission_mass: sm,
            in_burst: in_burst(&bursts, topic, t.floor() as i64),
            comment_mean: mean,
            comment_count: count,
        });
        sub_mass.add(topic);
    }
    for (i, &(tn, z)) in news_events.iter().enumerate().skip(ni) {
        news.push(NewsItem {
            id: format!("n{i:06}"),
            timestamp: cfg.start_time + tn.floor() as i64,
            title: texts.sample(&mut rng, z, cfg.news_words),
            body: String::new(),
            source: format!("wire{}", i % 3),
        });
        news_topics.push(z);
    }
    comments.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.id.cmp(&b.id)));
    Ok(Generated {
        news,
        submissions,
        comments,
        news_topics,
        truth,
        bursts,
    })
}

impl Generated {
    /// Writes the three streams in their JSONL schemas plus `truth.jsonl`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(&dir.join(NEWS_FILE), &self.news)?;
        write_jsonl(&dir.join(SUBMISSIONS_FILE), &self.submissions)?;
        write_jsonl(&dir.join(COMMENTS_FILE), &self.comments)?;
        write_jsonl(&dir.join(TRUTH_FILE), &self.truth)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub news: usize,
    pub submissions: usize,
    pub comments: u64,
    pub news_per_topic: BTreeMap<usize, usize>,
    pub submissions_per_topic: BTreeMap<usize, usize>,
    pub submissions_per_subreddit: BTreeMap<String, usize>,
    pub mean_comments_per_topic: BTreeMap<usize, f64>,
    /// Comment-count quantiles at 10, 25, 50, 75, 90 and 99 percent.
    pub comment_quantiles: Vec<u64>,
    pub max_comments: u64,
}

fn quantile(sorted: &[u64], q: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    sorted[((sorted.len() - 1) as f64 * q).round() as usize]
}

pub fn describe(g: &Generated) -> SynthSummary {
    let mut news_per_topic = BTreeMap::new();
    for &z in &g.news_topics {
        *news_per_topic.entry(z).or_insert(0) += 1;
    }
    let mut submissions_per_topic = BTreeMap::new();
    let mut comment_sum: BTreeMap<usize, u64> = BTreeMap::new();
    for t in &g.truth {
        *submissions_per_topic.entry(t.topic).or_insert(0) += 1;
        *comment_sum.entry(t.topic).or_insert(0) += t.comment_count;
    }
    let mut submissions_per_subreddit = BTreeMap::new();
    for s in &g.submissions {
        *submissions_per_subreddit.entry(s.subreddit.clone()).or_insert(0) += 1;
    }
    let mean_comments_per_topic = comment_sum
        .iter()
        .map(|(z, c)| (*z, *c as f64 / submissions_per_topic[z] as f64))
        .collect();
    let mut counts: Vec<u64> = g.truth.iter().map(|t| t.comment_count).collect();
    counts.sort_unstable();
    SynthSummary {
        news: g.news.len(),
        submissions: g.submissions.len(),
        comments: g.comments.len() as u64,
        news_per_topic,
        submissions_per_topic,
        submissions_per_subreddit,
        mean_comments_per_topic,
        comment_quantiles: [0.1, 0.25, 0.5, 0.75, 0.9, 0.99].iter().map(|&q| quantile(&counts, q)).collect(),
        max_comments: counts.last().copied().unwrap_or(0),
    }
}
