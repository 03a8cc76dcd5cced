use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{normalize, URL_TOKEN};

/// Observable discussion size.
pub const K: usize = 10;

/// `p = (1/|T|) Σ tf_t (ln|T| − ln tf_t)` over the distinct terms `T` of one
/// text. Zero for an empty text.
pub fn complexity(terms: &[String]) -> f64 {
    let mut tf: BTreeMap<&str, f64> = BTreeMap::new();
    for t in terms {
        *tf.entry(t.as_str()).or_insert(0.0) += 1.0;
    }
    if tf.is_empty() {
        return 0.0;
    }
    let n = tf.len() as f64;
    tf.values().map(|&f| f * (n.ln() - f.ln())).sum::<f64>() / n
}

/// Words as whitespace chunks holding at least one alphanumeric character.
fn words(text: &str) -> Vec<&str> {
    text.split_whitespace()
        .filter(|w| w.chars().any(char::is_alphanumeric))
        .collect()
}

/// Sentences as runs of text ending in `.`, `!` or `?` (or the end of the
/// text) that contain a word.
fn sentence_count(text: &str) -> usize {
    text.split(['.', '!', '?'])
        .filter(|s| s.chars().any(char::is_alphanumeric))
        .count()
}

fn letters(word: &str) -> usize {
    word.chars().filter(|c| c.is_alphabetic()).count()
}

/// Word and sentence counts of a text.
pub fn size(text: &str) -> (usize, usize) {
    (words(text).len(), sentence_count(text))
}

/// `|w|/|s| + 100·|cw|/|w|`, where `cw` are words with more than six letters.
pub fn lix(text: &str) -> Result<f64> {
    let w = words(text);
    let s = sentence_count(text);
    if w.is_empty() || s == 0 {
        return Err(Error::Data("LIX needs at least one word and one sentence".into()));
    }
    let long = w.iter().filter(|x| letters(x) > 6).count();
    Ok(w.len() as f64 / s as f64 + 100.0 * long as f64 / w.len() as f64)
}

pub fn referral_count(text: &str) -> usize {
    normalize(text).iter().filter(|t| *t == URL_TOKEN).count()
}

/// Average gaps over the first and last halves of the first `k` comments,
/// `t` sorted ascending and `t0` the submission time:
/// `(1/(k/2−1)) Σ_{i=1}^{k/2−1} (t_i − t_{i−1})` and
/// `(1/(k/2−1)) Σ_{i=k/2}^{k} (t_i − t_0)`, with `t` indexed from 1.
pub fn temporal_gaps(t: &[i64], t0: i64, k: usize) -> Result<(f64, f64)> {
    if k < 4 || k % 2 != 0 {
        return Err(Error::Config(format!("k must be even and at least 4, got {k}")));
    }
    if t.len() < k {
        return Err(Error::Data(format!("need {k} comment times, got {}", t.len())));
    }
    if t.windows(2).any(|w| w[0] > w[1]) || t[0] < t0 {
        return Err(Error::Data("comment times must be sorted and not precede the submission".into()));
    }
    let at = |i: usize| if i == 0 { t0 } else { t[i - 1] } as f64;
    let half = k / 2;
    let d = (half - 1) as f64;
    let first: f64 = (1..half).map(|i| at(i) - at(i - 1)).sum();
    let last: f64 = (half..=k).map(|i| at(i) - t0 as f64).sum();
    Ok((first / d, last / d))
}

/// Term → sentiment score.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon(pub HashMap<String, f64>);

#[derive(Deserialize)]
struct LexiconRow {
    term: String,
    score: f64,
}

impl Lexicon {
    /// Reads a `term,score` CSV with a header row. Terms are normalized.
    pub fn load(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut map = HashMap::new();
        for row in r.deserialize() {
            let row: LexiconRow = row?;
            if !row.score.is_finite() {
                return Err(Error::Data(format!("lexicon score for {} is not finite", row.term)));
            }
            map.insert(normalize(&row.term).join(" "), row.score);
        }
        Ok(Self(map))
    }

    /// Sum of scores of the distinct terms.
    pub fn polarity(&self, terms: &[String]) -> f64 {
        terms
            .iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .filter_map(|t| self.0.get(t))
            .sum()
    }
}

/// Unigram tf-idf with smoothed idf and l2-normalized rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfIdf {
    pub terms: Vec<String>,
    pub idf: Vec<f64>,
}

impl TfIdf {
    pub fn fit(docs: &[Vec<String>], min_df: usize) -> Self {
        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        for d in docs {
            for t in d.iter().collect::<BTreeSet<_>>() {
                *df.entry(t.as_str()).or_insert(0) += 1;
            }
        }
        let n = docs.len() as f64;
        let (terms, idf) = df
            .into_iter()
            .filter(|&(_, c)| c >= min_df.max(1))
            .map(|(t, c)| (t.to_string(), ((1.0 + n) / (1.0 + c as f64)).ln() + 1.0))
            .unzip();
        Self { terms, idf }
    }

    pub fn transform(&self, doc: &[String]) -> Vec<f64> {
        let mut v = vec![0.0; self.terms.len()];
        for t in doc {
            if let Ok(i) = self.terms.binary_search(t) {
                v[i] += self.idf[i];
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    /// Features of the original cascade predictor.
    Org,
    /// The original features plus text, size and subreddit features.
    Full,
}

/// Features of one submission that has at least [`K`] comments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasPredFeatures {
    pub tfidf: Vec<f64>,
    pub complexity: f64,
    pub lix: f64,
    /// `None` when no lexicon was supplied.
    pub polarity: Option<f64>,
    pub referral_count: usize,
    pub word_count: usize,
    pub sentence_count: usize,
    pub subreddit: usize,
    /// Seconds from the submission to each of the first `K` comments.
    pub comment_times: Vec<f64>,
    pub avg_gap_first_half: f64,
    pub avg_gap_last_half: f64,
}

/// Shared context for extraction.
#[derive(Debug, Clone)]
pub struct Extractor {
    pub tfidf: TfIdf,
    pub lexicon: Option<Lexicon>,
    pub subreddits: Vec<String>,
}

impl Extractor {
    /// Features of a submission, or `None` when it has fewer than `K`
    /// comments. `comments` must be sorted.
    pub fn extract(&self, text: &str, subreddit: &str, t0: i64, comments: &[i64]) -> Result<Option<CasPredFeatures>> {
        if comments.len() < K {
            return Ok(None);
        }
        let first = &comments[..K];
        let terms = normalize(text);
        let (word_count, sentence_count) = size(text);
        let lix = if word_count == 0 || sentence_count == 0 {
            0.0
        } else {
            lix(text)?
        };
        let (avg_gap_first_half, avg_gap_last_half) = temporal_gaps(first, t0, K)?;
        let subreddit = self
            .subreddits
            .iter()
            .position(|s| s == subreddit)
            .ok_or_else(|| Error::Data(format!("unknown subreddit {subreddit}")))?;
        Ok(Some(CasPredFeatures {
            tfidf: self.tfidf.transform(&terms),
            complexity: complexity(&terms),
            lix,
            polarity: self.lexicon.as_ref().map(|l| l.polarity(&terms)),
            referral_count: referral_count(text),
            word_count,
            sentence_count,
            subreddit,
            comment_times: first.iter().map(|&t| (t - t0) as f64).collect(),
            avg_gap_first_half,
            avg_gap_last_half,
        }))
    }

    /// Column names of [`CasPredFeatures::vector`] for `set`.
    pub fn names(&self, set: FeatureSet, with_polarity: bool) -> Vec<String> {
        let mut out = Vec::new();
        if set == FeatureSet::Full {
            out.extend(self.tfidf.terms.iter().map(|t| format!("tfidf:{t}")));
            out.extend(["complexity", "lix"].map(String::from));
        }
        if with_polarity {
            out.push("polarity".into());
        }
        if set == FeatureSet::Full {
            out.extend(["referral_count", "word_count", "sentence_count"].map(String::from));
            out.extend(self.subreddits.iter().map(|s| format!("subreddit:{s}")));
        }
        out.extend((1..=K).map(|i| format!("comment_time_{i}")));
        out.extend(["avg_gap_first_half", "avg_gap_last_half"].map(String::from));
        out
    }
}

impl CasPredFeatures {
    /// Numeric vector in the column order of [`Extractor::names`].
    pub fn vector(&self, set: FeatureSet, subreddit_count: usize) -> Vec<f64> {
        let mut out = Vec::new();
        if set == FeatureSet::Full {
            out.extend(&self.tfidf);
            out.extend([self.complexity, self.lix]);
        }
        out.extend(self.polarity);
        if set == FeatureSet::Full {
            out.extend([
                self.referral_count as f64,
                self.word_count as f64,
                self.sentence_count as f64,
            ]);
            out.extend((0..subreddit_count).map(|s| if s == self.subreddit { 1.0 } else { 0.0 }));
        }
        out.extend(&self.comment_times);
        out.extend([self.avg_gap_first_half, self.avg_gap_last_half]);
        out
    }
}

/// Writes a feature matrix with a header row.
pub fn write_matrix(path: &Path, names: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(names)?;
    for r in rows {
        if r.len() != names.len() {
            return Err(Error::Shape(format!("row has {} values for {} columns", r.len(), names.len())));
        }
        w.write_record(r.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
