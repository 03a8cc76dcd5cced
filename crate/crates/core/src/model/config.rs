use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// News and submission influence both condition the kernels.
    Full,
    /// Submission-side influence is zeroed.
    NewsOnly,
    /// News-side influence is zeroed.
    SubmissionOnly,
    /// Kernels are never calibrated; activity scaling is kept.
    Static,
    /// Only the observation LSTM; needs at least one bin.
    LstmCc,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NewsOnly,
        Variant::SubmissionOnly,
        Variant::Static,
        Variant::LstmCc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NewsOnly => "news_only",
            Variant::SubmissionOnly => "submission_only",
            Variant::Static => "static",
            Variant::LstmCc => "lstm_cc",
        }
    }

    pub fn uses_news_influence(self) -> bool {
        matches!(self, Variant::Full | Variant::NewsOnly)
    }

    pub fn uses_submission_influence(self) -> bool {
        matches!(self, Variant::Full | Variant::SubmissionOnly)
    }

    pub fn uses_influence(self) -> bool {
        self.uses_news_influence() || self.uses_submission_influence()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant `{s}` (expected one of full, news_only, submission_only, static, lstm_cc)"
                ))
            })
    }
}

/// Network dimensions and ablation switch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub word_dim: usize,
    pub subreddit_count: usize,
    pub subreddit_dim: usize,
    pub branch_kernels: Vec<usize>,
    pub branch_filters: Vec<usize>,
    pub tec_tail_filters: Vec<usize>,
    pub gru_hidden: usize,
    pub lstm_hidden: usize,
    pub leaky_alpha: f64,
    pub pool_window: usize,
    pub submission_max_len: usize,
    pub news_max_len: usize,
    /// Number of observation bins.
    pub m: usize,
    pub variant: Variant,
    pub epsilon: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 0,
            word_dim: 100,
            subreddit_count: 43,
            subreddit_dim: 32,
            branch_kernels: vec![1, 3, 5],
            branch_filters: vec![128, 64, 32],
            tec_tail_filters: vec![64, 32, 1],
            gru_hidden: 128,
            lstm_hidden: 8,
            leaky_alpha: 0.2,
            pool_window: 2,
            submission_max_len: crate::text::SUBMISSION_MAX_LEN,
            news_max_len: crate::text::NEWS_MAX_LEN,
            m: 0,
            variant: Variant::Full,
            epsilon: 1e-7,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("word_dim", self.word_dim),
            ("subreddit_count", self.subreddit_count),
            ("subreddit_dim", self.subreddit_dim),
            ("gru_hidden", self.gru_hidden),
            ("lstm_hidden", self.lstm_hidden),
            ("pool_window", self.pool_window),
            ("submission_max_len", self.submission_max_len),
            ("news_max_len", self.news_max_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.branch_kernels.is_empty() || self.branch_filters.is_empty() {
            return Err(Error::Config("at least one branch and one stage required".into()));
        }
        if let Some(k) = self.branch_kernels.iter().find(|&&k| k == 0 || k % 2 == 0) {
            return Err(Error::Config(format!(
                "branch kernel sizes must be odd for same-size padding, got {k}"
            )));
        }
        if self.branch_filters.iter().chain(&self.tec_tail_filters).any(|&f| f == 0) {
            return Err(Error::Config("filter counts must be positive".into()));
        }
        if self.tec_tail_filters.last() != Some(&1) {
            return Err(Error::Config("the last time-evolving convolution must have one filter".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if !self.leaky_alpha.is_finite() {
            return Err(Error::Config("leaky_alpha must be finite".into()));
        }
        if self.variant == Variant::LstmCc && self.m == 0 {
            return Err(Error::Config(
                "lstm_cc needs an observation window (m >= 1); zero-shot is not supported".into(),
            ));
        }
        Ok(())
    }

    /// Width of the static-block feature vector.
    pub fn feature_dim(&self) -> usize {
        self.branch_kernels.len() * self.branch_filters.last().copied().unwrap_or(0)
    }

    /// Width of the cumulative influence state.
    pub fn influence_dim(&self) -> usize {
        2 * self.gru_hidden
    }
}
