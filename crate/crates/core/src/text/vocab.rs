use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::normalize::{NUM_TOKEN, URL_TOKEN};
use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
const PAD_TOKEN: &str = "<PAD>";
const UNK_TOKEN: &str = "<UNK>";
const SPECIALS: [&str; 4] = [PAD_TOKEN, UNK_TOKEN, URL_TOKEN, NUM_TOKEN];
const HEADER: &str = "#chatternet-vocab v1";

/// Token ↔ id map with document frequencies.
///
/// Ids are dense. The four special tokens occupy ids 0..4 and are kept
/// regardless of frequency; every other token satisfies the df bounds it
/// was built with.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    df: Vec<u64>,
    index: HashMap<String, u32>,
    pub documents: u64,
    pub max_df: f64,
    pub min_df: u64,
}

impl Vocabulary {
    fn from_parts(tokens: Vec<String>, df: Vec<u64>, documents: u64, max_df: f64, min_df: u64) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            tokens,
            df,
            index,
            documents,
            max_df,
            min_df,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn document_frequency(&self, id: u32) -> Option<u64> {
        self.df.get(id as usize).copied()
    }

    pub fn special_count() -> usize {
        SPECIALS.len()
    }

    /// Maps a token list through the vocabulary, substituting UNK.
    pub fn canonicalize(&self, tokens: &[String]) -> Vec<String> {
        tokens
            .iter()
            .map(|t| self.token(self.id(t)).unwrap_or(UNK_TOKEN).to_string())
            .collect()
    }

    pub fn decode(&self, seq: &TokenSequence) -> Vec<String> {
        seq.ids[..seq.true_length]
            .iter()
            .map(|&id| self.token(id).unwrap_or(UNK_TOKEN).to_string())
            .collect()
    }

    /// Writes `token\tid\tdf` lines after a versioned header.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        writeln!(
            buf,
            "{HEADER}\tdocuments={}\tmax_df={}\tmin_df={}",
            self.documents, self.max_df, self.min_df
        )
        .expect("write to vec");
        for (i, (t, df)) in self.tokens.iter().zip(&self.df).enumerate() {
            writeln!(buf, "{t}\t{i}\t{df}").expect("write to vec");
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Data(format!("{}: empty vocabulary file", path.display())))?;
        let mut fields = header.split('\t');
        if fields.next() != Some(HEADER) {
            return Err(Error::Data(format!("{}: unsupported vocabulary header", path.display())));
        }
        let mut documents = 0;
        let mut max_df = 1.0;
        let mut min_df = 0;
        for field in fields {
            let bad = || Error::Data(format!("{}: bad header field {field}", path.display()));
            match field.split_once('=') {
                Some(("documents", v)) => documents = v.parse().map_err(|_| bad())?,
                Some(("max_df", v)) => max_df = v.parse().map_err(|_| bad())?,
                Some(("min_df", v)) => min_df = v.parse().map_err(|_| bad())?,
                _ => return Err(bad()),
            }
        }
        let mut tokens = Vec::new();
        let mut df = Vec::new();
        for (n, line) in lines.enumerate() {
            let bad = || Error::Data(format!("{}: bad vocabulary line {}", path.display(), n + 2));
            let mut parts = line.split('\t');
            let (Some(t), Some(id), Some(d)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(bad());
            };
            if id.parse::<usize>().map_err(|_| bad())? != tokens.len() {
                return Err(bad());
            }
            tokens.push(t.to_string());
            df.push(d.parse().map_err(|_| bad())?);
        }
        Ok(Self::from_parts(tokens, df, documents, max_df, min_df))
    }
}

/// Builds a vocabulary from tokenized documents.
///
/// A token is kept when `df >= min_df` and `df / N <= max_df`; both bounds
/// are inclusive. Ids after the specials are ordered by descending df, then
/// lexicographically.
pub fn build_vocab(corpus: &[Vec<String>], max_df: f64, min_df: u64) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
    }
    if !(0.0..=1.0).contains(&max_df) {
        return Err(Error::Config(format!("max_df must be in [0, 1], got {max_df}")));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for doc in corpus {
        let unique: HashSet<&str> = doc.iter().map(String::as_str).collect();
        for t in unique {
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    let n = corpus.len() as f64;
    let mut kept: Vec<(&str, u64)> = counts
        .iter()
        .filter(|(t, _)| !SPECIALS.contains(t))
        .filter(|(_, &df)| df >= min_df && df as f64 / n <= max_df)
        .map(|(t, &df)| (*t, df))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    let mut df: Vec<u64> = SPECIALS
        .iter()
        .map(|s| counts.get(s).copied().unwrap_or(0))
        .collect();
    for (t, d) in kept {
        tokens.push(t.to_string());
        df.push(d);
    }
    Ok(Vocabulary::from_parts(tokens, df, corpus.len() as u64, max_df, min_df))
}

/// A fixed-length id sequence, right-padded with PAD.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub true_length: usize,
}

/// Truncates to the first `max_len` tokens and pads the rest.
pub fn encode(tokens: &[String], vocab: &Vocabulary, max_len: usize) -> TokenSequence {
    let mut ids: Vec<u32> = tokens.iter().take(max_len).map(|t| vocab.id(t)).collect();
    let true_length = ids.len();
    ids.resize(max_len, PAD_ID);
    TokenSequence { ids, true_length }
}
