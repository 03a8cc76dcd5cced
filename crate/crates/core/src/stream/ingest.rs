use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{CommentEvent, NewsItem, SubmissionItem};
use crate::error::{Error, Result};
use crate::text::normalize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    News,
    Submission,
    Comment,
}

/// Schema checks beyond what deserialization enforces.
pub trait Validate {
    fn validate(&self) -> std::result::Result<(), String>;
}

impl Validate for NewsItem {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.timestamp < 0 {
            return Err(format!("negative timestamp {}", self.timestamp));
        }
        if normalize(&self.title).is_empty() {
            return Err("empty title after normalization".into());
        }
        Ok(())
    }
}

impl Validate for SubmissionItem {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.timestamp < 0 {
            return Err(format!("negative timestamp {}", self.timestamp));
        }
        if self.subreddit.is_empty() {
            return Err("empty subreddit".into());
        }
        Ok(())
    }
}

impl Validate for CommentEvent {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.timestamp < 0 {
            return Err(format!("negative timestamp {}", self.timestamp));
        }
        Ok(())
    }
}

/// Records read from a JSONL file, with the lines that were skipped.
#[derive(Debug, Clone)]
pub struct Ingested<T> {
    pub records: Vec<T>,
    pub skipped: usize,
    pub diagnostics: Vec<String>,
}

/// Reads one record per line, skipping (and reporting) malformed lines.
///
/// Fails outright if the file cannot be read or if more than half of the
/// non-blank lines are malformed.
pub fn ingest_jsonl<T>(path: &Path) -> Result<Ingested<T>>
where
    T: DeserializeOwned + Validate,
{
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut diagnostics = Vec::new();
    let mut lines = 0usize;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        lines += 1;
        let parsed = serde_json::from_str::<T>(&line)
            .map_err(|e| e.to_string())
            .and_then(|r| r.validate().map(|_| r));
        match parsed {
            Ok(r) => records.push(r),
            Err(msg) => {
                let diag = format!("{}:{}: {}", path.display(), lineno + 1, msg);
                log::warn!("skipping line: {diag}");
                diagnostics.push(diag);
            }
        }
    }
    let skipped = diagnostics.len();
    if lines > 0 && skipped * 2 > lines {
        return Err(Error::Data(format!(
            "{}: {skipped} of {lines} lines malformed",
            path.display()
        )));
    }
    Ok(Ingested {
        records,
        skipped,
        diagnostics,
    })
}

/// Reads a JSONL file that is expected to be fully valid.
pub fn read_jsonl_strict<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            Error::Data(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
