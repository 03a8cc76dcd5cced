//! Top-k checkpoints by validation loss.
//!
//! Layout under a run directory:
//!
//! ```text
//! ledger.json
//! checkpoints/epoch-NNN/config.json   model configuration
//! checkpoints/epoch-NNN/params.bin    parameter tensors
//! checkpoints/epoch-NNN/hidden.json   influence state at the end of the epoch
//! checkpoints/epoch-NNN/record.json   epoch, train and validation loss
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ChatterNet, InfluenceState, ModelConfig, ModelParams};

pub const LEDGER_FILE: &str = "ledger.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub val_loss: f64,
    pub epoch: usize,
    /// Relative to the run directory.
    pub path: PathBuf,
}

/// Best checkpoints, ascending by validation loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointLedger {
    pub capacity: usize,
    pub entries: Vec<LedgerEntry>,
}

/// Outcome of offering a checkpoint to the ledger.
#[derive(Debug, Clone, PartialEq)]
pub enum Admission {
    Rejected,
    /// Admitted; holds the entry pushed out, if any.
    Admitted(Option<LedgerEntry>),
}

impl CheckpointLedger {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn best(&self) -> Option<&LedgerEntry> {
        self.entries.first()
    }

    /// Whether a checkpoint with this loss would be kept. Ties go to the
    /// entries already present.
    pub fn admits(&self, val_loss: f64) -> bool {
        self.capacity > 0
            && (self.entries.len() < self.capacity
                || self.entries.last().is_some_and(|worst| val_loss < worst.val_loss))
    }

    pub fn insert(&mut self, entry: LedgerEntry) -> Result<Admission> {
        if !entry.val_loss.is_finite() {
            return Err(Error::Numerical(format!(
                "validation loss {} for epoch {} is not finite",
                entry.val_loss, entry.epoch
            )));
        }
        if !self.admits(entry.val_loss) {
            return Ok(Admission::Rejected);
        }
        let at = self.entries.partition_point(|e| e.val_loss <= entry.val_loss);
        self.entries.insert(at, entry);
        let evicted = (self.entries.len() > self.capacity).then(|| self.entries.pop()).flatten();
        Ok(Admission::Admitted(evicted))
    }

    /// Writes to a temporary file and renames it into place.
    pub fn save(&self, run_dir: &Path) -> Result<()> {
        write_atomic(&run_dir.join(LEDGER_FILE), serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(LEDGER_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// A saved model.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub net: ChatterNet,
    pub hidden: InfluenceState,
    pub record: EpochRecord,
}

impl Checkpoint {
    pub fn save(dir: &Path, net: &ChatterNet, hidden: &InfluenceState, record: &EpochRecord) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join("config.json"), serde_json::to_string_pretty(&net.config)?.as_bytes())?;
        write_atomic(&dir.join("params.bin"), &net.params.to_bytes())?;
        write_atomic(&dir.join("hidden.json"), serde_json::to_string(hidden)?.as_bytes())?;
        write_atomic(&dir.join("record.json"), serde_json::to_string_pretty(record)?.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
        };
        let config: ModelConfig = serde_json::from_str(&read("config.json")?)?;
        let params = ModelParams::load(&dir.join("params.bin"))?;
        Ok(Self {
            net: ChatterNet::from_params(config, params)?,
            hidden: serde_json::from_str(&read("hidden.json")?)?,
            record: serde_json::from_str(&read("record.json")?)?,
        })
    }
}

/// Offers the current model to the ledger. An admitted model is written to
/// disk, an evicted one is deleted, and the ledger file is rewritten.
pub fn checkpoint(
    ledger: &mut CheckpointLedger,
    run_dir: &Path,
    net: &ChatterNet,
    hidden: &InfluenceState,
    record: &EpochRecord,
) -> Result<bool> {
    if !record.val_loss.is_finite() {
        return Err(Error::Numerical(format!(
            "validation loss {} for epoch {} is not finite",
            record.val_loss, record.epoch
        )));
    }
    if !ledger.admits(record.val_loss) {
        return Ok(false);
    }
    let rel = PathBuf::from(CHECKPOINT_DIR).join(format!("epoch-{:03}", record.epoch));
    Checkpoint::save(&run_dir.join(&rel), net, hidden, record)?;
    let admission = ledger.insert(LedgerEntry {
        val_loss: record.val_loss,
        epoch: record.epoch,
        path: rel,
    })?;
    ledger.save(run_dir)?;
    if let Admission::Admitted(Some(evicted)) = admission {
        let dir = run_dir.join(&evicted.path);
        fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    Ok(true)
}
