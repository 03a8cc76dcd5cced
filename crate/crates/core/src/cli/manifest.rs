use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{COMMENTS_FILE, NEWS_FILE, STATS_FILE, SUBMISSIONS_FILE};
use crate::error::{Error, Result};
use crate::pipeline::RunConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Written once, before training starts, and never touched again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub seed: u64,
    pub config: RunConfig,
    /// sha256 of each store file, keyed by file name.
    pub data_fingerprints: BTreeMap<String, String>,
    pub artifact_version: String,
    pub config_digest: String,
    pub created_unix: u64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn fingerprint_store(dir: &Path) -> Result<BTreeMap<String, String>> {
    [NEWS_FILE, SUBMISSIONS_FILE, COMMENTS_FILE, STATS_FILE]
        .into_iter()
        .map(|name| Ok((name.to_string(), sha256_file(&dir.join(name))?)))
        .collect()
}

impl RunManifest {
    pub fn new(run_id: String, config: RunConfig, data_dir: &Path) -> Result<Self> {
        let config_digest = hex::encode(Sha256::digest(config.to_toml()?.as_bytes()));
        let created_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        Ok(Self {
            run_id,
            seed: config.seed,
            data_fingerprints: fingerprint_store(data_dir)?,
            artifact_version: format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
            config_digest,
            created_unix,
            config,
        })
    }

    /// Refuses to overwrite an existing manifest.
    pub fn write_new(&self, run_dir: &Path) -> Result<()> {
        fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
        let path = run_dir.join(MANIFEST_FILE);
        let mut file = fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let json = serde_json::to_string_pretty(self)? + "\n";
        std::io::Write::write_all(&mut file, json.as_bytes()).map_err(|e| Error::io(&path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Self = serde_json::from_str(&text)?;
        if manifest.seed != manifest.config.seed {
            return Err(Error::Data(format!("{}: seed disagrees with the config snapshot", path.display())));
        }
        Ok(manifest)
    }

    /// Errors unless `data_dir` hashes to the recorded fingerprints.
    pub fn check_data(&self, data_dir: &Path) -> Result<()> {
        let now = fingerprint_store(data_dir)?;
        for (name, want) in &self.data_fingerprints {
            if now.get(name) != Some(want) {
                return Err(Error::Data(format!(
                    "{} does not match the manifest fingerprint",
                    data_dir.join(name).display()
                )));
            }
        }
        Ok(())
    }
}
