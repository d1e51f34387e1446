//! Run directories and their manifest.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub verb: String,
    pub seed: Option<u64>,
    /// SHA-256 of the configuration the run was produced from.
    pub config_hash: Option<String>,
    pub versions: Versions,
    pub created_unix: u64,
    /// Verb-specific inputs and headline results.
    #[serde(default)]
    pub details: Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Versions {
    pub ranscope: String,
    pub tbs_table_sha256: String,
    pub mcs_qam64_sha256: String,
    pub mcs_qam256_sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Versions {
    pub fn current() -> Self {
        Self {
            ranscope: env!("CARGO_PKG_VERSION").to_string(),
            tbs_table_sha256: sha256_hex(ranscope::tbs::TBS_TABLE_CSV.as_bytes()),
            mcs_qam64_sha256: sha256_hex(ranscope::dci::mcs::MCS_QAM64_CSV.as_bytes()),
            mcs_qam256_sha256: sha256_hex(ranscope::dci::mcs::MCS_QAM256_CSV.as_bytes()),
        }
    }
}

pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn create(path: &Path) -> Result<Self> {
        std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Self { path: path.to_path_buf() })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        std::fs::write(self.file(name), text + "\n").with_context(|| format!("writing {name}"))
    }

    pub fn write_csv<T: Serialize>(&self, name: &str, rows: impl IntoIterator<Item = T>) -> Result<()> {
        let mut w = csv::Writer::from_path(self.file(name)).with_context(|| format!("writing {name}"))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_manifest(&self, verb: &str, seed: Option<u64>, config_hash: Option<String>, details: Value) -> Result<()> {
        let created_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let m = Manifest {
            tool: "ranscope".into(),
            verb: verb.into(),
            seed,
            config_hash,
            versions: Versions::current(),
            created_unix,
            details,
        };
        self.write_json(MANIFEST_FILE, &m)
    }
}

pub fn read_manifest(dir: &Path) -> Result<Option<Manifest>> {
    let p = dir.join(MANIFEST_FILE);
    if !p.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&p)?;
    Ok(Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?))
}
