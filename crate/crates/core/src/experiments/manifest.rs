//! Run manifest: hashes of the config and every emitted data file, so a
//! rerun with the same config can be checked for byte-identical artifacts.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub experiment: String,
    pub config_sha256: String,
    /// Informational only; not part of any determinism comparison.
    pub wall_clock_secs: f64,
    /// Relative path -> sha256 of contents.
    pub files: BTreeMap<String, String>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(data: &[u8]) -> String {
    hex(&Sha256::digest(data))
}

impl RunManifest {
    pub fn new(experiment: &str, config_json: &[u8]) -> RunManifest {
        RunManifest {
            format_version: 1,
            experiment: experiment.to_string(),
            config_sha256: sha256_hex(config_json),
            wall_clock_secs: 0.0,
            files: BTreeMap::new(),
        }
    }

    /// Hashes an already-written artifact under `out_dir`.
    pub fn record(&mut self, out_dir: &Path, relative: &str) -> Result<()> {
        let data = std::fs::read(out_dir.join(relative))?;
        self.files.insert(relative.to_string(), sha256_hex(&data));
        Ok(())
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(out_dir)?;
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        std::fs::write(out_dir.join(MANIFEST_FILE), json)?;
        Ok(())
    }

    pub fn read(out_dir: &Path) -> Result<RunManifest> {
        let bytes = std::fs::read(out_dir.join(MANIFEST_FILE))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_and_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.csv"), "x\n1\n").unwrap();
        let mut m = RunManifest::new("demo", b"{}");
        m.record(dir.path(), "a.csv").unwrap();
        m.wall_clock_secs = 1.25;
        m.write(dir.path()).unwrap();
        let back = RunManifest::read(dir.path()).unwrap();
        assert_eq!(back.files, m.files);
        assert_eq!(back.config_sha256, m.config_sha256);
        assert_eq!(back.files["a.csv"], sha256_hex(b"x\n1\n"));
    }
}
