//! Run manifests: everything needed to tell whether two outputs came from
//! the same inputs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, write_file, ReportError, Result};
use crate::backend::BackendDescriptor;
use crate::lexicon::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub id: String,
    pub descriptor: BackendDescriptor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    /// `run`, `stats` or `plot`.
    pub command: String,
    pub experiment: Option<String>,
    pub seed: u64,
    pub models: Vec<ModelEntry>,
    /// Resource name -> sha256 of the lexicon bytes actually used.
    pub lexicon_hashes: BTreeMap<String, String>,
    /// Other input files (config, tables, corpora) -> sha256.
    pub inputs: BTreeMap<String, String>,
    /// The configuration section that drove the command.
    pub config: serde_json::Value,
    pub drop_summary: BTreeMap<String, usize>,
    pub expected: usize,
    pub emitted: usize,
    pub dropped: usize,
    /// Output path (as configured) -> sha256 of the bytes written.
    pub outputs: BTreeMap<String, String>,
    /// Seconds since the epoch; taken from `SOURCE_DATE_EPOCH` when set.
    pub created_unix: u64,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64) -> Self {
        RunManifest {
            toolkit_version: crate::TOOLKIT_VERSION.to_string(),
            command: command.to_string(),
            experiment: None,
            seed,
            models: Vec::new(),
            lexicon_hashes: BTreeMap::new(),
            inputs: BTreeMap::new(),
            config: serde_json::Value::Null,
            drop_summary: BTreeMap::new(),
            expected: 0,
            emitted: 0,
            dropped: 0,
            outputs: BTreeMap::new(),
            created_unix: now_unix(),
        }
    }

    /// Hashes `bytes` under `name` in `inputs`.
    pub fn add_input(&mut self, name: &str, bytes: &[u8]) {
        self.inputs.insert(name.to_string(), sha256_hex(bytes));
    }

    pub fn add_output(&mut self, name: &str, bytes: &[u8]) {
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| ReportError::Parse {
            line: e.line(),
            reason: e.to_string(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_json().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    /// Checks recorded output hashes against files under `base_dir`.
    /// Returns the names whose bytes no longer match.
    pub fn verify_outputs(&self, base_dir: &Path) -> Vec<String> {
        self.outputs
            .iter()
            .filter(|(name, hash)| match std::fs::read(base_dir.join(name)) {
                Ok(bytes) => sha256_hex(&bytes) != **hash,
                Err(_) => true,
            })
            .map(|(name, _)| name.clone())
            .collect()
    }
}

fn now_unix() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.trim().parse().ok()) {
        return t;
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let mut m = RunManifest::new("run", 7);
        m.experiment = Some("e1".into());
        m.add_input("config.toml", b"seed = 7\n");
        m.add_output("e1.tsv", b"x");
        m.drop_summary.insert("out of vocabulary".into(), 2);
        assert_eq!(RunManifest::from_json(&m.to_json()).unwrap(), m);
    }

    #[test]
    fn hashes_track_bytes() {
        let mut a = RunManifest::new("run", 1);
        let mut b = a.clone();
        a.add_input("x", b"abc");
        b.add_input("x", b"abc");
        assert_eq!(a.inputs, b.inputs);
        b.add_input("x", b"abd");
        assert_ne!(a.inputs, b.inputs);
    }

    #[test]
    fn verify_flags_changed_outputs() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("t.tsv"), b"one").unwrap();
        let mut m = RunManifest::new("run", 1);
        m.add_output("t.tsv", b"one");
        assert!(m.verify_outputs(dir.path()).is_empty());
        std::fs::write(dir.path().join("t.tsv"), b"two").unwrap();
        assert_eq!(m.verify_outputs(dir.path()), vec!["t.tsv".to_string()]);
    }
}
