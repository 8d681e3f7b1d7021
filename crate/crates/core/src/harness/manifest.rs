use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::kv::KvMap;

/// Manifest log inside every output directory, one JSON object per line.
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    /// Relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    /// RFC 3339, UTC.
    pub created_at: String,
    pub command: String,
    pub seeds: Vec<u64>,
    pub config: BTreeMap<String, String>,
    pub checkpoints: Vec<String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn digest_file(path: &Path) -> Result<String, HarnessError> {
    let bytes = fs::read(path).map_err(|e| HarnessError::file(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn relative(root: &Path, path: &Path) -> String {
    path.strip_prefix(root).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

impl RunManifest {
    pub fn new(command: &str, seeds: Vec<u64>, config: &KvMap) -> Self {
        let created_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Micros, true);
        let config: BTreeMap<String, String> = config.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update(created_at.as_bytes());
        h.update(serde_json::to_vec(&(&seeds, &config)).expect("plain data"));
        let run_id = hex::encode(h.finalize())[..16].to_string();
        Self {
            run_id,
            created_at,
            command: command.to_string(),
            seeds,
            config,
            checkpoints: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, root: &Path, path: &Path) -> Result<(), HarnessError> {
        self.inputs.push(FileDigest {
            path: relative(root, path),
            sha256: digest_file(path)?,
        });
        Ok(())
    }

    pub fn add_output(&mut self, root: &Path, path: &Path) -> Result<(), HarnessError> {
        self.outputs.push(FileDigest {
            path: relative(root, path),
            sha256: digest_file(path)?,
        });
        Ok(())
    }

    pub fn add_checkpoint(&mut self, root: &Path, path: &Path) -> Result<(), HarnessError> {
        self.checkpoints.push(relative(root, path));
        self.add_output(root, path)
    }

    /// Appends this manifest as one line of `dir/manifest.jsonl`.
    pub fn append(&self, dir: &Path) -> Result<(), HarnessError> {
        let path = dir.join(MANIFEST_FILE);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| HarnessError::file(&path, e))?;
        writeln!(f, "{}", serde_json::to_string(self)?).map_err(|e| HarnessError::file(&path, e))?;
        Ok(())
    }

    /// Checks every output digest against the files under `root`. Relative
    /// input paths are checked too; absolute ones may live elsewhere.
    pub fn verify(&self, root: &Path) -> Result<(), HarnessError> {
        for d in self.outputs.iter().chain(&self.inputs) {
            let path = root.join(&d.path);
            let actual = digest_file(&path)?;
            if actual != d.sha256 {
                return Err(HarnessError::Digest {
                    path: d.path.clone(),
                    expected: d.sha256.clone(),
                    actual,
                });
            }
        }
        Ok(())
    }

    pub fn config_kv(&self) -> KvMap {
        let mut kv = KvMap::default();
        for (k, v) in &self.config {
            kv.insert(k.clone(), v);
        }
        kv
    }
}

/// Every manifest in `dir/manifest.jsonl`, oldest first.
pub fn read_manifests(dir: &Path) -> Result<Vec<RunManifest>, HarnessError> {
    let path = dir.join(MANIFEST_FILE);
    let f = fs::File::open(&path).map_err(|e| HarnessError::file(&path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| HarnessError::file(&path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digests_verify_and_detect_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("out.csv");
        fs::write(&f, "a,b\n1,2\n").unwrap();
        let mut kv = KvMap::default();
        kv.insert("x", 1);
        let mut m = RunManifest::new("simulate", vec![1, 2], &kv);
        m.add_output(dir.path(), &f).unwrap();
        assert_eq!(m.outputs[0].path, "out.csv");
        assert_eq!(
            m.outputs[0].sha256,
            hex::encode(Sha256::digest(b"a,b\n1,2\n"))
        );
        m.append(dir.path()).unwrap();
        m.append(dir.path()).unwrap();
        let back = read_manifests(dir.path()).unwrap();
        assert_eq!(back, vec![m.clone(), m.clone()]);
        back[0].verify(dir.path()).unwrap();
        assert_eq!(back[0].config_kv().get_str("x"), Some("1"));
        fs::write(&f, "a,b\n1,3\n").unwrap();
        assert!(matches!(back[0].verify(dir.path()), Err(HarnessError::Digest { .. })));
    }
}
