//! Run manifests: the merged configuration, hashes of every input and
//! output, and timestamps. Each output directory owns one `manifest.json`.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliResult;

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub config_hash: String,
    /// SHA-256 over the sorted input digests.
    pub input_hash: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub status: Status,
    pub created_unix: u64,
    pub finished_unix: Option<u64>,
    #[serde(default)]
    pub summary: Value,
}

impl RunManifest {
    pub fn new(command: &str, config: Value, config_hash: String, inputs: Vec<FileDigest>) -> Self {
        let input_hash = combine(&inputs);
        Self {
            command: command.into(),
            config,
            config_hash,
            input_hash,
            inputs,
            outputs: Vec::new(),
            status: Status::Running,
            created_unix: now(),
            finished_unix: None,
            summary: Value::Null,
        }
    }

    pub fn path(dir: &Path) -> PathBuf {
        dir.join(FILE_NAME)
    }

    pub fn load(dir: &Path) -> CliResult<Option<Self>> {
        let path = Self::path(dir);
        match fs::read(&path) {
            Ok(bytes) => Ok(Some(
                serde_json::from_slice(&bytes).map_err(|e| format!("{}: {e}", path.display()))?,
            )),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(format!("{}: {e}", path.display()).into()),
        }
    }

    pub fn save(&self, dir: &Path) -> CliResult<()> {
        fs::create_dir_all(dir)?;
        let tmp = dir.join(".manifest.json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(self)?)?;
        fs::rename(tmp, Self::path(dir))?;
        Ok(())
    }

    /// Records outputs (hashing each) and marks the run complete.
    pub fn complete(&mut self, outputs: &[PathBuf], summary: Value) -> CliResult<()> {
        self.outputs = outputs.iter().map(|p| digest(p)).collect::<CliResult<_>>()?;
        self.summary = summary;
        self.status = Status::Complete;
        self.finished_unix = Some(now());
        Ok(())
    }

    /// Checks that every recorded output still exists with its recorded hash.
    pub fn outputs_intact(&self) -> bool {
        self.outputs
            .iter()
            .all(|o| digest(&o.path).is_ok_and(|d| d.sha256 == o.sha256))
    }
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn digest(path: &Path) -> CliResult<FileDigest> {
    let mut file = fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256: hex(&hasher.finalize()),
    })
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn combine(inputs: &[FileDigest]) -> String {
    let mut lines: Vec<String> = inputs
        .iter()
        .map(|d| format!("{} {}", d.sha256, d.path.display()))
        .collect();
    lines.sort();
    hash_bytes(lines.join("\n").as_bytes())
}
