//! File-format helpers shared by the pipeline stages: JSONL streams,
//! SHA-256 digests, and provenance sidecars.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{AuditError, Result};

/// Reads a JSONL file into a vector, one deserialized record per non-empty line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| AuditError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| AuditError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| AuditError::parse(path, idx + 1, e.to_string()))?;
        out.push(record);
    }
    Ok(out)
}

/// Writes records as JSONL, one line per record.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| AuditError::io(path, e))?;
    let mut writer = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| AuditError::Invalid(format!("serialize {}: {e}", path.display())))?;
        writer
            .write_all(line.as_bytes())
            .and_then(|_| writer.write_all(b"\n"))
            .map_err(|e| AuditError::io(path, e))?;
    }
    writer.flush().map_err(|e| AuditError::io(path, e))
}

/// An appending JSONL writer used by the gateway sink.
pub struct JsonlSink {
    writer: BufWriter<File>,
    path: std::path::PathBuf,
}

impl JsonlSink {
    pub fn append(path: &Path) -> Result<Self> {
        let file = File::options()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| AuditError::io(path, e))?;
        Ok(JsonlSink {
            writer: BufWriter::new(file),
            path: path.to_path_buf(),
        })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let line = serde_json::to_string(record)
            .map_err(|e| AuditError::Invalid(format!("serialize sink record: {e}")))?;
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.write_all(b"\n"))
            .map_err(|e| AuditError::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.writer.flush().map_err(|e| AuditError::io(&self.path, e))
    }
}

/// SHA-256 hex digest of a file's contents.
pub fn file_digest(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| AuditError::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).map_err(|e| AuditError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex_digest(&hasher.finalize()))
}

/// SHA-256 hex digest of a byte string.
pub fn bytes_digest(bytes: &[u8]) -> String {
    hex_digest(&Sha256::digest(bytes))
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Provenance sidecar written next to every stage output: tool version,
/// configuration hash, and digests of the stage inputs. Contains no wall-clock
/// fields so re-runs stay byte-identical.
#[derive(Debug, Serialize, serde::Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Provenance {
            tool: format!("audit {}", env!("CARGO_PKG_VERSION")),
            config_hash: config_hash.into(),
            inputs: BTreeMap::new(),
        }
    }

    pub fn with_input(mut self, name: &str, path: &Path) -> Result<Self> {
        self.inputs
            .insert(name.to_string(), file_digest(path)?);
        Ok(self)
    }

    /// Writes the sidecar as `<output>.provenance.json`.
    pub fn write_for(&self, output: &Path) -> Result<()> {
        let sidecar = sidecar_path(output);
        let body = serde_json::to_string_pretty(self)
            .map_err(|e| AuditError::Invalid(format!("serialize provenance: {e}")))?;
        std::fs::write(&sidecar, body).map_err(|e| AuditError::io(&sidecar, e))
    }
}

pub fn sidecar_path(output: &Path) -> std::path::PathBuf {
    let mut name = output
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str(".provenance.json");
    output.with_file_name(name)
}
