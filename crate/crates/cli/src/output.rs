//! Artifact files. Every CSV starts with (or, for flow files, follows its
//! cell header with) a `# config_hash=<sha256> seed=<seed>` line; every JSON
//! document carries `config_hash` and `seed` fields.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use crate::CliError;

pub struct Artifacts {
    dir: PathBuf,
    hash: String,
    seed: u64,
    written: Vec<String>,
}

impl Artifacts {
    pub fn new(dir: &Path, hash: String, seed: u64) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        Ok(Artifacts { dir: dir.to_path_buf(), hash, seed, written: Vec::new() })
    }

    pub fn provenance_line(&self) -> String {
        format!("# config_hash={} seed={}\n", self.hash, self.seed)
    }

    /// Names of the files written since the last call.
    pub fn take_written(&mut self) -> Vec<String> {
        std::mem::take(&mut self.written)
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        fs::write(self.dir.join(name), bytes)?;
        self.written.push(name.to_string());
        Ok(())
    }

    /// Writes `body` behind the provenance line.
    pub fn write_text(&mut self, name: &str, body: &[u8]) -> Result<(), CliError> {
        let mut bytes = self.provenance_line().into_bytes();
        bytes.extend_from_slice(body);
        self.put(name, &bytes)
    }

    /// Writes a flow file, keeping its cell header on the first line.
    pub fn write_flow(&mut self, name: &str, body: &[u8]) -> Result<(), CliError> {
        let split = body.iter().position(|&b| b == b'\n').map_or(body.len(), |i| i + 1);
        let mut bytes = body[..split].to_vec();
        bytes.extend_from_slice(self.provenance_line().as_bytes());
        bytes.extend_from_slice(&body[split..]);
        self.put(name, &bytes)
    }

    pub fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in rows {
            w.serialize(row).map_err(|e| CliError::Output(e.to_string()))?;
        }
        let body = w.into_inner().map_err(|e| CliError::Output(e.to_string()))?;
        self.write_text(name, &body)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, report: &T) -> Result<(), CliError> {
        let doc = json!({ "config_hash": self.hash, "seed": self.seed, "report": report });
        let mut text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Output(e.to_string()))?;
        text.push('\n');
        self.put(name, text.as_bytes())
    }
}
