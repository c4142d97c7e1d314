use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SCHEMA: u32 = 1;

pub fn sha256(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Hash of the canonical JSON form of any serializable certificate.
pub fn hash_of<T: Serialize>(v: &T) -> String {
    sha256(serde_json::to_string(v).expect("serializable").as_bytes())
}

/// Output files staged in memory and written together, so a failed run leaves nothing behind.
#[derive(Default)]
pub struct Bundle {
    files: BTreeMap<String, String>,
}

impl Bundle {
    pub fn add(&mut self, name: &str, contents: String) {
        self.files.insert(name.to_string(), contents);
    }

    /// Writes the staged files and `report.json`, which lists their hashes.
    pub fn write(self, dir: &Path, mut report: Value) -> Result<(), CliError> {
        let io = |e: std::io::Error| CliError::Config(format!("cannot write to {}: {e}", dir.display()));
        let hashes: BTreeMap<_, _> = self.files.iter().map(|(n, c)| (n.clone(), sha256(c.as_bytes()))).collect();
        report["schema"] = json!(SCHEMA);
        report["files"] = json!(hashes);
        std::fs::create_dir_all(dir).map_err(io)?;
        for (name, contents) in &self.files {
            std::fs::write(dir.join(name), contents).map_err(io)?;
        }
        let text = serde_json::to_string_pretty(&report).expect("json") + "\n";
        std::fs::write(dir.join("report.json"), text).map_err(io)
    }
}
