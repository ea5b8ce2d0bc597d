//! Artifact files: CSV tables, the summary and the manifest.

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::Path;

/// Bumped whenever a table changes its columns.
pub const CSV_SCHEMA_VERSION: u32 = 1;

pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn to_bytes(&self) -> csv::Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| e.into_error().into())
    }
}

/// What one experiment produces.
pub struct Artifacts {
    pub tables: Vec<Table>,
    pub summary: Value,
}

/// Shortest round-trip form, exponent notation for extreme magnitudes.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn flag(b: bool) -> String {
    (if b { "1" } else { "0" }).into()
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

#[derive(Serialize)]
struct FileEntry {
    name: String,
    sha256: String,
    bytes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    columns: Option<Vec<String>>,
}

#[derive(Serialize)]
pub struct RunInfo<'a> {
    pub kind: &'a str,
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub workers: usize,
    pub wall_time_seconds: f64,
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(dir.join(name)).map_err(|e| e.error)?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes every table, `summary.json` and finally `manifest.json`.
pub fn emit(dir: &Path, art: &Artifacts, info: &RunInfo) -> Result<(), String> {
    std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let mut files = Vec::new();
    let mut put = |name: &str, bytes: Vec<u8>, columns: Option<Vec<String>>| -> Result<(), String> {
        write_atomic(dir, name, &bytes).map_err(|e| format!("{name}: {e}"))?;
        files.push(FileEntry { name: name.into(), sha256: sha256_hex(&bytes), bytes: bytes.len(), columns });
        Ok(())
    };
    for t in &art.tables {
        let bytes = t.to_bytes().map_err(|e| e.to_string())?;
        put(&format!("{}.csv", t.name), bytes, Some(t.columns.clone()))?;
    }
    let mut summary = serde_json::to_vec_pretty(&art.summary).map_err(|e| e.to_string())?;
    summary.push(b'\n');
    put("summary.json", summary, None)?;
    let manifest = serde_json::json!({
        "tool": "rwre",
        "version": env!("CARGO_PKG_VERSION"),
        "csv_schema_version": CSV_SCHEMA_VERSION,
        "run": info,
        "files": files,
    });
    let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| e.to_string())?;
    bytes.push(b'\n');
    write_atomic(dir, "manifest.json", &bytes).map_err(|e| format!("manifest.json: {e}"))
}
