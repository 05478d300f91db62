//! Run directories and result files.
//!
//! Each invocation writes into one subdirectory named
//! `<command>-<hash8>-s<seed>`, where `hash8` is the leading hex of the
//! SHA-256 of the resolved configuration. Result CSVs depend only on the
//! configuration and seed, so reruns are byte-identical; the wall-clock
//! timestamp lives in the manifest and nowhere else.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{Command, RunConfig};

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("row has {got} fields, header has {expected}")]
    RowShape { expected: usize, got: usize },
}

fn io_err(path: &Path, source: std::io::Error) -> OutputError {
    OutputError::Io { path: path.display().to_string(), source }
}

/// SHA-256 of the resolved configuration text, lowercase hex.
pub fn config_hash(resolved_toml: &str) -> String {
    let digest = Sha256::digest(resolved_toml.as_bytes());
    let mut out = String::with_capacity(64);
    for byte in digest {
        let _ = std::fmt::Write::write_fmt(&mut out, format_args!("{byte:02x}"));
    }
    out
}

/// Float formatting used in every CSV: shortest text that parses back to
/// the same value, `.` as the decimal mark.
pub fn float(x: f64) -> String {
    format!("{x:?}")
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    run_id: &'a str,
    config_sha256: &'a str,
    seed: u64,
    created_unix_ms: u128,
    config: &'a str,
}

pub struct RunDir {
    dir: PathBuf,
    run_id: String,
    config_sha256: String,
}

impl RunDir {
    /// Create the run directory under `out_root` and write its manifest.
    pub fn create(
        out_root: &Path,
        command: Command,
        cfg: &RunConfig,
    ) -> Result<RunDir, OutputError> {
        let resolved = cfg.to_toml();
        let hash = config_hash(&resolved);
        let run_id = format!("{}-{}-s{}", command.name(), &hash[..8], cfg.run.seed);
        let dir = out_root.join(&run_id);
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;

        let created_unix_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0);
        let manifest = Manifest {
            command: command.name(),
            run_id: &run_id,
            config_sha256: &hash,
            seed: cfg.run.seed,
            created_unix_ms,
            config: &resolved,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        let path = dir.join("manifest.json");
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;

        Ok(RunDir { dir, run_id, config_sha256: hash })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn config_sha256(&self) -> &str {
        &self.config_sha256
    }

    /// Open a CSV file and write its header row.
    pub fn csv(&self, name: &str, header: &[&str]) -> Result<CsvWriter, OutputError> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| io_err(&path, e))?;
        let mut w = CsvWriter {
            out: BufWriter::new(file),
            path,
            columns: header.len(),
        };
        let owned: Vec<String> = header.iter().map(|h| h.to_string()).collect();
        w.row(&owned)?;
        Ok(w)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, OutputError> {
        let path = self.dir.join(name);
        let text = serde_json::to_string_pretty(value).expect("report serializes");
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        Ok(path)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf, OutputError> {
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        Ok(path)
    }
}

pub struct CsvWriter {
    out: BufWriter<File>,
    path: PathBuf,
    columns: usize,
}

impl CsvWriter {
    pub fn row(&mut self, fields: &[String]) -> Result<(), OutputError> {
        if fields.len() != self.columns {
            return Err(OutputError::RowShape { expected: self.columns, got: fields.len() });
        }
        let mut line = String::new();
        for (i, field) in fields.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            if field.contains([',', '"', '\n']) {
                line.push('"');
                line.push_str(&field.replace('"', "\"\""));
                line.push('"');
            } else {
                line.push_str(field);
            }
        }
        line.push('\n');
        self.out
            .write_all(line.as_bytes())
            .map_err(|e| io_err(&self.path, e))
    }

    pub fn finish(mut self) -> Result<PathBuf, OutputError> {
        self.out.flush().map_err(|e| io_err(&self.path, e))?;
        Ok(self.path)
    }
}
