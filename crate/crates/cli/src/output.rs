//! JSON result documents and CSV side tables.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    schema_version: u32,
    tool: &'static str,
    tool_version: &'static str,
    command: &'a str,
    config: std::collections::BTreeMap<String, serde_json::Value>,
    result: &'a T,
}

/// A CSV table kept in memory until the run finishes.
pub struct Table {
    pub name: &'static str,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &'static str, header: &[&str]) -> Self {
        Table { name, header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// Shortest round-trip representation.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "Inf".into()
    } else {
        "-Inf".into()
    }
}

fn side_path(out: &Path, name: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("result");
    out.with_file_name(format!("{stem}.{name}.csv"))
}

/// Writes the JSON document (stdout when no output path is set) and each
/// table as `<stem>.<name>.csv` next to it.
pub fn emit<T: Serialize>(cfg: &RunConfig, command: &str, result: &T, tables: &[Table]) -> Result<(), CliError> {
    let doc = Document {
        schema_version: SCHEMA_VERSION,
        tool: "survsel",
        tool_version: env!("CARGO_PKG_VERSION"),
        command,
        config: cfg.echo(),
        result,
    };
    let mut json = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Io(e.to_string()))?;
    json.push('\n');
    match &cfg.output {
        None => {
            std::io::stdout().write_all(json.as_bytes()).map_err(|e| CliError::Io(e.to_string()))?;
        }
        Some(out) => {
            std::fs::write(out, json).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
            for t in tables {
                let path = side_path(out, t.name);
                let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                w.write_record(&t.header).map_err(|e| CliError::Io(e.to_string()))?;
                for r in &t.rows {
                    w.write_record(r).map_err(|e| CliError::Io(e.to_string()))?;
                }
                w.flush().map_err(|e| CliError::Io(e.to_string()))?;
                log::info!("wrote {}", path.display());
            }
            log::info!("wrote {}", out.display());
        }
    }
    Ok(())
}
