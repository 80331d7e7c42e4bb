use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunMeta;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Columnar numeric output with a unit per column.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub columns: Vec<(String, String)>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[(&str, &str)]) -> Self {
        Table {
            columns: columns.iter().map(|(n, u)| (n.to_string(), u.to_string())).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn units_line(table: &Table) -> String {
    table
        .columns
        .iter()
        .map(|(n, u)| format!("{n}={u}"))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn csv_header(meta: &RunMeta, extra: &[(&str, String)]) -> String {
    let mut s = format!(
        "# {} {}\n# model: {}\n# seed: {}\n# config_sha256: {}\n",
        meta.tool, meta.version, meta.model, meta.seed, meta.config_sha256
    );
    for (k, v) in extra {
        s.push_str(&format!("# {k}: {v}\n"));
    }
    s
}

pub fn write_table(dir: &Path, stem: &str, format: Format, meta: &RunMeta, table: &Table) -> Result<PathBuf> {
    ensure_dir(dir)?;
    let (path, body) = match format {
        Format::Csv => {
            let mut s = csv_header(meta, &[("units", units_line(table))]);
            let names: Vec<&str> = table.columns.iter().map(|(n, _)| n.as_str()).collect();
            s.push_str(&names.join(","));
            s.push('\n');
            for row in &table.rows {
                let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                s.push_str(&cells.join(","));
                s.push('\n');
            }
            (dir.join(format!("{stem}.csv")), s)
        }
        Format::Json => {
            let units: serde_json::Map<String, Value> =
                table.columns.iter().map(|(n, u)| (n.clone(), Value::from(u.as_str()))).collect();
            let doc = json!({
                "meta": meta,
                "columns": table.columns.iter().map(|(n, _)| n).collect::<Vec<_>>(),
                "units": units,
                "rows": table.rows,
            });
            (dir.join(format!("{stem}.json")), format!("{doc:#}\n"))
        }
    };
    write_file(&path, body.as_bytes())?;
    Ok(path)
}

pub fn write_report<P: Serialize, S: Serialize>(dir: &Path, stem: &str, meta: &RunMeta, params: &P, summary: &S) -> Result<PathBuf> {
    ensure_dir(dir)?;
    let doc = json!({ "meta": meta, "params": params, "summary": summary });
    let path = dir.join(format!("{stem}.report.json"));
    write_file(&path, format!("{doc:#}\n").as_bytes())?;
    Ok(path)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(bytes).map_err(|e| CliError::io(path, e))
}
