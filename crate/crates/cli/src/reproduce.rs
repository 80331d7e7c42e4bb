use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde_json::json;

use nvcav_core::golden::{figure, Check, Figure};

use crate::config::{RunConfig, RunMeta};
use crate::error::{CliError, Result};
use crate::output::write_report;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FigureArg {
    Fig1d,
    Fig2,
    Fig3c,
    Fig3d,
    Fig4a,
    Fig4b,
    Fig4c,
}

impl From<FigureArg> for Figure {
    fn from(f: FigureArg) -> Self {
        match f {
            FigureArg::Fig1d => Figure::Fig1d,
            FigureArg::Fig2 => Figure::Fig2,
            FigureArg::Fig3c => Figure::Fig3c,
            FigureArg::Fig3d => Figure::Fig3d,
            FigureArg::Fig4a => Figure::Fig4a,
            FigureArg::Fig4b => Figure::Fig4b,
            FigureArg::Fig4c => Figure::Fig4c,
        }
    }
}

/// Runs the reference checks for `fig`, prints one line per quantity and
/// writes a report. A failed check is returned as a tolerance error after
/// the report is on disk.
pub fn run(fig: FigureArg, cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let fig = Figure::from(fig);
    let checks: Vec<Check> = figure(fig);
    for c in &checks {
        println!("{c}");
    }
    let meta = RunMeta::new(cfg, &json!({ "figure": fig.id() }))?;
    let passed = checks.iter().all(|c| c.pass);
    let path = write_report(out, &format!("reproduce-{}", fig.id()), &meta, &json!({ "figure": fig.id() }), &json!({
        "passed": passed,
        "checks": checks,
    }))?;
    if passed {
        Ok(path)
    } else {
        let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.id.as_str()).collect();
        Err(CliError::Tolerance(failed.join(", ")))
    }
}
