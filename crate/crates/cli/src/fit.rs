use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use serde_json::json;

use nvcav_core::decay::{fit_lifetime, LifetimeFitConfig};
use nvcav_core::fit::CurveModel;
use nvcav_core::rfscan::{fit_doublet, homogeneous_fwhm_mhz, DoubletGuess, DoubletModel};
use nvcav_core::scenario;
use nvcav_core::units::rate_from_lifetime_ns;

use crate::config::{RunConfig, RunMeta};
use crate::error::{CliError, Result};
use crate::output::{write_report, write_table, Format, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitModel {
    RfLinewidth,
    Lifetime,
}

impl FitModel {
    pub fn id(&self) -> &'static str {
        match self {
            FitModel::RfLinewidth => "rf-linewidth",
            FitModel::Lifetime => "lifetime",
        }
    }

    /// Unit required of the abscissa column.
    fn x_unit(&self) -> &'static str {
        match self {
            FitModel::RfLinewidth => "MHz",
            FitModel::Lifetime => "ns",
        }
    }
}

/// Two numeric columns read from a comma-separated file.
#[derive(Debug, Clone, PartialEq)]
pub struct DataFile {
    pub names: Vec<String>,
    pub units: BTreeMap<String, String>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> CliError {
    CliError::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

/// Reads `x,y[,…]` rows. `#` lines are comments; one of them must declare
/// the column units as `# units: name=unit,name=unit`. A first row that is
/// not numeric is taken as the column names.
pub fn read_data(path: &Path) -> Result<DataFile> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut units = BTreeMap::new();
    let mut saw_units = false;
    for (i, line) in text.lines().enumerate() {
        if let Some(rest) = line.trim_start().strip_prefix('#') {
            if let Some(decl) = rest.trim().strip_prefix("units:") {
                saw_units = true;
                for pair in decl.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    let (k, v) = pair
                        .split_once('=')
                        .ok_or_else(|| parse_err(path, i as u64 + 1, format!("bad unit declaration '{pair}'")))?;
                    units.insert(k.trim().to_string(), v.trim().to_string());
                }
            }
        }
    }
    if !saw_units {
        return Err(parse_err(path, 1, "missing '# units:' declaration"));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut names = Vec::new();
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() < 2 {
            return Err(parse_err(path, line, format!("expected at least 2 columns, found {}", rec.len())));
        }
        let a = rec[0].parse::<f64>();
        let b = rec[1].parse::<f64>();
        match (a, b) {
            (Ok(a), Ok(b)) => {
                x.push(a);
                y.push(b);
            }
            _ if names.is_empty() && x.is_empty() => names = rec.iter().map(str::to_string).collect(),
            _ => return Err(parse_err(path, line, format!("non-numeric value in '{}'", rec.iter().collect::<Vec<_>>().join(",")))),
        }
    }
    if x.is_empty() {
        return Err(parse_err(path, text.lines().count() as u64, "no data rows"));
    }
    if names.is_empty() {
        names = vec!["x".into(), "y".into()];
    }
    Ok(DataFile { names, units, x, y })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DoubletFitParams {
    tau0_ns: f64,
    purcell: f64,
    shift_guess_mhz: f64,
    gamma_ext_guess_mhz: f64,
}

impl Default for DoubletFitParams {
    fn default() -> Self {
        DoubletFitParams {
            tau0_ns: scenario::TAU0_NS,
            purcell: scenario::F_M2,
            shift_guess_mhz: 150.0,
            gamma_ext_guess_mhz: 120.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct LifetimeFitParams {
    start_fraction: f64,
    end_ns: Option<f64>,
    floor_fraction: f64,
    poisson: bool,
}

impl Default for LifetimeFitParams {
    fn default() -> Self {
        let d = LifetimeFitConfig::default();
        LifetimeFitParams {
            start_fraction: d.start_fraction,
            end_ns: d.end_ns,
            floor_fraction: d.floor_fraction,
            poisson: d.poisson,
        }
    }
}

pub fn run(model: FitModel, data_path: &Path, cfg: &RunConfig, out: &Path, format: Format) -> Result<Vec<PathBuf>> {
    let data = read_data(data_path)?;
    let x_name = &data.names[0];
    match data.units.get(x_name) {
        Some(u) if u == model.x_unit() => {}
        Some(u) => {
            return Err(CliError::Usage(format!(
                "{}: column '{x_name}' is in {u}; {} fits need {}",
                data_path.display(),
                model.id(),
                model.x_unit()
            )))
        }
        None => {
            return Err(CliError::Usage(format!(
                "{}: no unit declared for column '{x_name}'",
                data_path.display()
            )))
        }
    }
    let stem = format!("fit-{}", model.id());
    let mut files = Vec::new();
    match model {
        FitModel::RfLinewidth => {
            let p: DoubletFitParams = cfg.params()?;
            let hom = homogeneous_fwhm_mhz(rate_from_lifetime_ns(p.tau0_ns), p.purcell);
            let guess = DoubletGuess { shift_mhz: p.shift_guess_mhz, gamma_ext_mhz: p.gamma_ext_guess_mhz };
            let f = fit_doublet(&data.x, &data.y, hom, &guess)?;
            let meta = RunMeta::new(cfg, &json!({"params": p, "data": data_digest(&data)}))?;
            let curve = DoubletModel { homogeneous_mhz: hom };
            let mut t = Table::new(&[(x_name, "MHz"), ("data", "counts"), ("model", "counts")]);
            for (a, b) in data.x.iter().zip(&data.y) {
                t.push(vec![*a, *b, curve.eval(*a, &f.fit.estimates)]);
            }
            files.push(write_table(out, &stem, format, &meta, &t)?);
            let summary = json!({
                "gamma_ext_mhz": f.gamma_ext_mhz,
                "gamma_ext_ci95_mhz": f.fit.ci("gamma_ext"),
                "shift_mhz": f.shift_mhz,
                "shift_ci95_mhz": f.fit.ci("shift"),
                "center_mhz": f.center_mhz,
                "background": f.background,
                "slr": f.slr,
                "contrast": f.contrast,
                "fit": f.fit,
            });
            files.push(write_report(out, &stem, &meta, &p, &summary)?);
        }
        FitModel::Lifetime => {
            let p: LifetimeFitParams = cfg.params()?;
            let lc = LifetimeFitConfig {
                start_fraction: p.start_fraction,
                end_ns: p.end_ns,
                floor_fraction: p.floor_fraction,
                poisson: p.poisson,
            };
            let f = fit_lifetime(&data.x, &data.y, &lc)?;
            let meta = RunMeta::new(cfg, &json!({"params": p, "data": data_digest(&data)}))?;
            let mut t = Table::new(&[(x_name, "ns"), ("data", "counts"), ("model", "counts")]);
            for (a, b) in data.x.iter().zip(&data.y) {
                let m = if *a >= f.t_start_ns { f.amplitude * (-(a - f.t_start_ns) / f.tau_ns).exp() } else { f64::NAN };
                t.push(vec![*a, *b, m]);
            }
            files.push(write_table(out, &stem, format, &meta, &t)?);
            files.push(write_report(out, &stem, &meta, &p, &f)?);
        }
    }
    Ok(files)
}

fn data_digest(d: &DataFile) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for (a, b) in d.x.iter().zip(&d.y) {
        h.update(a.to_le_bytes());
        h.update(b.to_le_bytes());
    }
    format!("{:x}", h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_header_units_and_rows() {
        let f = file("# units: t=ns,counts=1\nt,counts\n0,10\n1.5,8\n");
        let d = read_data(f.path()).unwrap();
        assert_eq!(d.names, vec!["t", "counts"]);
        assert_eq!(d.x, vec![0.0, 1.5]);
        assert_eq!(d.units["t"], "ns");
    }

    #[test]
    fn bad_row_names_its_line() {
        let f = file("# units: t=ns,counts=1\nt,counts\n0,10\n1,abc\n");
        match read_data(f.path()).unwrap_err() {
            CliError::Parse { line, .. } => assert_eq!(line, 4),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn empty_and_unitless_files_rejected() {
        let f = file("# units: t=ns,counts=1\nt,counts\n");
        assert!(matches!(read_data(f.path()), Err(CliError::Parse { .. })));
        let f = file("0,1\n1,2\n");
        assert!(matches!(read_data(f.path()), Err(CliError::Parse { .. })));
    }
}
