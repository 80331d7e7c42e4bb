//! Run configuration: a JSON file with a units block, an optional seed,
//! output directory and data path, and model parameters under `params`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Units the tool accepts for each quantity kind. Values are never
/// converted, so a config declaring anything else is rejected.
pub const UNITS: [(&str, &str); 6] = [
    ("angle", "deg"),
    ("length", "pm"),
    ("power", "nW"),
    ("rate", "MHz"),
    ("time", "ns"),
    ("count_rate", "counts/s"),
];

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    model: Option<String>,
    units: Option<BTreeMap<String, String>>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    data: Option<PathBuf>,
    #[serde(default)]
    params: Map<String, Value>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: String,
    pub params: Map<String, Value>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub units: BTreeMap<String, String>,
}

pub fn default_units() -> BTreeMap<String, String> {
    UNITS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

fn check_units(units: &BTreeMap<String, String>, path: &Path) -> Result<()> {
    for (kind, unit) in units {
        match UNITS.iter().find(|(k, _)| k == kind) {
            Some((_, expected)) if expected == unit => {}
            Some((_, expected)) => {
                return Err(CliError::Usage(format!(
                    "{}: unit '{unit}' for {kind} is not supported; use {expected}",
                    path.display()
                )))
            }
            None => return Err(CliError::Usage(format!("{}: unknown unit kind '{kind}'", path.display()))),
        }
    }
    Ok(())
}

impl RunConfig {
    /// Loads `path` if given; otherwise the bundled reference scenario.
    pub fn load(model: &str, path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut cfg = RunConfig {
            model: model.to_string(),
            params: Map::new(),
            data: None,
            out: None,
            seed: 1,
            units: default_units(),
        };
        if let Some(path) = path {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let file: ConfigFile = serde_json::from_str(&text).map_err(|e| CliError::Parse {
                path: path.to_path_buf(),
                line: e.line() as u64,
                msg: e.to_string(),
            })?;
            let units = file
                .units
                .ok_or_else(|| CliError::Usage(format!("{}: missing units block", path.display())))?;
            check_units(&units, path)?;
            if let Some(m) = &file.model {
                if m != model {
                    return Err(CliError::Usage(format!(
                        "{}: configured for model '{m}', not '{model}'",
                        path.display()
                    )));
                }
            }
            let base = path.parent().unwrap_or(Path::new("."));
            if let Some(d) = file.data {
                let d = base.join(d);
                if !d.exists() {
                    return Err(CliError::Usage(format!("data file {} does not exist", d.display())));
                }
                cfg.data = Some(d);
            }
            cfg.out = file.out.map(|o| base.join(o));
            cfg.seed = file.seed.unwrap_or(cfg.seed);
            cfg.params = file.params;
            cfg.units.extend(units);
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }

    /// Model parameters with defaults filled in for absent keys.
    pub fn params<T: DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_value(Value::Object(self.params.clone()))
            .map_err(|e| CliError::Usage(format!("parameters for '{}': {e}", self.model)))
    }
}

/// Identity of one run, embedded in every output file.
#[derive(Debug, Clone, Serialize)]
pub struct RunMeta {
    pub tool: &'static str,
    pub version: &'static str,
    pub model: String,
    pub seed: u64,
    pub config_sha256: String,
}

impl RunMeta {
    /// Digest over the model, seed, units and fully resolved parameters.
    pub fn new<P: Serialize>(cfg: &RunConfig, resolved: &P) -> Result<Self> {
        let canonical = json!({
            "model": cfg.model,
            "seed": cfg.seed,
            "units": cfg.units,
            "params": serde_json::to_value(resolved).map_err(|e| CliError::Usage(e.to_string()))?,
        });
        let digest = Sha256::digest(canonical.to_string().as_bytes());
        Ok(RunMeta {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            model: cfg.model.clone(),
            seed: cfg.seed,
            config_sha256: format!("{digest:x}"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn units_block_required() {
        let f = write(r#"{"seed": 3}"#);
        let e = RunConfig::load("g2", Some(f.path()), None).unwrap_err();
        assert!(e.to_string().contains("units"), "{e}");
    }

    #[test]
    fn foreign_units_rejected() {
        let f = write(r#"{"units": {"rate": "GHz"}}"#);
        assert!(matches!(RunConfig::load("g2", Some(f.path()), None), Err(CliError::Usage(_))));
    }

    #[test]
    fn flag_seed_overrides_file() {
        let f = write(r#"{"units": {"rate": "MHz"}, "seed": 3}"#);
        assert_eq!(RunConfig::load("g2", Some(f.path()), None).unwrap().seed, 3);
        assert_eq!(RunConfig::load("g2", Some(f.path()), Some(9)).unwrap().seed, 9);
    }

    #[test]
    fn digest_tracks_parameters() {
        let a = RunConfig::load("g2", None, None).unwrap();
        let m1 = RunMeta::new(&a, &json!({"x": 1})).unwrap();
        let m2 = RunMeta::new(&a, &json!({"x": 2})).unwrap();
        assert_ne!(m1.config_sha256, m2.config_sha256);
        assert_eq!(m1.config_sha256, RunMeta::new(&a, &json!({"x": 1})).unwrap().config_sha256);
        assert_eq!(m1.config_sha256.len(), 64);
    }
}
