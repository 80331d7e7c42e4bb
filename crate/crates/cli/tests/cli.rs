use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nvcav_core::decay::{detector_trace, uniform_grid, DetectionGeometry, InstrumentResponse, VibrationModel};
use nvcav_core::scenario;
use nvcav_core::units::rate_from_lifetime_ns;
use serde_json::Value;

fn nvcav(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nvcav"))
        .args(args)
        .current_dir(dir)
        .env_remove("NVCAV_OUT")
        .output()
        .expect("binary runs")
}

fn report(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn g2_curve_starts_at_zero_and_carries_digest() {
    let dir = tempfile::tempdir().unwrap();
    let o = nvcav(dir.path(), &["simulate", "g2", "--rates", "101.2,2.5,32.0,3.8", "--out", "o"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&dir.path().join("o/g2.report.json"));
    assert_eq!(r["summary"]["g2_zero"].as_f64().unwrap(), 0.0);
    assert!((r["summary"]["plateau"].as_f64().unwrap() - 1.203).abs() < 1e-3);
    let digest = r["meta"]["config_sha256"].as_str().unwrap();
    let csv = fs::read_to_string(dir.path().join("o/g2.csv")).unwrap();
    assert!(csv.contains(&format!("# config_sha256: {digest}")));
    assert!(csv.contains(concat!("# nvcav-cli ", env!("CARGO_PKG_VERSION"))));
    assert!(csv.contains("# units: tau=ns,g2=1,g2_expm=1"));
}

#[test]
fn json_format_and_env_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_nvcav"))
        .args(["simulate", "saturation", "--format", "json"])
        .current_dir(dir.path())
        .env("NVCAV_OUT", "envout")
        .output()
        .unwrap();
    assert!(o.status.success());
    let t = report(&dir.path().join("envout/saturation.json"));
    assert_eq!(t["units"]["power"], "nW");
    assert_eq!(t["rows"].as_array().unwrap().len(), 501);
    let r = report(&dir.path().join("envout/saturation.report.json"));
    assert!((r["summary"]["p_sat_nw"].as_f64().unwrap() - 1192.6).abs() < 1.0);
}

#[test]
fn tags_are_reproducible_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    for (seed, out) in [("7", "a"), ("7", "b"), ("8", "c")] {
        assert!(nvcav(dir.path(), &["simulate", "tags", "--seed", seed, "--out", out]).status.success());
    }
    let read = |d: &str| fs::read(dir.path().join(d).join("tags.nvt")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
    assert_eq!(
        fs::read(dir.path().join("a/tags.csv")).unwrap(),
        fs::read(dir.path().join("b/tags.csv")).unwrap()
    );
    assert_eq!(&read("a")[..3], b"NVT");
}

#[test]
fn decay_sweep_has_both_dips() {
    let dir = tempfile::tempdir().unwrap();
    assert!(nvcav(dir.path(), &["simulate", "decay-sweep", "--out", "o"]).status.success());
    let s = &report(&dir.path().join("o/decay-sweep.report.json"))["summary"];
    assert!(s["m2_dip"]["delta_cav_pm"].as_f64().unwrap().abs() <= 8.0);
    assert!((s["m1_dip"]["delta_cav_pm"].as_f64().unwrap() + 210.0).abs() <= 10.0);
    assert!(s["m2_dip"]["lifetime_ns"].as_f64().unwrap() < s["m1_dip"]["lifetime_ns"].as_f64().unwrap());
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(nvcav(dir.path(), &["simulate", "bogus"]).status.code(), Some(2));
    assert_eq!(nvcav(dir.path(), &["reproduce", "fig9"]).status.code(), Some(2));
    assert_eq!(nvcav(dir.path(), &["simulate", "g2", "--rates", "1,2"]).status.code(), Some(2));
    fs::write(dir.path().join("c.json"), r#"{"params": {"tau_max_ns": 100}}"#).unwrap();
    let o = nvcav(dir.path(), &["simulate", "g2", "--config", "c.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("units"));
    fs::write(dir.path().join("d.json"), r#"{"units": {"time": "ns"}, "params": {"tau_max": 100}}"#).unwrap();
    assert_eq!(nvcav(dir.path(), &["simulate", "g2", "--config", "d.json"]).status.code(), Some(2));
}

#[test]
fn config_parameters_change_output_and_digest() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("c.json"),
        r#"{"units": {"time": "ns", "rate": "MHz"}, "seed": 5, "out": "cfgout", "params": {"tau_max_ns": 100, "step_ns": 1}}"#,
    )
    .unwrap();
    assert!(nvcav(dir.path(), &["simulate", "g2", "--config", "c.json"]).status.success());
    assert!(nvcav(dir.path(), &["simulate", "g2", "--out", "plain"]).status.success());
    let a = report(&dir.path().join("cfgout/g2.report.json"));
    let b = report(&dir.path().join("plain/g2.report.json"));
    assert_eq!(a["meta"]["seed"], 5);
    assert_ne!(a["meta"]["config_sha256"], b["meta"]["config_sha256"]);
    let rows = fs::read_to_string(dir.path().join("cfgout/g2.csv")).unwrap();
    assert_eq!(rows.lines().filter(|l| !l.starts_with('#')).count(), 1 + 101);
}

#[test]
fn missing_output_location_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("blocker"), "").unwrap();
    let o = nvcav(dir.path(), &["simulate", "rf-linewidth", "--out", "blocker/sub"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn lifetime_fit_recovers_decay_module_trace() {
    let dir = tempfile::tempdir().unwrap();
    let model = nvcav_core::decay::DecayModel {
        gamma0: rate_from_lifetime_ns(6.88),
        vib: VibrationModel { sigma_vib_pm: 0.0 },
        ..scenario::decay_model()
    };
    let grid = uniform_grid(-1.0, 100.0, 0.05);
    let geom = DetectionGeometry { theta_det_deg: 0.0, zeta: 1.0 };
    let y = detector_trace(&model, &grid, 5000.0, &geom, &InstrumentResponse::Gaussian { sigma_ns: 0.2 }).unwrap();
    let peak = y.iter().cloned().fold(0.0, f64::max);
    let mut text = String::from("# units: t=ns,counts=1\nt,counts\n");
    for (t, v) in grid.iter().zip(&y) {
        text.push_str(&format!("{t},{}\n", 1e5 * v / peak));
    }
    fs::write(dir.path().join("trace.csv"), text).unwrap();
    let o = nvcav(dir.path(), &["fit", "lifetime", "trace.csv", "--out", "o"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let tau = report(&dir.path().join("o/fit-lifetime.report.json"))["summary"]["tau_ns"].as_f64().unwrap();
    assert!((tau / 6.88 - 1.0).abs() < 0.01, "{tau}");
}

#[test]
fn doublet_fit_covers_truth() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = nvcav_core::golden::synthetic_doublet(5);
    let mut text = String::from("# units: detuning=MHz,counts=1\ndetuning,counts\n");
    for (a, b) in x.iter().zip(&y) {
        text.push_str(&format!("{a},{b}\n"));
    }
    fs::write(dir.path().join("scan.csv"), text).unwrap();
    let o = nvcav(dir.path(), &["fit", "rf-linewidth", "scan.csv", "--out", "o"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = &report(&dir.path().join("o/fit-rf-linewidth.report.json"))["summary"];
    let g = s["gamma_ext_mhz"].as_f64().unwrap();
    let ci = s["gamma_ext_ci95_mhz"].as_f64().unwrap();
    assert!((g - scenario::GAMMA_EXT_MHZ).abs() <= ci, "{g} ± {ci}");
}

#[test]
fn malformed_data_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("empty.csv"), "# units: t=ns,counts=1\nt,counts\n").unwrap();
    let o = nvcav(dir.path(), &["fit", "lifetime", "empty.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no data rows"));
    fs::write(dir.path().join("bad.csv"), "# units: t=ns,counts=1\n0,1\n1,x\n").unwrap();
    let o = nvcav(dir.path(), &["fit", "lifetime", "bad.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
    fs::write(dir.path().join("mhz.csv"), "# units: t=MHz,counts=1\nt,counts\n0,1\n").unwrap();
    assert_eq!(nvcav(dir.path(), &["fit", "lifetime", "mhz.csv"]).status.code(), Some(2));
}

#[test]
fn reproduce_reports_per_quantity() {
    let dir = tempfile::tempdir().unwrap();
    let o = nvcav(dir.path(), &["reproduce", "fig3c", "--out", "o"]);
    assert!(o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("PASS c5.contrast_percent")));
    assert!(stdout.lines().any(|l| l.starts_with("PASS c5.gamma_ext_mhz")));
    let r = report(&dir.path().join("o/reproduce-fig3c.report.json"));
    assert_eq!(r["summary"]["passed"], true);
}

#[test]
fn reproduce_fig2_lists_breaches() {
    let dir = tempfile::tempdir().unwrap();
    let o = nvcav(dir.path(), &["reproduce", "fig2", "--out", "o"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("c4.lifetime_m2"));
    assert!(stdout.contains("c4.lifetime_far"));
    // The M1 lifetime of the model sits below the measured 10.6 ns.
    if !o.status.success() {
        assert_eq!(o.status.code(), Some(1));
        assert!(String::from_utf8_lossy(&o.stderr).contains("tolerance breach"));
    }
}
