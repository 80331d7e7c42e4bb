use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use serde_json::json;

use nvcav_core::bloch::{charge_noise_average, modulation_depth, DriveEnvelope, Shelving, SolverOptions};
use nvcav_core::decay::{
    amplitude_fwhm, lifetime_dip_fwhm, lifetime_sweep, sweep_point, DecayModel, DetectionGeometry, InstrumentResponse,
    SweepConfig, SweepPoint, VibrationModel,
};
use nvcav_core::multistate::{pl_flux, pulse_sequence, sequence_steady_state, trace, MultistateRates, SequenceTiming, LABELS};
use nvcav_core::rate3::{background_for_g2_zero, g2_analytic, g2_numeric, g2_with_background, steady_state, Rate3Params};
use nvcav_core::rfscan::{
    homogeneous_fwhm_mhz, linewidth_profile, rf_vs_cavity, saturation_curve, saturation_power, saturation_rf, window_max,
    ChargeNoise, DoubletCavity, SaturationParams,
};
use nvcav_core::scenario;
use nvcav_core::shape::fwhm;
use nvcav_core::stochastic::gillespie;
use nvcav_core::units::{angular, lifetime_ns_from_rate, rate_from_lifetime_ns, TWO_PI};

use crate::config::{RunConfig, RunMeta};
use crate::error::{CliError, Result};
use crate::output::{write_file, write_report, write_table, Format, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimModel {
    G2,
    DecaySweep,
    RfLinewidth,
    RfCavity,
    Saturation,
    Rabi,
    PulseTrain,
    Tags,
}

impl SimModel {
    pub fn id(&self) -> &'static str {
        match self {
            SimModel::G2 => "g2",
            SimModel::DecaySweep => "decay-sweep",
            SimModel::RfLinewidth => "rf-linewidth",
            SimModel::RfCavity => "rf-cavity",
            SimModel::Saturation => "saturation",
            SimModel::Rabi => "rabi",
            SimModel::PulseTrain => "pulse-train",
            SimModel::Tags => "tags",
        }
    }
}

pub struct Simulation {
    pub files: Vec<PathBuf>,
}

fn reference_rates() -> [f64; 4] {
    let r = scenario::rate3();
    [r.k_eg, r.k_532, r.k_s, r.k_d]
}

fn rate3_from(r: [f64; 4]) -> Result<Rate3Params> {
    Ok(Rate3Params::new(r[0], r[1], r[2], r[3])?)
}

fn grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(stop > start) {
        return Err(CliError::Usage(format!("grid needs start < stop and step > 0, got {start}, {stop}, {step}")));
    }
    let n = ((stop - start) / step).round() as usize;
    Ok((0..=n).map(|i| start + step * i as f64).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct G2Params {
    /// {k_eg, k_532, k_s, k_d} in MHz.
    rates: [f64; 4],
    tau_max_ns: f64,
    step_ns: f64,
    /// Zero-delay floor ℬ/(ρ_e(∞)+ℬ).
    background_fraction: f64,
}

impl Default for G2Params {
    fn default() -> Self {
        G2Params { rates: reference_rates(), tau_max_ns: 33_000.0, step_ns: 10.0, background_fraction: 0.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DecaySweepParams {
    tau0_ns: f64,
    f_m2_degenerate: f64,
    theta_cav_deg: f64,
    m1_position_pm: f64,
    mode_hwhm_pm: f64,
    sigma_vib_pm: f64,
    theta_det_deg: f64,
    irf_sigma_ns: f64,
    start_pm: f64,
    stop_pm: f64,
    step_pm: f64,
}

impl Default for DecaySweepParams {
    fn default() -> Self {
        DecaySweepParams {
            tau0_ns: scenario::TAU0_NS,
            f_m2_degenerate: scenario::F_M2_DEGEN,
            theta_cav_deg: scenario::THETA_CAV_DEG,
            m1_position_pm: scenario::M1_POSITION_PM,
            mode_hwhm_pm: scenario::MODE_HWHM_PM,
            sigma_vib_pm: scenario::SIGMA_VIB_PM,
            theta_det_deg: 0.0,
            irf_sigma_ns: 0.2,
            start_pm: -300.0,
            stop_pm: 100.0,
            step_pm: 4.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RfLinewidthParams {
    gamma_ext_mhz: f64,
    purcell: f64,
    tau0_ns: f64,
    background: f64,
    span_mhz: f64,
    step_mhz: f64,
}

impl Default for RfLinewidthParams {
    fn default() -> Self {
        RfLinewidthParams {
            gamma_ext_mhz: scenario::GAMMA_EXT_MHZ,
            purcell: scenario::F_M2,
            tau0_ns: scenario::TAU0_NS,
            background: 0.0,
            span_mhz: 600.0,
            step_mhz: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RfCavityParams {
    /// Drive strength P₀ in (rad/µs)² at the M1 resonance.
    drive: f64,
    delta_nv_mhz: f64,
    gamma_ext_mhz: f64,
    c1: f64,
    c2: f64,
    m1_position_pm: f64,
    mode_hwhm_pm: f64,
    tau0_ns: f64,
    start_pm: f64,
    stop_pm: f64,
    step_pm: f64,
}

impl Default for RfCavityParams {
    fn default() -> Self {
        let c = scenario::doublet_cavity();
        RfCavityParams {
            drive: 1e4,
            delta_nv_mhz: 0.0,
            gamma_ext_mhz: scenario::GAMMA_EXT_MHZ,
            c1: c.c1,
            c2: c.c2,
            m1_position_pm: c.m1_position_pm,
            mode_hwhm_pm: c.mode_hwhm_pm,
            tau0_ns: scenario::TAU0_NS,
            start_pm: -400.0,
            stop_pm: 150.0,
            step_pm: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SaturationRunParams {
    i_sat_cps: f64,
    /// Power to squared Rabi frequency, (rad/µs)² per nW.
    a_scale: f64,
    gamma_ext_mhz: f64,
    /// Purcell-enhanced linewidth γ₀F_P/2π.
    homogeneous_mhz: f64,
    p_max_nw: f64,
    points: usize,
}

impl Default for SaturationRunParams {
    fn default() -> Self {
        SaturationRunParams {
            i_sat_cps: 250e3,
            a_scale: 1.7e3,
            gamma_ext_mhz: scenario::GAMMA_EXT_MHZ,
            homogeneous_mhz: 23.07,
            p_max_nw: 5000.0,
            points: 501,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RabiParams {
    rabi_mhz: f64,
    rise_time_ns: f64,
    gamma_total_mhz: f64,
    gamma_ext_mhz: f64,
    delta_nv_mhz: f64,
    tau_spin_us: Option<f64>,
    t_start_ns: f64,
    t_end_ns: f64,
    dt_ns: f64,
    nodes: usize,
}

impl Default for RabiParams {
    fn default() -> Self {
        RabiParams {
            rabi_mhz: scenario::RABI_MHZ,
            rise_time_ns: scenario::RISE_TIME_NS,
            gamma_total_mhz: 23.07,
            gamma_ext_mhz: scenario::GAMMA_EXT_MHZ,
            delta_nv_mhz: 0.0,
            tau_spin_us: None,
            t_start_ns: -20.0,
            t_end_ns: 100.0,
            dt_ns: 0.25,
            nodes: 48,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PulseTrainParams {
    repump_mw: f64,
    repump_us: f64,
    wait_us: f64,
    resonant_us: f64,
    points_per_segment: usize,
    /// Rate file in the multistate `key = value` format; bundled rates if absent.
    rates_file: Option<PathBuf>,
}

impl Default for PulseTrainParams {
    fn default() -> Self {
        let t = SequenceTiming::default();
        PulseTrainParams {
            repump_mw: 1.0,
            repump_us: t.repump_us,
            wait_us: t.wait_us,
            resonant_us: t.resonant_us,
            points_per_segment: 50,
            rates_file: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TagsParams {
    rates: [f64; 4],
    duration_us: f64,
    dead_time_ns: f64,
}

impl Default for TagsParams {
    fn default() -> Self {
        TagsParams { rates: reference_rates(), duration_us: 1000.0, dead_time_ns: 0.0 }
    }
}

pub fn run(model: SimModel, cfg: &RunConfig, out: &Path, format: Format, rates_flag: Option<[f64; 4]>) -> Result<Simulation> {
    let stem = model.id();
    let mut files = Vec::new();
    match model {
        SimModel::G2 => {
            let mut p: G2Params = cfg.params()?;
            if let Some(r) = rates_flag {
                p.rates = r;
            }
            let r3 = rate3_from(p.rates)?;
            let taus = grid(0.0, p.tau_max_ns, p.step_ns)?;
            let numeric = g2_numeric(&r3, &taus)?;
            let rho = steady_state(&r3)?.rho_e;
            let b = background_for_g2_zero(p.background_fraction, rho)?;
            let mut t = Table::new(&[("tau", "ns"), ("g2", "1"), ("g2_expm", "1")]);
            let mut peak = (0.0, f64::MIN);
            for (&tau, n) in taus.iter().zip(&numeric) {
                let g = g2_with_background(g2_analytic(&r3, tau)?, rho, b)?;
                if g > peak.1 {
                    peak = (tau, g);
                }
                t.push(vec![tau, g, g2_with_background(*n, rho, b)?]);
            }
            let meta = RunMeta::new(cfg, &p)?;
            files.push(write_table(out, stem, format, &meta, &t)?);
            let summary = json!({
                "g2_zero": t.rows[0][1],
                "g2_max": peak.1,
                "tau_at_max_ns": peak.0,
                "plateau": 1.0 + r3.bunching_amplitude(),
                "rho_e_inf": rho,
                "inverse_k_eg_ns": lifetime_ns_from_rate(r3.k_eg),
            });
            files.push(write_report(out, stem, &meta, &p, &summary)?);
        }
        SimModel::DecaySweep => {
            let p: DecaySweepParams = cfg.params()?;
            let model = DecayModel {
                gamma0: rate_from_lifetime_ns(p.tau0_ns),
                c_degen: (p.f_m2_degenerate - 1.0) / p.theta_cav_deg.to_radians().cos().powi(2),
                theta_cav_deg: p.theta_cav_deg,
                m1_position_pm: p.m1_position_pm,
                mode_hwhm_pm: p.mode_hwhm_pm,
                vib: VibrationModel { sigma_vib_pm: p.sigma_vib_pm },
                ..scenario::decay_model()
            };
            let sweep = SweepConfig {
                geometry: DetectionGeometry { theta_det_deg: p.theta_det_deg, zeta: 1.0 },
                irf: InstrumentResponse::Gaussian { sigma_ns: p.irf_sigma_ns },
                ..scenario::sweep_config()
            };
            let deltas = grid(p.start_pm, p.stop_pm, p.step_pm)?;
            let pts = lifetime_sweep(&model, &deltas, &sweep)?;
            let mut t = Table::new(&[("delta_cav", "pm"), ("lifetime", "ns"), ("ci95", "ns"), ("amplitude0", "1/ns")]);
            for q in &pts {
                t.push(vec![q.delta_cav_pm, q.lifetime_ns, q.ci95_ns, q.amplitude0]);
            }
            let far = sweep_point(&model, 3000.0, &sweep)?.lifetime_ns;
            let dip_min = |lo: f64, hi: f64| {
                pts.iter()
                    .filter(|q| q.delta_cav_pm >= lo && q.delta_cav_pm <= hi)
                    .min_by(|a, b| a.lifetime_ns.total_cmp(&b.lifetime_ns))
                    .map(|q| json!({"delta_cav_pm": q.delta_cav_pm, "lifetime_ns": q.lifetime_ns}))
            };
            let half = 0.5 * p.m1_position_pm.abs();
            let near_m2: Vec<SweepPoint> = pts.iter().filter(|q| (q.delta_cav_pm).abs() < half).cloned().collect();
            let summary = json!({
                "m2_dip": dip_min(-half, half),
                "m1_dip": dip_min(p.m1_position_pm - half, p.m1_position_pm + half),
                "far_lifetime_ns": far,
                "amplitude_fwhm_pm": amplitude_fwhm(&pts).ok(),
                "dip_fwhm_pm": lifetime_dip_fwhm(&near_m2, far).ok(),
            });
            let meta = RunMeta::new(cfg, &p)?;
            files.push(write_table(out, stem, format, &meta, &t)?);
            files.push(write_report(out, stem, &meta, &p, &summary)?);
        }
        SimModel::RfLinewidth => {
            let p: RfLinewidthParams = cfg.params()?;
            let g0 = rate_from_lifetime_ns(p.tau0_ns);
            let x = grid(-p.span_mhz, p.span_mhz, p.step_mhz)?;
            let y = linewidth_profile(&x, p.gamma_ext_mhz, p.purcell, g0, p.background);
            let mut t = Table::new(&[("detuning", "MHz"), ("rf", "arb")]);
            for (a, b) in x.iter().zip(&y) {
                t.push(vec![*a, *b]);
            }
            let clean = linewidth_profile(&x, p.gamma_ext_mhz, p.purcell, g0, 0.0);
            let summary = json!({
                "fwhm_mhz": fwhm(&x, &clean).ok(),
                "homogeneous_mhz": homogeneous_fwhm_mhz(g0, p.purcell),
            });
            let meta = RunMeta::new(cfg, &p)?;
            files.push(write_table(out, stem, format, &meta, &t)?);
            files.push(write_report(out, stem, &meta, &p, &summary)?);
        }
        SimModel::RfCavity => {
            let p: RfCavityParams = cfg.params()?;
            let cav = DoubletCavity {
                c1: p.c1,
                c2: p.c2,
                m1_position_pm: p.m1_position_pm,
                mode_hwhm_pm: p.mode_hwhm_pm,
                gamma0: rate_from_lifetime_ns(p.tau0_ns),
            };
            let noise = ChargeNoise { gamma_ext_mhz: p.gamma_ext_mhz, ..scenario::charge_noise() };
            let x = grid(p.start_pm, p.stop_pm, p.step_pm)?;
            let y = rf_vs_cavity(&x, p.drive, &cav, &noise, p.delta_nv_mhz)?;
            let mut t = Table::new(&[("delta_cav", "pm"), ("rf", "1/us")]);
            for (a, b) in x.iter().zip(&y) {
                t.push(vec![*a, *b]);
            }
            let w = 2.0 * p.mode_hwhm_pm;
            let m2 = window_max(&x, &y, -w, w);
            let m1 = window_max(&x, &y, p.m1_position_pm - w, p.m1_position_pm + w);
            let summary = json!({
                "m2_peak": m2,
                "m1_peak": m1,
                "m2_over_m1": m2.zip(m1).map(|(a, b)| a / b),
            });
            let meta = RunMeta::new(cfg, &p)?;
            files.push(write_table(out, stem, format, &meta, &t)?);
            files.push(write_report(out, stem, &meta, &p, &summary)?);
        }
        SimModel::Saturation => {
            let p: SaturationRunParams = cfg.params()?;
            let gamma0 = angular(scenario::GAMMA0_MHZ);
            let sp = SaturationParams {
                i_sat: p.i_sat_cps,
                a_scale: p.a_scale,
                f_p: p.homogeneous_mhz / scenario::GAMMA0_MHZ,
                gamma0,
            };
            if p.points < 2 {
                return Err(CliError::Usage("saturation needs at least 2 points".into()));
            }
            let powers: Vec<f64> = (0..p.points).map(|i| p.p_max_nw * i as f64 / (p.points - 1) as f64).collect();
            let g = angular(p.gamma_ext_mhz);
            let rf = saturation_curve(&powers, &sp, g)?;
            let mut t = Table::new(&[("power", "nW"), ("rf", "counts/s")]);
            for (a, b) in powers.iter().zip(&rf) {
                t.push(vec![*a, *b]);
            }
            let summary = json!({
                "p_sat_nw": saturation_power(&sp, g)?,
                "rf_at_300nw_cps": saturation_rf(300.0, &sp, g),
            });
            let meta = RunMeta::new(cfg, &p)?;
            files.push(write_table(out, stem, format, &meta, &t)?);
            files.push(write_report(out, stem, &meta, &p, &summary)?);
        }
        SimModel::Rabi => {
            let p: RabiParams = cfg.params()?;
            let env = DriveEnvelope { amplitude: TWO_PI * p.rabi_mhz, ..DriveEnvelope::default() }.with_rise_time(p.rise_time_ns)?;
            let shelving = Shelving { tau_spin_us: p.tau_spin_us };
            let ts = grid(p.t_start_ns, p.t_end_ns, p.dt_ns)?;
            let rho = charge_noise_average(
                &env,
                angular(p.delta_nv_mhz),
                angular(p.gamma_total_mhz),
                angular(p.gamma_ext_mhz),
                &shelving,
                &ts,
                p.nodes,
                &SolverOptions::default(),
            )?;
            let mut t = Table::new(&[("t", "ns"), ("rho_ee", "1"), ("envelope", "1")]);
            for (a, b) in ts.iter().zip(&rho) {
                t.push(vec![*a, *b, env.value(*a)]);
            }
            let summary = json!({
                "modulation_depth": modulation_depth(&rho),
                "rise_time_ns": env.rise_time(),
                "rabi_over_gamma": p.rabi_mhz / p.gamma_total_mhz,
            });
            let meta = RunMeta::new(cfg, &p)?;
            files.push(write_table(out, stem, format, &meta, &t)?);
            files.push(write_report(out, stem, &meta, &p, &summary)?);
        }
        SimModel::PulseTrain => {
            let p: PulseTrainParams = cfg.params()?;
            let rates = match &p.rates_file {
                Some(f) => {
                    let text = fs::read_to_string(f).map_err(|e| CliError::io(f, e))?;
                    MultistateRates::parse(&text)?
                }
                None => MultistateRates::default(),
            };
            let timing = SequenceTiming { repump_us: p.repump_us, wait_us: p.wait_us, resonant_us: p.resonant_us };
            let seq = pulse_sequence(&rates, &timing, p.repump_mw)?;
            let ss = sequence_steady_state(&seq, 1e-12, 100_000, None)?;
            let pts = trace(&seq, &ss.population, p.points_per_segment)?;
            let mut cols: Vec<(String, &str)> = vec![("t".into(), "us")];
            cols.extend(LABELS.iter().map(|l| (format!("p_{l}"), "1")));
            cols.push(("pl_flux".into(), "1/us"));
            let refs: Vec<(&str, &str)> = cols.iter().map(|(n, u)| (n.as_str(), *u)).collect();
            let mut t = Table::new(&refs);
            for q in &pts {
                let mut row = vec![q.t_us];
                row.extend(q.population.iter());
                row.push(pl_flux(&rates, &q.population));
                t.push(row);
            }
            let summary = json!({
                "cycles": ss.cycles,
                "residual": ss.residual,
                "start_population": ss.population.iter().collect::<Vec<_>>(),
            });
            let meta = RunMeta::new(cfg, &p)?;
            files.push(write_table(out, stem, format, &meta, &t)?);
            files.push(write_report(out, stem, &meta, &p, &summary)?);
        }
        SimModel::Tags => {
            let mut p: TagsParams = cfg.params()?;
            if let Some(r) = rates_flag {
                p.rates = r;
            }
            let r3 = rate3_from(p.rates)?;
            let mut s = gillespie(&r3.generator(), &[(1, 0)], 0, p.duration_us * 1e3, cfg.seed)?;
            if p.dead_time_ns > 0.0 {
                s = s.with_dead_time(p.dead_time_ns);
            }
            let meta = RunMeta::new(cfg, &p)?;
            let mut bin = Vec::new();
            s.write_binary(&mut bin)?;
            let path = out.join(format!("{stem}.nvt"));
            crate::output::ensure_dir(out)?;
            write_file(&path, &bin)?;
            files.push(path);
            if format == Format::Csv {
                let mut t = Table::new(&[("t", "ns"), ("channel", "1")]);
                for (a, c) in s.times_ns.iter().zip(&s.channels) {
                    t.push(vec![*a, *c as f64]);
                }
                files.push(write_table(out, stem, format, &meta, &t)?);
            }
            let summary = json!({
                "tags": s.len(),
                "rate_per_us": s.rate_per_us(),
                "expected_rate_per_us": steady_state(&r3)?.rho_e * r3.k_eg,
                "terminated_early": s.terminated_early,
            });
            files.push(write_report(out, stem, &meta, &p, &summary)?);
        }
    }
    Ok(Simulation { files })
}
