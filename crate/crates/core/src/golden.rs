//! Reference-scenario checks: each computes a published quantity from the
//! models and compares it with its target at a fixed tolerance.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_distr::{Distribution, Poisson};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::Serialize;

use crate::bloch::{charge_noise_average, modulation_depth, Shelving, SolverOptions};
use crate::decay::{amplitude_fwhm, lifetime_dip_fwhm, lifetime_sweep, sweep_point, uniform_grid, DecayModel};
use crate::fit::CurveModel;
use crate::multistate::{pl_rf_vs_repump, pulse_sequence, sequence_steady_state, sequence_steady_state_direct};
use crate::multistate::{DriftModel, MultistateRates, PlRfScales, SequenceTiming};
use crate::qed::{derived_figures, kappa_from_quality, loss_budget, purcell_total};
use crate::quad::gauss_legendre;
use crate::rate3::{background_for_g2_zero, g2_analytic, g2_numeric, g2_with_background, steady_state};
use crate::rfscan::{fit_doublet, homogeneous_fwhm_mhz, rf_vs_cavity, saturation_power, saturation_rf};
use crate::rfscan::{window_max, DoubletGuess, DoubletModel};
use crate::scenario;
use crate::stochastic::{correlate, gillespie, poisson_stream, reduced_chi2, Channels, CorrelationConfig, CorrelationMode};
use crate::units::{angular, rate_from_lifetime_ns};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub id: String,
    pub value: Option<f64>,
    pub pass: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:<28} {}", if self.pass { "PASS" } else { "FAIL" }, self.id, self.detail)
    }
}

#[derive(Default)]
struct Checks(Vec<Check>);

impl Checks {
    fn check(&mut self, id: &str, value: Option<f64>, pass: bool, detail: String) {
        self.0.push(Check { id: id.into(), value, pass, detail });
    }

    fn abs(&mut self, id: &str, value: f64, target: f64, tol: f64) {
        let pass = (value - target).abs() <= tol;
        self.check(id, Some(value), pass, format!("value={value:.6} target={target}±{tol}"));
    }

    fn rel(&mut self, id: &str, value: f64, target: f64, rel: f64) {
        let pass = ((value - target) / target).abs() <= rel;
        self.check(id, Some(value), pass, format!("value={value:.6} target={target}±{}%", rel * 100.0));
    }

    fn error(&mut self, id: &str, e: impl fmt::Display) {
        self.check(id, None, false, format!("error: {e}"));
    }
}

/// Figures whose model curves the reference scenario reproduces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Figure {
    Fig1d,
    Fig2,
    Fig3c,
    Fig3d,
    Fig4a,
    Fig4b,
    Fig4c,
}

impl Figure {
    pub const ALL: [Figure; 7] = [
        Figure::Fig1d,
        Figure::Fig2,
        Figure::Fig3c,
        Figure::Fig3d,
        Figure::Fig4a,
        Figure::Fig4b,
        Figure::Fig4c,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            Figure::Fig1d => "fig1d",
            Figure::Fig2 => "fig2",
            Figure::Fig3c => "fig3c",
            Figure::Fig3d => "fig3d",
            Figure::Fig4a => "fig4a",
            Figure::Fig4b => "fig4b",
            Figure::Fig4c => "fig4c",
        }
    }
}

impl fmt::Display for Figure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Figure::ALL
            .into_iter()
            .find(|f| f.id() == s)
            .ok_or_else(|| Error::Domain(format!("unknown figure '{s}'")))
    }
}

/// Checks for one numbered criterion (1 to 9).
pub fn criterion(n: usize) -> Result<Vec<Check>> {
    let mut c = Checks::default();
    match n {
        1 => purcell(&mut c),
        2 => losses(&mut c),
        3 => g2_model(&mut c),
        4 => lifetimes(&mut c),
        5 => doublet(&mut c),
        6 => saturation(&mut c),
        7 => slr_projection(&mut c),
        8 => rabi(&mut c),
        9 => stochastic(&mut c),
        _ => return Err(Error::Domain(format!("no criterion {n}"))),
    }
    Ok(c.0)
}

pub fn figure(fig: Figure) -> Vec<Check> {
    let mut c = Checks::default();
    match fig {
        Figure::Fig1d => {
            purcell(&mut c);
            losses(&mut c);
            g2_model(&mut c);
            stochastic(&mut c);
        }
        Figure::Fig2 => lifetimes(&mut c),
        Figure::Fig3c => {
            doublet(&mut c);
            slr_projection(&mut c);
        }
        Figure::Fig3d => cavity_scan(&mut c),
        Figure::Fig4a => pulse_train(&mut c),
        Figure::Fig4b => saturation(&mut c),
        Figure::Fig4c => rabi(&mut c),
    }
    c.0
}

fn purcell(c: &mut Checks) {
    let gamma0 = angular(scenario::GAMMA0_MHZ);
    let kappa = scenario::kappa();
    let d = purcell_total(scenario::emitter().g_zpl, kappa, gamma0)
        .and_then(|f| derived_figures(f, scenario::XI0, 485.0 / 1449.7, kappa, gamma0));
    match d {
        Ok(d) => {
            c.abs("c1.purcell_factor", d.f_p, 1.79, 0.02);
            c.abs("c1.beta_percent", 100.0 * d.beta, 44.1, 0.5);
            c.abs("c1.zpl_purcell_factor", d.f_p_zpl, 27.3, 0.5);
            c.abs("c1.xi_cav", d.xi_cav, 0.458, 0.01);
            c.abs("c1.efficiency_percent", 100.0 * d.eta, 14.8, 0.3);
        }
        Err(e) => c.error("c1.purcell", e),
    }
}

fn losses(c: &mut Checks) {
    match loss_budget(485.0, 56.0, 908.7) {
        Ok(b) => c.abs("c2.finesse", b.finesse, 4334.0, 5.0),
        Err(e) => c.error("c2.finesse", e),
    }
    match loss_budget(485.0, 56.0, 0.0) {
        Ok(b) => c.abs("c2.finesse_lossless", b.finesse, 11614.0, 20.0),
        Err(e) => c.error("c2.finesse_lossless", e),
    }
    match kappa_from_quality(469.7, 42930.0) {
        Ok(k) => c.abs("c2.kappa_ghz", k, 10.94, 0.02),
        Err(e) => c.error("c2.kappa_ghz", e),
    }
}

fn g2_model(c: &mut Checks) {
    let p = scenario::rate3();
    let grid: Vec<f64> = (0..=3300).map(|i| i as f64 * 10.0).collect();
    let worst = g2_numeric(&p, &grid).and_then(|numeric| {
        grid.iter()
            .zip(&numeric)
            .map(|(&t, n)| Ok((g2_analytic(&p, t)? - n).abs()))
            .try_fold(0.0, |m, d: Result<f64>| Ok(f64::max(m, d?)))
    });
    match worst {
        Ok(w) => c.check("c3.analytic_vs_expm", Some(w), w < 0.01, format!("max |Δg2| on [0, 33 us] = {w:.2e} (< 1e-2)")),
        Err(e) => c.error("c3.analytic_vs_expm", e),
    }
    let inversion = || -> Result<(f64, f64, f64)> {
        let g0 = g2_analytic(&p, 0.0)?;
        let rho = steady_state(&p)?.rho_e;
        let b = background_for_g2_zero(0.04, rho)?;
        Ok((g0, b / (rho + b), g2_with_background(g0, rho, b)?))
    };
    match inversion() {
        Ok((g0, frac, g0b)) => {
            c.abs("c3.g2_zero_clean", g0, 0.0, 1e-12);
            c.abs("c3.background_fraction", frac, 0.04, 1e-12);
            c.abs("c3.g2_zero_background", g0b, 0.04, 1e-12);
        }
        Err(e) => c.error("c3.background_inversion", e),
    }
    // 1/k_eg = 9.9(7) ns against the M1 lifetime 10.6(6) ns.
    let inv = 1e3 / p.k_eg;
    let (lo, hi) = (inv - 0.7, inv + 0.7);
    let pass = lo <= 10.6 + 0.6 && 10.6 - 0.6 <= hi;
    c.check("c3.inverse_k_eg", Some(inv), pass, format!("1/k_eg={inv:.3} ns, [{lo:.2}, {hi:.2}] vs [10.0, 11.2]"));
}

fn sweep_widths(model: &DecayModel) -> Result<(f64, f64)> {
    let cfg = scenario::sweep_config();
    let grid: Vec<f64> = (0..100).map(|i| -300.0 + 4.0 * i as f64).collect();
    let pts = lifetime_sweep(model, &grid, &cfg)?;
    let far = sweep_point(model, 3000.0, &cfg)?.lifetime_ns;
    let near_m2: Vec<_> = pts.iter().filter(|p| p.delta_cav_pm > -100.0).cloned().collect();
    Ok((amplitude_fwhm(&pts)?, lifetime_dip_fwhm(&near_m2, far)?))
}

fn lifetimes(c: &mut Checks) {
    let model = scenario::decay_model();
    let cfg = scenario::sweep_config();
    for (id, delta, target) in [
        ("c4.lifetime_m2", 0.0, 6.88),
        ("c4.lifetime_m1", scenario::M1_POSITION_PM, 10.6),
        ("c4.lifetime_far", 3000.0, 12.35),
    ] {
        match sweep_point(&model, delta, &cfg) {
            Ok(p) => c.rel(id, p.lifetime_ns, target, 0.03),
            Err(e) => c.error(id, e),
        }
    }
    let start = Instant::now();
    match sweep_widths(&model) {
        Ok((amp, dip)) => {
            let secs = start.elapsed().as_secs_f64();
            c.rel("c4.amplitude_fwhm_pm", amp, 80.0, 0.10);
            c.rel("c4.dip_fwhm_pm", dip, 116.0, 0.10);
            c.check("c4.sweep_runtime", Some(secs), secs <= 300.0, format!("100-point sweep in {secs:.2} s (<= 300 s)"));
        }
        Err(e) => c.error("c4.widths", e),
    }
    let mut sharp = model.clone();
    sharp.vib.sigma_vib_pm = 0.0;
    match sweep_widths(&sharp) {
        Ok((amp, dip)) => {
            let gap = (amp - dip).abs() / dip;
            c.check(
                "c4.sigma0_collapse",
                Some(gap),
                gap <= 0.05,
                format!("amplitude {amp:.2} pm, dip {dip:.2} pm, gap {:.1}% (<= 5%)", 100.0 * gap),
            );
        }
        Err(e) => c.error("c4.sigma0_collapse", e),
    }
}

/// Poisson-sampled doublet with the reference linewidth, trap shift and a
/// peak signal-to-laser ratio of 14, on a 5 MHz grid over ±750 MHz.
pub fn synthetic_doublet(seed: u64) -> (Vec<f64>, Vec<f64>) {
    let hom = homogeneous_fwhm_mhz(rate_from_lifetime_ns(scenario::TAU0_NS), scenario::F_M2);
    let model = DoubletModel { homogeneous_mhz: hom };
    let grid: Vec<f64> = (-150..=150).map(|i| i as f64 * 5.0).collect();
    let background = 1000.0;
    let mut truth = [background, 1.0, 0.6, -60.0, scenario::TRAP_SHIFT_MHZ, scenario::GAMMA_EXT_MHZ];
    let peak = (0..=20000)
        .map(|k| -750.0 + 1500.0 * k as f64 / 20000.0)
        .map(|x| model.eval(x, &truth) - background)
        .fold(0.0, f64::max);
    let scale = scenario::SLR * background / peak;
    truth[1] *= scale;
    truth[2] *= scale;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let counts = grid
        .iter()
        .map(|&x| Poisson::new(model.eval(x, &truth)).expect("positive mean").sample(&mut rng))
        .collect();
    (grid, counts)
}

fn doublet(c: &mut Checks) {
    let (grid, counts) = synthetic_doublet(2024);
    let hom = homogeneous_fwhm_mhz(rate_from_lifetime_ns(scenario::TAU0_NS), scenario::F_M2);
    let guess = DoubletGuess { shift_mhz: 150.0, gamma_ext_mhz: 120.0 };
    match fit_doublet(&grid, &counts, hom, &guess) {
        Ok(f) => {
            c.abs("c5.gamma_ext_mhz", f.gamma_ext_mhz, 159.0, 5.0);
            c.abs("c5.shift_mhz", f.shift_mhz, 171.0, 3.0);
            c.abs("c5.contrast_percent", 100.0 * f.contrast, 93.3, 0.5);
        }
        Err(e) => c.error("c5.doublet_fit", e),
    }
}

fn saturation(c: &mut Checks) {
    let sp = scenario::saturation();
    let g = angular(scenario::GAMMA_EXT_MHZ);
    match saturation_power(&sp, g) {
        Ok(ps) => {
            let half = (saturation_rf(ps, &sp, g) / sp.i_sat - 0.5).abs();
            c.abs("c6.p_sat_uw", ps / 1e3, 1.2, 0.1);
            c.check("c6.p_sat_is_half_max", Some(half), half < 1e-9, format!("|RF/I_sat - 1/2| = {half:.1e}"));
        }
        Err(e) => c.error("c6.p_sat_uw", e),
    }
    c.abs("c6.rf_300nw_kcps", saturation_rf(300.0, &sp, g) / 1e3, 83.0, 4.0);
    let h = (sp.gamma0 * sp.f_p).powi(2);
    let worst = [0.0, 10.0, 300.0, 1e3, 1e5]
        .iter()
        .map(|&p| {
            let s = 2.0 * sp.a_scale * p / h;
            (saturation_rf(p, &sp, 0.0) / sp.i_sat - s / (1.0 + s)).abs()
        })
        .fold(0.0, f64::max);
    c.check("c6.two_level_limit", Some(worst), worst < 1e-6, format!("max deviation {worst:.1e} (< 1e-6)"));
}

fn slr_projection(c: &mut Checks) {
    let ratio = scenario::GAMMA_EXT_MHZ / (scenario::GAMMA0_MHZ * scenario::F_M2);
    c.abs("c7.slr_gain", ratio, 6.9, 0.1);
}

fn rabi(c: &mut Checks) {
    let env = scenario::drive_envelope();
    c.abs("c8.rise_time_ns", env.rise_time(), scenario::RISE_TIME_NS, 0.05);
    let gamma = scenario::gamma_total();
    c.rel("c8.rabi_over_gamma", env.amplitude / gamma, 2.2, 0.05);
    let grid = uniform_grid(-20.0, 100.0, 0.25);
    let opts = SolverOptions::default();
    let avg = |delta: f64| {
        charge_noise_average(&env, delta, gamma, angular(scenario::GAMMA_EXT_MHZ), &Shelving::default(), &grid, 48, &opts)
    };
    match (avg(0.0), avg(angular(scenario::TRAP_SHIFT_MHZ))) {
        (Ok(a), Ok(b)) => {
            let (da, db) = (modulation_depth(&a), modulation_depth(&b));
            c.check("c8.damped_oscillation", Some(da), da > 0.0, format!("resonant peak-to-trough {da:.4}"));
            c.check(
                "c8.detuned_modulation",
                Some(db / da),
                db < 0.2 * da,
                format!("{db:.4} vs {da:.4}, ratio {:.3} (< 0.2)", db / da),
            );
        }
        (Err(e), _) | (_, Err(e)) => c.error("c8.bloch", e),
    }
}

fn stochastic(c: &mut Checks) {
    let start = Instant::now();
    let p = scenario::rate3();
    let run = || -> Result<(usize, f64, f64)> {
        let rate = steady_state(&p)?.rho_e * p.k_eg;
        let duration = 1.05e6 / rate * 1e3;
        let cfg = CorrelationConfig {
            bin_ns: 0.5,
            max_delay_us: 35.0,
            norm_window_us: (30.0, 35.0),
            mode: CorrelationMode::Full,
            channels: Channels::Auto,
        };
        let tags = gillespie(&p.generator(), &[(1, 0)], 0, duration, 11)?;
        let h = correlate(&tags, &cfg)?;
        let (x, w) = gauss_legendre(8);
        let model = |lo: f64, hi: f64| {
            x.iter()
                .zip(&w)
                .map(|(xi, wi)| 0.5 * wi * g2_analytic(&p, 0.5 * (lo + hi) + 0.5 * (hi - lo) * xi).unwrap_or(f64::NAN))
                .sum::<f64>()
        };
        let chi = reduced_chi2(&h, model, 30_000.0);
        let hc = correlate(&poisson_stream(rate, duration, 12)?, &cfg)?;
        let (g, e) = (hc.g2(), hc.g2_err());
        let (mut inside, mut total) = (0usize, 0usize);
        for ((v, s), t) in g.iter().zip(&e).zip(hc.centers_ns()) {
            if t < 30_000.0 {
                total += 1;
                inside += ((v - 1.0).abs() <= 3.0 * s) as usize;
            }
        }
        Ok((tags.len(), chi, inside as f64 / total as f64))
    };
    match run() {
        Ok((n, chi, frac)) => {
            c.check("c9.tag_count", Some(n as f64), n >= 1_000_000, format!("{n} tags"));
            c.check("c9.gillespie_chi2", Some(chi), (0.5..=1.5).contains(&chi), format!("reduced chi2 {chi:.3} in [0.5, 1.5]"));
            c.check(
                "c9.poisson_flat",
                Some(frac),
                frac >= 0.99,
                format!("{:.2}% of bins within 1±3σ (>= 99%)", 100.0 * frac),
            );
        }
        Err(e) => c.error("c9.stochastic", e),
    }
    let secs = start.elapsed().as_secs_f64();
    c.check("c9.runtime", Some(secs), secs <= 120.0, format!("{secs:.1} s (<= 120 s)"));
}

fn cavity_scan(c: &mut Checks) {
    let cav = scenario::doublet_cavity();
    let noise = scenario::charge_noise();
    let grid: Vec<f64> = (-400..=150).map(|i| i as f64).collect();
    let ratio = |p0: f64| -> Result<f64> {
        let y = rf_vs_cavity(&grid, p0, &cav, &noise, 0.0)?;
        let m2 = window_max(&grid, &y, -40.0, 40.0).unwrap_or(f64::NAN);
        let m1 = window_max(&grid, &y, -250.0, -170.0).unwrap_or(f64::NAN);
        Ok(m2 / m1)
    };
    match [1e2, 1e4, 1e6].iter().map(|&p| ratio(p)).collect::<Result<Vec<f64>>>() {
        Ok(r) => {
            let rising = r.windows(2).all(|w| w[1] >= w[0]);
            c.check(
                "fig3d.m2_over_m1_rises",
                Some(r[2]),
                rising && r[2] > r[0],
                format!("M2/M1 peak ratio {:.3}, {:.3}, {:.3} with power", r[0], r[1], r[2]),
            );
        }
        Err(e) => c.error("fig3d.cavity_scan", e),
    }
}

fn pulse_train(c: &mut Checks) {
    let rates = MultistateRates::default();
    let timing = SequenceTiming::default();
    let fixed_point = || -> Result<f64> {
        let seq = pulse_sequence(&rates, &timing, 1.0)?;
        let it = sequence_steady_state(&seq, 1e-12, 100_000, None)?.population;
        let direct = sequence_steady_state_direct(&seq)?;
        Ok((&it - &direct).amax())
    };
    match fixed_point() {
        Ok(d) => c.check("fig4a.fixed_point", Some(d), d < 1e-8, format!("iterated vs direct {d:.1e} (< 1e-8)")),
        Err(e) => c.error("fig4a.fixed_point", e),
    }
    let drift = DriftModel { c_drift_mhz_per_mw: 0.0, linewidth_mhz: scenario::GAMMA_EXT_MHZ };
    let scales = PlRfScales { pl_scale: 1.0, rf_scale: 1.0 };
    let powers: Vec<f64> = (1..=12).map(|i| i as f64 * 0.3).collect();
    match pl_rf_vs_repump(&powers, &rates, &timing, &drift, &scales) {
        Ok(pts) => {
            let rising = pts.windows(2).all(|w| w[1].pl >= w[0].pl);
            c.check("fig4a.pl_rises_with_repump", None, rising, format!("PL over {} repump powers", pts.len()));
        }
        Err(e) => c.error("fig4a.pl_rf", e),
    }
}
