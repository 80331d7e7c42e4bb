//! Two-mode Purcell decay averaged over cavity vibrations.
//!
//! For a displacement excursion δ the emitter decays at
//! `Γ(δ) = γ₀(1 + c₁(δ) + c₂(δ))` with per-mode enhancements
//! `c₁ = sin²θ·C·L(Δ − Δ_M1 + δ)` and `c₂ = cos²θ·C·L(Δ + δ)`, where
//! `L(x) = 1/(1 + (x/W)²)`. Averaging over Gaussian δ turns the decay into
//! a mixture of exponentials. Displacements in pm, times in ns.

use log::warn;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{domain, Error, Result};
use crate::fit::{least_squares, ExpDecay, FitProblem, Param, Weights};
use crate::quad::{gauss_hermite_normal, integrate};
use crate::shape::fwhm;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VibrationModel {
    /// RMS displacement excursion (pm).
    pub sigma_vib_pm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Quadrature {
    /// Gauss-Hermite rule with this many nodes.
    GaussHermite(usize),
    /// Adaptive Gauss-Kronrod over ±8σ with this relative tolerance.
    Adaptive(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayModel {
    /// Natural decay rate γ₀ (1/µs).
    pub gamma0: f64,
    /// `C = F_P,degen − 1`, the enhancement if both modes were degenerate.
    pub c_degen: f64,
    pub theta_cav_deg: f64,
    /// Displacement at which M1 is resonant (pm).
    pub m1_position_pm: f64,
    /// Mode half-width in displacement (pm).
    pub mode_hwhm_pm: f64,
    pub vib: VibrationModel,
    pub quadrature: Quadrature,
}

/// One vibration node: weight and per-mode enhancements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub c1: f64,
    pub c2: f64,
}

/// Emission rate densities (1/ns) into each channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModeRates {
    pub m1: f64,
    pub m2: f64,
    pub free_space: f64,
}

impl ModeRates {
    pub fn total(&self) -> f64 {
        self.m1 + self.m2 + self.free_space
    }
}

fn lorentz(x: f64, w: f64) -> f64 {
    1.0 / (1.0 + (x / w).powi(2))
}

impl DecayModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma0 > 0.0) {
            return domain(format!("gamma0 must be positive, got {}", self.gamma0));
        }
        if !(self.c_degen >= 0.0) {
            return domain(format!("enhancement C must be non-negative, got {}", self.c_degen));
        }
        if !(self.mode_hwhm_pm > 0.0) {
            return domain(format!("mode half-width must be positive, got {}", self.mode_hwhm_pm));
        }
        if !(self.vib.sigma_vib_pm >= 0.0) {
            return domain(format!("sigma_vib must be non-negative, got {}", self.vib.sigma_vib_pm));
        }
        match self.quadrature {
            Quadrature::GaussHermite(0) => domain("Gauss-Hermite rule needs nodes"),
            Quadrature::Adaptive(tol) if !(tol > 0.0) => domain("adaptive tolerance must be positive"),
            _ => Ok(()),
        }
    }

    fn gamma0_per_ns(&self) -> f64 {
        self.gamma0 * 1e-3
    }

    /// Per-mode enhancements for a fixed excursion `delta_pm`.
    pub fn couplings(&self, delta_cav_pm: f64, delta_pm: f64) -> (f64, f64) {
        let t = self.theta_cav_deg.to_radians();
        let x = delta_cav_pm + delta_pm;
        (
            t.sin().powi(2) * self.c_degen * lorentz(x - self.m1_position_pm, self.mode_hwhm_pm),
            t.cos().powi(2) * self.c_degen * lorentz(x, self.mode_hwhm_pm),
        )
    }

    /// Vibration nodes for the Gauss-Hermite rule (a single node when σ = 0).
    pub fn components(&self, delta_cav_pm: f64) -> Vec<Component> {
        let sigma = self.vib.sigma_vib_pm;
        let n = match self.quadrature {
            Quadrature::GaussHermite(n) => n,
            Quadrature::Adaptive(_) => 64,
        };
        if sigma == 0.0 {
            let (c1, c2) = self.couplings(delta_cav_pm, 0.0);
            return vec![Component { weight: 1.0, c1, c2 }];
        }
        let (x, w) = gauss_hermite_normal(n);
        x.iter()
            .zip(&w)
            .map(|(&xi, &wi)| {
                let (c1, c2) = self.couplings(delta_cav_pm, sigma * xi);
                Component { weight: wi, c1, c2 }
            })
            .collect()
    }

    /// Emission rate densities at delay `tau_ns` after excitation with
    /// unit excited population.
    pub fn emission_rate(&self, tau_ns: f64, delta_cav_pm: f64) -> Result<ModeRates> {
        self.validate()?;
        if !(tau_ns >= 0.0) {
            return domain(format!("delay must be non-negative, got {tau_ns}"));
        }
        let g = self.gamma0_per_ns();
        let point = |c1: f64, c2: f64| {
            let e = g * (-g * (1.0 + c1 + c2) * tau_ns).exp();
            (c1 * e, c2 * e, e)
        };
        let sigma = self.vib.sigma_vib_pm;
        match self.quadrature {
            Quadrature::Adaptive(tol) if sigma > 0.0 => {
                let density = |d: f64| (-0.5 * (d / sigma).powi(2)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
                let mut out = [0.0; 3];
                for (k, o) in out.iter_mut().enumerate() {
                    let (v, _) = integrate(
                        |d| {
                            let (c1, c2) = self.couplings(delta_cav_pm, d);
                            let r = point(c1, c2);
                            density(d) * [r.0, r.1, r.2][k]
                        },
                        -8.0 * sigma,
                        8.0 * sigma,
                        1e-300,
                        tol,
                        2000,
                    )?;
                    *o = v;
                }
                Ok(ModeRates {
                    m1: out[0],
                    m2: out[1],
                    free_space: out[2],
                })
            }
            _ => {
                let mut r = ModeRates {
                    m1: 0.0,
                    m2: 0.0,
                    free_space: 0.0,
                };
                for c in self.components(delta_cav_pm) {
                    let (a, b, f) = point(c.c1, c.c2);
                    r.m1 += c.weight * a;
                    r.m2 += c.weight * b;
                    r.free_space += c.weight * f;
                }
                Ok(r)
            }
        }
    }

    /// Vibration-free total Purcell factor at the given displacement.
    pub fn purcell_factor(&self, delta_cav_pm: f64) -> f64 {
        let (c1, c2) = self.couplings(delta_cav_pm, 0.0);
        1.0 + c1 + c2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionGeometry {
    /// Detection polarisation angle relative to M2 (degrees).
    pub theta_det_deg: f64,
    pub zeta: f64,
}

impl Default for DetectionGeometry {
    fn default() -> Self {
        Self {
            theta_det_deg: 0.0,
            zeta: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InstrumentResponse {
    Delta,
    /// Normal kernel of standard deviation `sigma_ns`, centred on zero.
    Gaussian { sigma_ns: f64 },
    /// Kernel samples `values[k]` at `t0_ns + k·dt_ns`; normalised to unit area.
    Sampled { t0_ns: f64, dt_ns: f64, values: Vec<f64> },
}

impl InstrumentResponse {
    pub fn validate(&self) -> Result<()> {
        match self {
            InstrumentResponse::Delta => Ok(()),
            InstrumentResponse::Gaussian { sigma_ns } => {
                if *sigma_ns > 0.0 {
                    Ok(())
                } else {
                    domain(format!("IRF width must be positive, got {sigma_ns}"))
                }
            }
            InstrumentResponse::Sampled { dt_ns, values, .. } => {
                if !(*dt_ns > 0.0) || values.is_empty() {
                    return domain("sampled IRF needs a positive spacing and samples");
                }
                if values.iter().any(|v| !(*v >= 0.0)) {
                    return domain("IRF samples must be non-negative");
                }
                if !(values.iter().sum::<f64>() > 0.0) {
                    return domain("IRF has zero area");
                }
                Ok(())
            }
        }
    }

    /// Characteristic width (ns) used to check grid resolution.
    pub fn width_ns(&self) -> f64 {
        match self {
            InstrumentResponse::Delta => 0.0,
            InstrumentResponse::Gaussian { sigma_ns } => *sigma_ns,
            InstrumentResponse::Sampled { dt_ns, values, .. } => {
                let area: f64 = values.iter().sum();
                let mean: f64 = values.iter().enumerate().map(|(k, v)| k as f64 * v).sum::<f64>() / area;
                let var: f64 = values.iter().enumerate().map(|(k, v)| (k as f64 - mean).powi(2) * v).sum::<f64>() / area;
                var.sqrt() * dt_ns
            }
        }
    }

    /// `∫ J(s)·e^{−Γ(t−s)}·Θ(t−s) ds` for rate `gamma` (1/ns).
    fn convolved_exponential(&self, t: f64, gamma: f64) -> f64 {
        match self {
            InstrumentResponse::Delta => {
                if t >= 0.0 {
                    (-gamma * t).exp()
                } else {
                    0.0
                }
            }
            InstrumentResponse::Gaussian { sigma_ns } => {
                let s = *sigma_ns;
                // Exponentially modified Gaussian, in log form to avoid overflow.
                let z = (gamma * s * s - t) / (s * std::f64::consts::SQRT_2);
                let tail = 0.5 * erfc(z);
                if tail == 0.0 {
                    0.0
                } else {
                    (-gamma * t + 0.5 * gamma * gamma * s * s + tail.ln()).exp()
                }
            }
            InstrumentResponse::Sampled { t0_ns, dt_ns, values } => {
                let area: f64 = values.iter().sum();
                values
                    .iter()
                    .enumerate()
                    .map(|(k, v)| {
                        let u = t - (t0_ns + k as f64 * dt_ns);
                        if u >= 0.0 {
                            v * (-gamma * u).exp()
                        } else {
                            0.0
                        }
                    })
                    .sum::<f64>()
                    / area
            }
        }
    }
}

/// Detector intensity `ζ(sin²θ_det·R̃_M1 + cos²θ_det·R̃_M2)` on `tau_grid_ns`
/// (1/ns for unit excitation), with `R̃` the IRF-convolved mode rates.
pub fn detector_trace(
    model: &DecayModel,
    tau_grid_ns: &[f64],
    delta_cav_pm: f64,
    geometry: &DetectionGeometry,
    irf: &InstrumentResponse,
) -> Result<Vec<f64>> {
    model.validate()?;
    irf.validate()?;
    if !(geometry.zeta > 0.0) {
        return domain(format!("detection scale must be positive, got {}", geometry.zeta));
    }
    if tau_grid_ns.len() >= 2 {
        let dt = tau_grid_ns[1] - tau_grid_ns[0];
        let w = irf.width_ns();
        if w > 0.0 && dt > w {
            warn!("time step {dt} ns is coarser than the instrument response ({w} ns)");
        }
    }
    let td = geometry.theta_det_deg.to_radians();
    let (p1, p2) = (td.sin().powi(2), td.cos().powi(2));
    let g = model.gamma0_per_ns();
    let comps = model.components(delta_cav_pm);
    let terms: Vec<(f64, f64)> = comps
        .iter()
        .map(|c| (geometry.zeta * c.weight * g * (p1 * c.c1 + p2 * c.c2), g * (1.0 + c.c1 + c.c2)))
        .filter(|(a, _)| *a != 0.0)
        .collect();
    Ok(tau_grid_ns
        .iter()
        .map(|&t| terms.iter().map(|&(a, rate)| a * irf.convolved_exponential(t, rate)).sum())
        .collect())
}

/// Uniform grid `start, start + dt, …` up to `end` inclusive.
pub fn uniform_grid(start: f64, end: f64, dt: f64) -> Vec<f64> {
    let n = ((end - start) / dt).round() as usize;
    (0..=n).map(|k| start + k as f64 * dt).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifetimeFitConfig {
    /// The fit starts where the trace has fallen to this fraction of its peak.
    pub start_fraction: f64,
    /// Last delay included (ns); the whole trace when `None`.
    pub end_ns: Option<f64>,
    /// Points below this fraction of the peak are dropped.
    pub floor_fraction: f64,
    /// Poisson weighting for count data; uniform for model traces.
    pub poisson: bool,
}

impl Default for LifetimeFitConfig {
    fn default() -> Self {
        Self {
            start_fraction: 0.9,
            end_ns: None,
            floor_fraction: 1e-4,
            poisson: false,
        }
    }
}

pub const MIN_FIT_POINTS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LifetimeFit {
    pub tau_ns: f64,
    pub ci95_ns: f64,
    pub amplitude: f64,
    pub t_start_ns: f64,
    pub n_points: usize,
    pub reduced_chi2: f64,
}

/// Single-exponential fit to the falling part of a decay trace.
pub fn fit_lifetime(t_ns: &[f64], y: &[f64], cfg: &LifetimeFitConfig) -> Result<LifetimeFit> {
    if t_ns.len() != y.len() {
        return domain("time and intensity lengths differ");
    }
    let (imax, &ymax) = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::Fit("empty trace".into()))?;
    if !(ymax > 0.0) {
        return Err(Error::Fit("trace has no signal".into()));
    }
    let start = (imax..y.len())
        .find(|&i| y[i] <= cfg.start_fraction * ymax)
        .ok_or_else(|| Error::Fit("trace does not decay".into()))?;
    let end_t = cfg.end_ns.unwrap_or(f64::INFINITY);
    let floor = cfg.floor_fraction * ymax;
    let (xs, ys): (Vec<f64>, Vec<f64>) = (start..y.len())
        .filter(|&i| t_ns[i] <= end_t && y[i] > floor)
        .map(|i| (t_ns[i], y[i]))
        .unzip();
    if xs.len() < MIN_FIT_POINTS {
        return Err(Error::Fit(format!(
            "{} points past the rise, need {MIN_FIT_POINTS}",
            xs.len()
        )));
    }
    let t0 = xs[0];
    // Log-linear estimate for the start value.
    let last = xs.len() - 1;
    let guess = if ys[last] > 0.0 && ys[last] < ys[0] {
        (xs[last] - t0) / (ys[0] / ys[last]).ln()
    } else {
        return Err(Error::Fit("trace does not decay".into()));
    };
    let weights = if cfg.poisson { Weights::Poisson } else { Weights::Uniform };
    let params = vec![
        Param::bounded("amplitude", ys[0], 0.0, f64::INFINITY),
        Param::bounded("tau", guess, 1e-6 * guess, 1e6 * guess),
        Param::fixed("offset", 0.0),
    ];
    let prob = FitProblem::curve(params, &xs, &ys, weights, ExpDecay { t0 })?;
    let fit = least_squares(&prob);
    if !fit.converged {
        return Err(Error::Fit(format!("lifetime fit: {}", fit.termination)));
    }
    Ok(LifetimeFit {
        tau_ns: fit.estimates[1],
        ci95_ns: fit.ci95[1],
        amplitude: fit.estimates[0],
        t_start_ns: t0,
        n_points: xs.len(),
        reduced_chi2: fit.reduced_chi2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub geometry: DetectionGeometry,
    pub irf: InstrumentResponse,
    /// Trace grid start, end and step (ns).
    pub t_start_ns: f64,
    pub t_end_ns: f64,
    pub dt_ns: f64,
    pub fit: LifetimeFitConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            geometry: DetectionGeometry::default(),
            irf: InstrumentResponse::Gaussian { sigma_ns: 0.2 },
            t_start_ns: -2.0,
            t_end_ns: 100.0,
            dt_ns: 0.05,
            fit: LifetimeFitConfig::default(),
        }
    }
}

impl SweepConfig {
    pub fn grid(&self) -> Vec<f64> {
        uniform_grid(self.t_start_ns, self.t_end_ns, self.dt_ns)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub delta_cav_pm: f64,
    pub lifetime_ns: f64,
    pub ci95_ns: f64,
    /// Peak of the IRF-convolved trace.
    pub amplitude0: f64,
}

/// Fitted lifetime and zero-delay amplitude at one displacement.
pub fn sweep_point(model: &DecayModel, delta_cav_pm: f64, cfg: &SweepConfig) -> Result<SweepPoint> {
    let grid = cfg.grid();
    let y = detector_trace(model, &grid, delta_cav_pm, &cfg.geometry, &cfg.irf)?;
    let fit = fit_lifetime(&grid, &y, &cfg.fit)?;
    Ok(SweepPoint {
        delta_cav_pm,
        lifetime_ns: fit.tau_ns,
        ci95_ns: fit.ci95_ns,
        amplitude0: y.iter().cloned().fold(0.0, f64::max),
    })
}

pub fn lifetime_sweep(model: &DecayModel, deltas_pm: &[f64], cfg: &SweepConfig) -> Result<Vec<SweepPoint>> {
    deltas_pm.iter().map(|&d| sweep_point(model, d, cfg)).collect()
}

/// Zero-delay amplitude only: the trace peak, found on a short window.
pub fn zero_delay_amplitude(model: &DecayModel, delta_cav_pm: f64, cfg: &SweepConfig) -> Result<f64> {
    let w = cfg.irf.width_ns();
    let grid = uniform_grid(cfg.t_start_ns.max(-6.0 * w), 6.0 * w + 1.0, cfg.dt_ns.min(0.01));
    let y = detector_trace(model, &grid, delta_cav_pm, &cfg.geometry, &cfg.irf)?;
    Ok(y.iter().cloned().fold(0.0, f64::max))
}

/// FWHM of the zero-delay amplitude peak (pm).
pub fn amplitude_fwhm(points: &[SweepPoint]) -> Result<f64> {
    let x: Vec<f64> = points.iter().map(|p| p.delta_cav_pm).collect();
    let y: Vec<f64> = points.iter().map(|p| p.amplitude0).collect();
    fwhm(&x, &y)
}

/// FWHM of the lifetime-reduction dip `τ_far − τ(Δ)` around its deepest point (pm).
pub fn lifetime_dip_fwhm(points: &[SweepPoint], tau_far_ns: f64) -> Result<f64> {
    let x: Vec<f64> = points.iter().map(|p| p.delta_cav_pm).collect();
    let y: Vec<f64> = points.iter().map(|p| tau_far_ns - p.lifetime_ns).collect();
    fwhm(&x, &y)
}

/// Mode half-width that gives a zero-delay amplitude FWHM of
/// `target_fwhm_pm`, by bisection over `[lo, hi]` pm. `deltas_pm` must
/// resolve the M2 peak.
pub fn calibrate_mode_hwhm(
    model: &DecayModel,
    cfg: &SweepConfig,
    target_fwhm_pm: f64,
    deltas_pm: &[f64],
    lo: f64,
    hi: f64,
) -> Result<f64> {
    let width_for = |w: f64| -> Result<f64> {
        let m = DecayModel {
            mode_hwhm_pm: w,
            ..model.clone()
        };
        let y = deltas_pm
            .iter()
            .map(|&d| zero_delay_amplitude(&m, d, cfg))
            .collect::<Result<Vec<_>>>()?;
        fwhm(deltas_pm, &y)
    };
    let (mut a, mut b) = (lo, hi);
    let fa = width_for(a)? - target_fwhm_pm;
    let fb = width_for(b)? - target_fwhm_pm;
    if fa.signum() == fb.signum() {
        return domain(format!("target width {target_fwhm_pm} pm not bracketed by [{lo}, {hi}] pm"));
    }
    for _ in 0..60 {
        let m = 0.5 * (a + b);
        let fm = width_for(m)? - target_fwhm_pm;
        if fm.signum() == fa.signum() {
            a = m;
        } else {
            b = m;
        }
        if b - a < 1e-6 * m {
            break;
        }
    }
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::rate_from_lifetime_ns;

    fn model(sigma: f64) -> DecayModel {
        DecayModel {
            gamma0: rate_from_lifetime_ns(12.35),
            c_degen: (2.068 - 1.0) / 33f64.to_radians().cos().powi(2),
            theta_cav_deg: 33.0,
            m1_position_pm: -210.0,
            mode_hwhm_pm: 22.0,
            vib: VibrationModel { sigma_vib_pm: sigma },
            quadrature: Quadrature::GaussHermite(64),
        }
    }

    #[test]
    fn vibration_free_m2_lifetime() {
        let m = DecayModel {
            theta_cav_deg: 0.0,
            c_degen: 1.068,
            ..model(0.0)
        };
        let cfg = SweepConfig {
            irf: InstrumentResponse::Delta,
            ..SweepConfig::default()
        };
        let p = sweep_point(&m, 0.0, &cfg).unwrap();
        assert!((p.lifetime_ns - 12.35 / 2.068).abs() < 1e-6 * 5.97);
        let r = m.emission_rate(0.0, 0.0).unwrap();
        assert!((r.total() - 2.068 / 12.35).abs() < 1e-12);
    }

    #[test]
    fn far_detuned_decays_at_natural_rate() {
        let cfg = SweepConfig {
            geometry: DetectionGeometry { theta_det_deg: 45.0, zeta: 1.0 },
            ..SweepConfig::default()
        };
        let p = sweep_point(&model(22.0), 5000.0, &cfg).unwrap();
        assert!((p.lifetime_ns - 12.35).abs() < 0.01);
    }

    #[test]
    fn energy_split_integrates_to_one() {
        let m = model(22.0);
        for delta in [-210.0, -60.0, 0.0, 35.0] {
            let (v, _) = integrate(
                |t| m.emission_rate(t, delta).unwrap().total(),
                0.0,
                400.0,
                1e-12,
                1e-10,
                500,
            )
            .unwrap();
            assert!((v - 1.0).abs() < 1e-6, "area {v} at {delta}");
        }
    }

    #[test]
    fn adaptive_and_hermite_quadrature_agree() {
        let gh = model(22.0);
        let ad = DecayModel {
            quadrature: Quadrature::Adaptive(1e-10),
            ..gh.clone()
        };
        for (t, d) in [(0.0, 0.0), (5.0, -100.0), (20.0, -210.0)] {
            let a = gh.emission_rate(t, d).unwrap();
            let b = ad.emission_rate(t, d).unwrap();
            assert!((a.m2 - b.m2).abs() <= 1e-6 * b.m2.abs().max(1e-12));
            assert!((a.m1 - b.m1).abs() <= 1e-6 * b.m1.abs().max(1e-12));
        }
    }

    #[test]
    fn orthogonal_detection_sees_only_m1() {
        let m = model(22.0);
        let grid = uniform_grid(0.0, 30.0, 0.5);
        let geo = DetectionGeometry { theta_det_deg: 90.0, zeta: 1.0 };
        let y = detector_trace(&m, &grid, -30.0, &geo, &InstrumentResponse::Delta).unwrap();
        for (t, v) in grid.iter().zip(&y) {
            let r = m.emission_rate(*t, -30.0).unwrap();
            assert!((v - r.m1).abs() < 1e-14);
        }
    }

    #[test]
    fn narrow_irf_approaches_unconvolved_trace() {
        let m = model(22.0);
        let grid = uniform_grid(1.0, 30.0, 0.5);
        let geo = DetectionGeometry::default();
        let raw = detector_trace(&m, &grid, 0.0, &geo, &InstrumentResponse::Delta).unwrap();
        let narrow = detector_trace(&m, &grid, 0.0, &geo, &InstrumentResponse::Gaussian { sigma_ns: 1e-4 }).unwrap();
        let sampled = InstrumentResponse::Sampled { t0_ns: 0.0, dt_ns: 0.01, values: vec![1.0] };
        let single = detector_trace(&m, &grid, 0.0, &geo, &sampled).unwrap();
        for i in 0..grid.len() {
            assert!((raw[i] - narrow[i]).abs() < 1e-6 * raw[i]);
            assert_eq!(raw[i], single[i]);
        }
    }

    #[test]
    fn sampled_gaussian_matches_analytic_kernel() {
        let m = model(22.0);
        let grid = uniform_grid(-1.0, 20.0, 0.1);
        let geo = DetectionGeometry::default();
        let s = 0.3;
        let dt = 0.002;
        let values: Vec<f64> = (0..=3000)
            .map(|k| {
                let u = -3.0 + k as f64 * dt;
                (-0.5 * (u / s).powi(2)).exp()
            })
            .collect();
        let sampled = InstrumentResponse::Sampled { t0_ns: -3.0, dt_ns: dt, values };
        let a = detector_trace(&m, &grid, 0.0, &geo, &InstrumentResponse::Gaussian { sigma_ns: s }).unwrap();
        let b = detector_trace(&m, &grid, 0.0, &geo, &sampled).unwrap();
        let peak = a.iter().cloned().fold(0.0, f64::max);
        for i in 0..grid.len() {
            assert!((a[i] - b[i]).abs() < 2e-3 * peak);
        }
    }

    #[test]
    fn pure_exponential_fit() {
        let t = uniform_grid(0.0, 100.0, 0.05);
        let y: Vec<f64> = t.iter().map(|v| 1e4 * (-v / 10.0).exp()).collect();
        let f = fit_lifetime(&t, &y, &LifetimeFitConfig::default()).unwrap();
        assert!((f.tau_ns - 10.0).abs() < 1e-3);
    }

    #[test]
    fn rising_trace_cannot_be_fitted() {
        let t = uniform_grid(0.0, 10.0, 0.1);
        let y: Vec<f64> = t.iter().map(|v| 1.0 + v).collect();
        assert!(fit_lifetime(&t, &y, &LifetimeFitConfig::default()).is_err());
        let short = uniform_grid(0.0, 0.5, 0.1);
        let ys: Vec<f64> = short.iter().map(|v| (-v).exp()).collect();
        assert!(fit_lifetime(&short, &ys, &LifetimeFitConfig::default()).is_err());
    }

    #[test]
    fn early_photon_bias_shortens_resonant_lifetime() {
        let cfg = SweepConfig::default();
        let vib = sweep_point(&model(22.0), 0.0, &cfg).unwrap();
        let still = model(0.0);
        let purcell_lifetime = 12.35 / still.purcell_factor(0.0);
        assert!(vib.lifetime_ns <= purcell_lifetime * 1.2);
        // Averaged rates decay slower than the peak rate but faster than the mean rate.
        let comps = model(22.0).components(0.0);
        let mean_rate: f64 = comps.iter().map(|c| c.weight * (1.0 + c.c1 + c.c2)).sum();
        assert!(vib.lifetime_ns < 12.35 / mean_rate);
    }

    #[test]
    fn doubling_nodes_keeps_lifetime() {
        let cfg = SweepConfig::default();
        for d in [0.0, -60.0, -210.0] {
            let a = sweep_point(&model(22.0), d, &cfg).unwrap().lifetime_ns;
            let m = DecayModel {
                quadrature: Quadrature::GaussHermite(128),
                ..model(22.0)
            };
            let b = sweep_point(&m, d, &cfg).unwrap().lifetime_ns;
            assert!((a - b).abs() < 1e-3 * a);
        }
    }
}
