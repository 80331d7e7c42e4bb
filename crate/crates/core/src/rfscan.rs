//! Resonance-fluorescence lineshapes under charge noise.
//!
//! Laser detunings and linewidths are in plain MHz at the boundary and
//! converted to angular rates (rad/µs) wherever a two-level response is
//! evaluated. Cavity displacements are in pm.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::fit::{least_squares, CurveModel, FitProblem, FitResult, Param, Weights};
use crate::quad::{integrate, CUTOFF_FWHM};
use crate::units::{ordinary, TWO_PI};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChargeNoise {
    /// Lorentzian FWHM Γ_ext (MHz).
    pub gamma_ext_mhz: f64,
    /// Stark shift of the resolved trap (MHz).
    pub trap_shift_mhz: f64,
    /// Trap loading and unloading rate (Hz).
    pub trap_flip_rate_hz: f64,
}

impl ChargeNoise {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_ext_mhz >= 0.0) {
            return domain(format!("Gamma_ext must be non-negative, got {}", self.gamma_ext_mhz));
        }
        if !(self.trap_flip_rate_hz >= 0.0) {
            return domain(format!("trap flip rate must be non-negative, got {}", self.trap_flip_rate_hz));
        }
        Ok(())
    }
}

/// Unit-height Lorentzian of full width `fwhm`.
pub fn lorentzian(x: f64, fwhm: f64) -> f64 {
    1.0 / (1.0 + (2.0 * x / fwhm).powi(2))
}

/// Homogeneous Purcell-broadened linewidth `γ₀F/2π` (MHz) for `gamma0` in rad/µs.
pub fn homogeneous_fwhm_mhz(gamma0: f64, f_p: f64) -> f64 {
    ordinary(gamma0 * f_p)
}

/// Charge-noise-broadened line, normalised to unit height, plus a flat
/// background. The convolution of two Lorentzians is a Lorentzian whose
/// FWHM is the sum of the two.
pub fn linewidth_profile(delta_nv_mhz: &[f64], gamma_ext_mhz: f64, f_p: f64, gamma0: f64, background: f64) -> Vec<f64> {
    let w = gamma_ext_mhz + homogeneous_fwhm_mhz(gamma0, f_p);
    delta_nv_mhz.iter().map(|&d| lorentzian(d, w) + background).collect()
}

/// Two broadened lines separated by the trap shift.
///
/// Parameters: `background`, `amp_unloaded`, `amp_loaded`, `center` (MHz),
/// `shift` (MHz), `gamma_ext` (MHz). The homogeneous width is held fixed.
#[derive(Debug, Clone, Copy)]
pub struct DoubletModel {
    pub homogeneous_mhz: f64,
}

impl DoubletModel {
    pub const NAMES: [&'static str; 6] = ["background", "amp_unloaded", "amp_loaded", "center", "shift", "gamma_ext"];
}

impl CurveModel for DoubletModel {
    fn names(&self) -> Vec<&'static str> {
        Self::NAMES.to_vec()
    }

    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        let w = p[5] + self.homogeneous_mhz;
        p[0] + p[1] * lorentzian(x - p[3], w) + p[2] * lorentzian(x - p[3] - p[4], w)
    }

    fn gradient(&self, x: f64, p: &[f64]) -> Option<Vec<f64>> {
        let w = p[5] + self.homogeneous_mhz;
        let u1 = x - p[3];
        let u2 = x - p[3] - p[4];
        let l1 = lorentzian(u1, w);
        let l2 = lorentzian(u2, w);
        // d/du L = -8u/w² L², d/dw L = 8u²/w³ L²
        let du1 = -8.0 * u1 / (w * w) * l1 * l1;
        let du2 = -8.0 * u2 / (w * w) * l2 * l2;
        let dw1 = 8.0 * u1 * u1 / (w * w * w) * l1 * l1;
        let dw2 = 8.0 * u2 * u2 / (w * w * w) * l2 * l2;
        Some(vec![
            1.0,
            l1,
            l2,
            -(p[1] * du1 + p[2] * du2),
            -p[2] * du2,
            p[1] * dw1 + p[2] * dw2,
        ])
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DoubletFit {
    pub background: f64,
    pub center_mhz: f64,
    pub shift_mhz: f64,
    pub gamma_ext_mhz: f64,
    pub slr: f64,
    pub contrast: f64,
    pub fit: FitResult,
}

/// Starting values for [`fit_doublet`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoubletGuess {
    pub shift_mhz: f64,
    pub gamma_ext_mhz: f64,
}

/// Poisson-weighted doublet fit to an RF scan.
pub fn fit_doublet(detuning_mhz: &[f64], counts: &[f64], homogeneous_mhz: f64, guess: &DoubletGuess) -> Result<DoubletFit> {
    if detuning_mhz.len() != counts.len() || counts.len() < 8 {
        return domain("doublet fit needs at least 8 matching samples");
    }
    let (imax, &cmax) = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let cmin = counts.iter().cloned().fold(f64::INFINITY, f64::min).max(0.0);
    let span = detuning_mhz[detuning_mhz.len() - 1] - detuning_mhz[0];
    let params = vec![
        Param::bounded("background", cmin.max(1e-9), 0.0, f64::INFINITY),
        Param::bounded("amp_unloaded", 0.5 * (cmax - cmin), 0.0, f64::INFINITY),
        Param::bounded("amp_loaded", 0.5 * (cmax - cmin), 0.0, f64::INFINITY),
        Param::new("center", detuning_mhz[imax] - 0.5 * guess.shift_mhz),
        Param::bounded("shift", guess.shift_mhz, -span, span),
        Param::bounded("gamma_ext", guess.gamma_ext_mhz.max(1.0), 0.0, span),
    ];
    let model = DoubletModel { homogeneous_mhz };
    let prob = FitProblem::curve(params, detuning_mhz, counts, Weights::Poisson, model)?;
    let fit = least_squares(&prob);
    if !fit.converged {
        return Err(Error::Fit(format!("doublet fit: {}", fit.termination)));
    }
    let p = &fit.estimates;
    // Peak of the fitted signal above background, searched on a fine grid.
    let peak = (0..=2000)
        .map(|k| detuning_mhz[0] + span * k as f64 / 2000.0)
        .map(|x| model.eval(x, p) - p[0])
        .fold(0.0, f64::max);
    let slr = if p[0] > 0.0 { peak / p[0] } else { f64::INFINITY };
    Ok(DoubletFit {
        background: p[0],
        center_mhz: p[3],
        shift_mhz: p[4],
        gamma_ext_mhz: p[5],
        slr,
        contrast: contrast(slr),
        fit,
    })
}

/// `SLR/(SLR+1)`; 1 for a background-free signal.
pub fn contrast(slr: f64) -> f64 {
    if slr.is_infinite() {
        1.0
    } else {
        slr / (slr + 1.0)
    }
}

/// Cavity mode geometry for the displacement scan. M1 is resonant at
/// `m1_position_pm`, M2 at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoubletCavity {
    /// `F_P − 1` for each mode at resonance.
    pub c1: f64,
    pub c2: f64,
    pub m1_position_pm: f64,
    pub mode_hwhm_pm: f64,
    /// Natural decay rate γ₀ (rad/µs).
    pub gamma0: f64,
}

impl DoubletCavity {
    pub fn validate(&self) -> Result<()> {
        if !(self.c1 >= 0.0 && self.c2 >= 0.0) {
            return domain("mode enhancements must be non-negative");
        }
        if !(self.mode_hwhm_pm > 0.0 && self.gamma0 > 0.0) {
            return domain("mode width and gamma0 must be positive");
        }
        Ok(())
    }

    pub fn mode_weights(&self, delta_cav_pm: f64) -> (f64, f64) {
        let w = self.mode_hwhm_pm;
        (
            1.0 / (1.0 + ((delta_cav_pm - self.m1_position_pm) / w).powi(2)),
            1.0 / (1.0 + (delta_cav_pm / w).powi(2)),
        )
    }
}

/// Steady-state excited population of a two-level system driven at
/// squared Rabi frequency `p` with detuning `delta` and decay `gamma`
/// (all angular, rad/µs).
pub fn excited_population(p: f64, delta: f64, gamma: f64) -> f64 {
    0.5 * (0.5 * p) / (0.5 * p + delta * delta + 0.25 * gamma * gamma)
}

/// Excited population with the laser entering through M1 and the decay
/// Purcell-enhanced by both modes.
pub fn cavity_population(cav: &DoubletCavity, delta_cav_pm: f64, p0: f64, delta: f64) -> f64 {
    let (l1, l2) = cav.mode_weights(delta_cav_pm);
    excited_population(p0 * l1, delta, (1.0 + l1 * cav.c1 + l2 * cav.c2) * cav.gamma0)
}

/// Average of `f(δ)` over a Lorentzian of FWHM `fwhm` truncated to
/// `±CUTOFF_FWHM·fwhm` and renormalised to the retained mass.
pub fn lorentzian_average<F: Fn(f64) -> f64>(f: F, fwhm: f64, rel_tol: f64) -> Result<f64> {
    if fwhm <= 0.0 {
        return Ok(f(0.0));
    }
    // In θ = atan(2δ/Γ) the Lorentzian measure is uniform.
    let tmax = (2.0 * CUTOFF_FWHM).atan();
    let (v, _) = integrate(|t| f(0.5 * fwhm * t.tan()), -tmax, tmax, 1e-300, rel_tol, 4000)?;
    Ok(v / (2.0 * tmax))
}

/// Detected M2 emission versus cavity displacement, up to the overall scale.
pub fn rf_vs_cavity(delta_cav_pm: &[f64], p0: f64, cav: &DoubletCavity, noise: &ChargeNoise, delta_nv_mhz: f64) -> Result<Vec<f64>> {
    cav.validate()?;
    noise.validate()?;
    if !(p0 >= 0.0) {
        return domain(format!("power must be non-negative, got {p0}"));
    }
    let g = TWO_PI * noise.gamma_ext_mhz;
    let d0 = TWO_PI * delta_nv_mhz;
    delta_cav_pm
        .iter()
        .map(|&dc| {
            let (_, l2) = cav.mode_weights(dc);
            let rho = lorentzian_average(|d| cavity_population(cav, dc, p0, d0 + d), g, 1e-9)?;
            Ok(l2 * cav.c2 * cav.gamma0 * rho)
        })
        .collect()
}

/// Largest value of `y` with `x` inside `[lo, hi]`.
pub fn window_max(x: &[f64], y: &[f64], lo: f64, hi: f64) -> Option<f64> {
    x.iter()
        .zip(y)
        .filter(|(xi, _)| **xi >= lo && **xi <= hi)
        .map(|(_, v)| *v)
        .reduce(f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationParams {
    /// Saturated intensity (counts/s).
    pub i_sat: f64,
    /// Power to squared Rabi frequency, (rad/µs)² per nW.
    pub a_scale: f64,
    pub f_p: f64,
    /// rad/µs.
    pub gamma0: f64,
}

impl SaturationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.i_sat > 0.0 && self.a_scale > 0.0 && self.f_p > 0.0 && self.gamma0 > 0.0) {
            return domain("saturation parameters must be positive");
        }
        Ok(())
    }
}

/// Charge-noise-broadened saturation curve; `gamma_ext` in rad/µs.
pub fn saturation_rf(p_nw: f64, sp: &SaturationParams, gamma_ext: f64) -> f64 {
    let s = 2.0 * sp.a_scale * p_nw;
    let h = (sp.gamma0 * sp.f_p).powi(2);
    sp.i_sat * s / (s + h + 2.0 * gamma_ext * (s + h).sqrt())
}

pub fn saturation_curve(p_nw: &[f64], sp: &SaturationParams, gamma_ext: f64) -> Result<Vec<f64>> {
    sp.validate()?;
    if p_nw.iter().any(|p| !(*p >= 0.0)) {
        return domain("powers must be non-negative");
    }
    Ok(p_nw.iter().map(|&p| saturation_rf(p, sp, gamma_ext)).collect())
}

/// Power (nW) at which the curve reaches half of `i_sat`, in closed form.
pub fn saturation_power(sp: &SaturationParams, gamma_ext: f64) -> Result<f64> {
    sp.validate()?;
    // s = h + 2Γ√(s+h); with u = √(s+h): u² − 2Γu − 2h = 0.
    let h = (sp.gamma0 * sp.f_p).powi(2);
    let u = gamma_ext + (gamma_ext * gamma_ext + 2.0 * h).sqrt();
    Ok((u * u - h) / (2.0 * sp.a_scale))
}

/// One Gaussian component of a count histogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixtureFit {
    /// Components ordered by mean.
    pub components: Vec<MixtureComponent>,
    pub log_likelihood: f64,
    /// Smallest Ashman separation between neighbouring components.
    pub separation: f64,
}

/// Components closer than this Ashman separation are treated as one.
pub const MIN_SEPARATION: f64 = 2.0;

fn ashman(a: &MixtureComponent, b: &MixtureComponent) -> f64 {
    std::f64::consts::SQRT_2 * (a.mean - b.mean).abs() / (a.sigma * a.sigma + b.sigma * b.sigma).sqrt()
}

/// Best of several EM runs, started from quantiles and from evenly
/// spaced points over the sample range.
fn em(samples: &[f64], k: usize) -> MixtureFit {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let quant = |q: f64| sorted[((q * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1)];
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let kf = k as f64;
    let starts: [Vec<f64>; 3] = [
        (0..k).map(|j| quant((j as f64 + 0.5) / kf)).collect(),
        (0..k).map(|j| quant((j as f64 + 1.0) / (kf + 1.0))).collect(),
        (0..k).map(|j| lo + (hi - lo) * (j as f64 + 0.5) / kf).collect(),
    ];
    starts
        .iter()
        .map(|m| em_from(samples, m, (hi - lo).max(1e-9)))
        .max_by(|a, b| a.log_likelihood.total_cmp(&b.log_likelihood))
        .expect("three starts")
}

fn em_from(samples: &[f64], means: &[f64], spread: f64) -> MixtureFit {
    let n = samples.len() as f64;
    let k = means.len();
    let mut comps: Vec<MixtureComponent> = means
        .iter()
        .map(|&mean| MixtureComponent {
            weight: 1.0 / k as f64,
            mean,
            sigma: spread / (2.0 * k as f64),
        })
        .collect();
    let floor = 1e-6 * spread;
    let mut resp = vec![0.0; samples.len() * k];
    let mut ll_prev = f64::NEG_INFINITY;
    let mut ll = ll_prev;
    for _ in 0..1000 {
        ll = 0.0;
        for (i, &x) in samples.iter().enumerate() {
            let mut tot = 0.0;
            for (j, c) in comps.iter().enumerate() {
                let z = (x - c.mean) / c.sigma;
                let v = c.weight * (-0.5 * z * z).exp() / (c.sigma * (TWO_PI).sqrt());
                resp[i * k + j] = v;
                tot += v;
            }
            let tot = tot.max(f64::MIN_POSITIVE);
            for j in 0..k {
                resp[i * k + j] /= tot;
            }
            ll += tot.ln();
        }
        for (j, c) in comps.iter_mut().enumerate() {
            let nj: f64 = (0..samples.len()).map(|i| resp[i * k + j]).sum();
            if nj < 1e-12 {
                continue;
            }
            let mean = samples.iter().enumerate().map(|(i, x)| resp[i * k + j] * x).sum::<f64>() / nj;
            let var = samples
                .iter()
                .enumerate()
                .map(|(i, x)| resp[i * k + j] * (x - mean).powi(2))
                .sum::<f64>()
                / nj;
            *c = MixtureComponent {
                weight: nj / n,
                mean,
                sigma: var.sqrt().max(floor),
            };
        }
        if (ll - ll_prev).abs() <= 1e-10 * ll.abs().max(1.0) {
            break;
        }
        ll_prev = ll;
    }
    comps.sort_by(|a, b| a.mean.total_cmp(&b.mean));
    let separation = comps
        .windows(2)
        .map(|w| ashman(&w[0], &w[1]))
        .fold(f64::INFINITY, f64::min);
    MixtureFit {
        components: comps,
        log_likelihood: ll,
        separation,
    }
}

/// Gaussian mixture with up to `max_k` components, chosen by BIC among
/// the fits whose components are all resolved.
pub fn fit_mixture(samples: &[f64], max_k: usize) -> Result<MixtureFit> {
    if samples.len() < 10 {
        return domain("mixture fit needs at least 10 samples");
    }
    let n = samples.len() as f64;
    let mut best: Option<(f64, MixtureFit)> = None;
    let mut worst_overlap = f64::INFINITY;
    for k in 2..=max_k.max(2) {
        let m = em(samples, k);
        if m.separation < MIN_SEPARATION {
            worst_overlap = worst_overlap.min(m.separation);
            continue;
        }
        let bic = (3 * k - 1) as f64 * n.ln() - 2.0 * m.log_likelihood;
        if best.as_ref().is_none_or(|(b, _)| bic < *b) {
            best = Some((bic, m));
        }
    }
    best.map(|(_, m)| m).ok_or(Error::Classification {
        reason: "no resolvable sub-distributions".into(),
        overlap: worst_overlap,
    })
}

/// Count samples per power setpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapHistogram {
    pub setpoints: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackgroundExtraction {
    pub mixtures: Vec<MixtureFit>,
    /// Laser background per power (counts/s per nW) and offset.
    pub slope: f64,
    pub intercept: f64,
    /// Signal-to-laser ratio and contrast at the working setpoint.
    pub slr: f64,
    pub contrast: f64,
}

/// Ordinary least-squares line `(slope, intercept)`.
pub fn linear_regression(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return domain("regression needs two matching samples");
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return domain("regression abscissae are all equal");
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Classifies each setpoint and regresses the lowest (laser-only)
/// sub-distribution against power. The SLR is evaluated at setpoint
/// `working` from its highest sub-distribution.
pub fn classify_and_extract_background(hist: &TrapHistogram, powers_nw: &[f64], working: usize) -> Result<BackgroundExtraction> {
    if hist.setpoints.len() != powers_nw.len() || powers_nw.len() < 3 {
        return domain("need at least three setpoints with matching powers");
    }
    if working >= powers_nw.len() {
        return domain("working setpoint out of range");
    }
    let mixtures = hist
        .setpoints
        .iter()
        .map(|s| fit_mixture(s, 3))
        .collect::<Result<Vec<_>>>()?;
    let laser: Vec<f64> = mixtures.iter().map(|m| m.components[0].mean).collect();
    let (slope, intercept) = linear_regression(powers_nw, &laser)?;
    let bg = slope * powers_nw[working] + intercept;
    let top = mixtures[working].components.last().expect("at least two components").mean;
    let slr = if bg > 0.0 { (top - bg) / bg } else { f64::INFINITY };
    Ok(BackgroundExtraction {
        mixtures,
        slope,
        intercept,
        slr,
        contrast: contrast(slr),
    })
}

/// Background-subtracted RF₀ rescaled to the reference PL level.
pub fn correct_rf0(rf0_raw: f64, background: f64, pl: f64, pl_ref: f64) -> Result<f64> {
    if !(pl > 0.0 && pl_ref > 0.0) {
        return domain("PL levels must be positive");
    }
    let v = (rf0_raw - background) * pl_ref / pl;
    if v < 0.0 {
        warn!("corrected RF0 {v} is negative, clamped to 0");
        return Ok(0.0);
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shape::fwhm;
    use crate::quad::lorentzian_retained_mass;
    use crate::units::rate_from_lifetime_ns;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Cauchy, Distribution, Normal, Poisson};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn gamma0() -> f64 {
        rate_from_lifetime_ns(12.35)
    }

    fn cavity() -> DoubletCavity {
        DoubletCavity {
            c1: 0.44,
            c2: 1.068,
            m1_position_pm: -210.0,
            mode_hwhm_pm: 40.0,
            gamma0: gamma0(),
        }
    }

    #[test]
    fn homogeneous_linewidth() {
        let grid: Vec<f64> = (-2000..=2000).map(|i| i as f64 * 0.05).collect();
        let y = linewidth_profile(&grid, 0.0, 1.79, gamma0(), 0.0);
        let w = fwhm(&grid, &y).unwrap();
        assert!((w - 23.07).abs() < 0.02, "{w}");
    }

    #[test]
    fn broadened_linewidth() {
        let grid: Vec<f64> = (-4000..=4000).map(|i| i as f64 * 0.25).collect();
        let y = linewidth_profile(&grid, 159.0, 1.79, gamma0(), 0.0);
        assert!((fwhm(&grid, &y).unwrap() - 182.07).abs() < 0.1);
    }

    #[test]
    fn numerical_convolution_matches_additivity() {
        let dx = 0.5;
        let grid: Vec<f64> = (-8000..=8000).map(|i| i as f64 * dx).collect();
        let (wa, wb) = (159.0, 23.07);
        let out: Vec<f64> = grid
            .iter()
            .step_by(4)
            .map(|&x| grid.iter().map(|&s| lorentzian(s, wa) * lorentzian(x - s, wb)).sum::<f64>())
            .collect();
        let xs: Vec<f64> = grid.iter().step_by(4).cloned().collect();
        let w = fwhm(&xs, &out).unwrap();
        assert!((w - (wa + wb)).abs() < 0.005 * (wa + wb), "{w}");
    }

    #[test]
    fn synthetic_doublet_recovered() {
        let hom = homogeneous_fwhm_mhz(gamma0(), 1.79);
        let model = DoubletModel { homogeneous_mhz: hom };
        let truth = [1000.0, 9000.0, 6000.0, -60.0, 171.0, 159.0];
        let grid: Vec<f64> = (-150..=150).map(|i| i as f64 * 5.0).collect();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(7);
        let counts: Vec<f64> = grid
            .iter()
            .map(|&x| Poisson::new(model.eval(x, &truth)).unwrap().sample(&mut rng))
            .collect();
        let guess = DoubletGuess { shift_mhz: 150.0, gamma_ext_mhz: 120.0 };
        let f = fit_doublet(&grid, &counts, hom, &guess).unwrap();
        assert!((f.shift_mhz - 171.0).abs() < 3.0, "{}", f.shift_mhz);
        assert!((f.gamma_ext_mhz - 159.0).abs() < 5.0);
        assert!((f.center_mhz + 60.0).abs() < 3.0);
    }

    #[test]
    fn contrast_values() {
        assert!((contrast(14.0) - 0.9333).abs() < 1e-4);
        assert_eq!(contrast(f64::INFINITY), 1.0);
    }

    #[test]
    fn saturation_reference_point() {
        let sp = SaturationParams {
            i_sat: 250e3,
            a_scale: 1.7e3,
            f_p: 23.07 / ordinary(gamma0()),
            gamma0: gamma0(),
        };
        let g = TWO_PI * 159.0;
        let ps = saturation_power(&sp, g).unwrap();
        assert!((saturation_rf(ps, &sp, g) - 125e3).abs() < 1e-6);
        assert!((ps - 1192.0).abs() < 2.0, "{ps}");
        let rf = saturation_rf(300.0, &sp, g);
        assert!((rf - 82.8e3).abs() < 0.2e3, "{rf}");
        assert!((saturation_rf(1e12, &sp, g) / 250e3 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn saturation_without_noise_is_two_level() {
        let sp = SaturationParams {
            i_sat: 1.0,
            a_scale: 3.0,
            f_p: 1.79,
            gamma0: gamma0(),
        };
        for p in [0.0, 1.0, 30.0, 1e4] {
            let s = 2.0 * sp.a_scale * p / (sp.gamma0 * sp.f_p).powi(2);
            assert!((saturation_rf(p, &sp, 0.0) - s / (1.0 + s)).abs() < 1e-12);
        }
    }

    #[test]
    fn doublet_asymmetry_at_high_power() {
        let noise = ChargeNoise { gamma_ext_mhz: 159.0, trap_shift_mhz: 171.0, trap_flip_rate_hz: 0.01 };
        let grid: Vec<f64> = (-400..=150).map(|i| i as f64).collect();
        let ratio = |p0: f64, dnv: f64| {
            let y = rf_vs_cavity(&grid, p0, &cavity(), &noise, dnv).unwrap();
            window_max(&grid, &y, -40.0, 40.0).unwrap() / window_max(&grid, &y, -250.0, -170.0).unwrap()
        };
        let hot = ratio(3e6, 0.0);
        let detuned = ratio(3e6, 171.0);
        assert!(hot > 1.5, "{hot}");
        assert!((detuned - 1.0).abs() < (hot - 1.0).abs());
        let powers = [1e2, 1e4, 1e5, 1e6, 1e7];
        let r: Vec<f64> = powers.iter().map(|&p| ratio(p, 0.0)).collect();
        assert!(r.windows(2).all(|w| w[1] >= w[0]), "{r:?}");
    }

    #[test]
    fn linear_regime_scales_with_power() {
        let noise = ChargeNoise { gamma_ext_mhz: 159.0, trap_shift_mhz: 171.0, trap_flip_rate_hz: 0.0 };
        let grid: Vec<f64> = (-30..=10).map(|i| i as f64 * 10.0).collect();
        let a = rf_vs_cavity(&grid, 1e-3, &cavity(), &noise, 0.0).unwrap();
        let b = rf_vs_cavity(&grid, 2e-3, &cavity(), &noise, 0.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((y / x - 2.0).abs() < 2e-3);
        }
    }

    #[test]
    fn sampling_agrees_with_quadrature() {
        let cav = cavity();
        let fw = TWO_PI * 159.0;
        let f = |d: f64| cavity_population(&cav, -100.0, 1e6, d);
        let quad = lorentzian_average(f, fw, 1e-10).unwrap();
        let cauchy = Cauchy::new(0.0, 0.5 * fw).unwrap();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
        let cut = CUTOFF_FWHM * fw;
        let vals: Vec<f64> = std::iter::repeat_with(|| cauchy.sample(&mut rng))
            .filter(|d: &f64| d.abs() <= cut)
            .take(40_000)
            .map(f)
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((mean - quad).abs() < 3.0 * sd / n.sqrt(), "{mean} {quad}");
    }

    #[test]
    fn truncated_mass() {
        let v = lorentzian_average(|_| 1.0, 3.0, 1e-12).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        assert!((1.0 - lorentzian_retained_mass() - 0.0318).abs() < 1e-3);
    }

    fn three_population(means: [f64; 3], powers: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        (0..powers)
            .map(|_| {
                let mut s = Vec::new();
                for (m, n) in means.iter().zip([600, 300, 900]) {
                    let d = Normal::new(*m, m.sqrt() * 2.0).unwrap();
                    s.extend((0..n).map(|_| d.sample(&mut rng)));
                }
                s
            })
            .collect()
    }

    #[test]
    fn mixture_recovers_means() {
        let set = three_population([400.0, 2500.0, 6000.0], 1, 3);
        let m = fit_mixture(&set[0], 3).unwrap();
        assert_eq!(m.components.len(), 3);
        for (c, t) in m.components.iter().zip([400.0, 2500.0, 6000.0]) {
            assert!((c.mean - t).abs() < 0.01 * t, "{} vs {t}", c.mean);
        }
    }

    #[test]
    fn background_regression() {
        let powers = [50.0, 100.0, 200.0, 300.0];
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
        let setpoints: Vec<Vec<f64>> = powers
            .iter()
            .map(|&p| {
                let laser: f64 = 4.0 * p;
                let mut s = Vec::new();
                for (m, n) in [(laser, 500), (laser + 1500.0, 300), (laser + 14.0 * 1200.0, 800)] {
                    let d = Normal::new(m, f64::sqrt(m)).unwrap();
                    s.extend((0..n).map(|_| d.sample(&mut rng)));
                }
                s
            })
            .collect();
        let r = classify_and_extract_background(&TrapHistogram { setpoints }, &powers, 3).unwrap();
        assert!((r.slope - 4.0).abs() < 0.05, "{}", r.slope);
        assert!((r.slr - 14.0).abs() < 0.3, "{}", r.slr);
    }

    #[test]
    fn overlapping_histogram_is_unresolvable() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(9);
        let d = Normal::new(100.0, 10.0).unwrap();
        let s: Vec<f64> = (0..2000).map(|_| d.sample(&mut rng)).collect();
        assert!(matches!(fit_mixture(&s, 3), Err(Error::Classification { .. })));
    }

    #[test]
    fn rf0_correction() {
        assert_eq!(correct_rf0(5e4, 0.0, 1.0, 1.0).unwrap(), 5e4);
        assert_eq!(correct_rf0(3e3, 3e3, 2.0, 1.0).unwrap(), 0.0);
        assert_eq!(correct_rf0(1e3, 3e3, 2.0, 1.0).unwrap(), 0.0);
        assert!(correct_rf0(1.0, 0.0, 0.0, 1.0).is_err());
        // Forward model: PL deficit scales the true signal down.
        let truth = 4.2e4;
        let (bg, pl_ref, pl) = (1.3e3, 9e3, 7.2e3);
        let raw = truth * pl / pl_ref + bg;
        assert!((correct_rf0(raw, bg, pl, pl_ref).unwrap() - truth).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn lorentzian_fwhm_additivity(wa in 1.0f64..300.0, f_p in 1.0f64..3.0) {
            let hom = homogeneous_fwhm_mhz(gamma0(), f_p);
            let total = wa + hom;
            let grid: Vec<f64> = (-2000..=2000).map(|i| i as f64 * total / 400.0).collect();
            let y = linewidth_profile(&grid, wa, f_p, gamma0(), 0.0);
            let w = fwhm(&grid, &y).unwrap();
            prop_assert!((w - total).abs() < 1e-3 * total);
        }

        #[test]
        fn excited_population_bounded(p in 0.0f64..1e9, d in -1e4f64..1e4, g in 1.0f64..1e3) {
            let r = excited_population(p, d, g);
            prop_assert!((0.0..0.5).contains(&r) || r == 0.0);
        }
    }
}
