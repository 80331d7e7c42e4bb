//! Three-level (ground, excited, shelf) rate model under continuous
//! non-resonant excitation, and its photon autocorrelation.
//!
//! Rates are in 1/µs, delays in ns.

use log::warn;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::fit::CurveModel;
use crate::rates::{Edge, RateMatrix};

pub const LABELS: [&str; 3] = ["g", "e", "s"];
const G: usize = 0;
const E: usize = 1;
const S: usize = 2;

/// Fraction of `k_532 + k_eg` above which the simplified form is unreliable.
pub const SEPARATION_LIMIT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate3Params {
    pub k_eg: f64,
    pub k_532: f64,
    pub k_s: f64,
    pub k_d: f64,
}

impl Rate3Params {
    pub fn new(k_eg: f64, k_532: f64, k_s: f64, k_d: f64) -> Result<Self> {
        let p = Self { k_eg, k_532, k_s, k_d };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.k_eg, self.k_532, self.k_s, self.k_d];
        if all.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return domain(format!("rates must be finite and non-negative, got {all:?}"));
        }
        if !(self.k_eg > 0.0) {
            return domain("k_eg must be positive");
        }
        Ok(())
    }

    pub fn generator(&self) -> RateMatrix {
        RateMatrix::from_edges(
            &LABELS,
            &[
                Edge { from: G, to: E, rate: self.k_532 },
                Edge { from: E, to: G, rate: self.k_eg },
                Edge { from: E, to: S, rate: self.k_s },
                Edge { from: S, to: G, rate: self.k_d },
            ],
        )
        .expect("three-level generator is well formed")
    }

    /// Whether shelving and de-shelving are slow compared with the
    /// optical cycle, as the simplified correlation formula assumes.
    pub fn scale_separated(&self) -> bool {
        let fast = self.k_532 + self.k_eg;
        self.k_s.max(self.k_d) <= SEPARATION_LIMIT * fast
    }

    /// Height of the bunching plateau above one,
    /// `x = k_532·k_s / (k_d(k_eg + k_532))`.
    pub fn bunching_amplitude(&self) -> f64 {
        self.k_532 * self.k_s / (self.k_d * (self.k_eg + self.k_532))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SteadyState {
    pub rho_g: f64,
    pub rho_e: f64,
    pub rho_s: f64,
    /// The shelf has no exit: all population ends there.
    pub absorbing: bool,
}

impl SteadyState {
    /// `ρ_g + ρ_e`, the population outside the shelf.
    pub fn triplet_occupation(&self) -> f64 {
        self.rho_g + self.rho_e
    }
}

pub fn steady_state(p: &Rate3Params) -> Result<SteadyState> {
    p.validate()?;
    if p.k_d == 0.0 && p.k_s > 0.0 && p.k_532 > 0.0 {
        return Ok(SteadyState {
            rho_g: 0.0,
            rho_e: 0.0,
            rho_s: 1.0,
            absorbing: true,
        });
    }
    // Flux balance: k_532 ρ_g = (k_eg + k_s) ρ_e, k_s ρ_e = k_d ρ_s.
    let e_over_g = p.k_532 / (p.k_eg + p.k_s);
    let s_over_g = if p.k_s == 0.0 { 0.0 } else { p.k_s * e_over_g / p.k_d };
    let norm = 1.0 + e_over_g + s_over_g;
    Ok(SteadyState {
        rho_g: 1.0 / norm,
        rho_e: e_over_g / norm,
        rho_s: s_over_g / norm,
        absorbing: false,
    })
}

/// Emitter "on" fraction inferred from the bunching plateau, `1/(1 + x)`.
///
/// This is the ratio of the long-time brightness to the brightness just
/// after a photon, when the shelf has been emptied.
pub fn on_fraction_from_bunching(p: &Rate3Params) -> f64 {
    1.0 / (1.0 + p.bunching_amplitude())
}

fn check_tau(tau_ns: f64) -> Result<()> {
    if !(tau_ns >= 0.0) {
        return domain(format!("delay must be non-negative, got {tau_ns} ns"));
    }
    Ok(())
}

fn rho_e_inf(p: &Rate3Params) -> Result<f64> {
    let ss = steady_state(p)?;
    if !(ss.rho_e > 0.0) {
        return domain("emitter is dark in steady state; g2 is undefined");
    }
    Ok(ss.rho_e)
}

/// Exact `g²(τ) = ρ_e(τ)/ρ_e(∞)` for `ρ(0) = (1, 0, 0)`.
///
/// The generator's non-zero eigenvalues solve `λ² − Bλ + C = 0` with
/// `B = k_532 + k_eg + k_s + k_d` and
/// `C = k_532(k_s + k_d) + (k_eg + k_s)k_d`, so ρ_e is a sum of two
/// exponentials (or a damped oscillation when the roots are complex).
pub fn g2_analytic(p: &Rate3Params, tau_ns: f64) -> Result<f64> {
    check_tau(tau_ns)?;
    let r_inf = rho_e_inf(p)?;
    let t = tau_ns * 1e-3;
    let a = p.k_532;
    let b = p.k_532 + p.k_eg + p.k_s + p.k_d;
    let c = p.k_532 * (p.k_s + p.k_d) + (p.k_eg + p.k_s) * p.k_d;
    let disc = b * b - 4.0 * c;
    // ρ_e(0) = 0 and ρ_e'(0) = k_532 fix the transient amplitudes.
    let p0 = -r_inf;
    let rho = if disc > 1e-12 * b * b {
        let sq = disc.sqrt();
        let l1 = 0.5 * (b - sq);
        let l2 = 0.5 * (b + sq);
        let a1 = (a - l2 * r_inf) / (l2 - l1);
        let a2 = p0 - a1;
        r_inf + a1 * (-l1 * t).exp() + a2 * (-l2 * t).exp()
    } else if disc < -1e-12 * b * b {
        let alpha = 0.5 * b;
        let omega = 0.5 * (-disc).sqrt();
        let q = (a + alpha * p0) / omega;
        r_inf + (-alpha * t).exp() * (p0 * (omega * t).cos() + q * (omega * t).sin())
    } else {
        let l = 0.5 * b;
        let q = a + l * p0;
        r_inf + (-l * t).exp() * (p0 + q * t)
    };
    Ok(rho / r_inf)
}

/// Two-exponential approximation valid for `k_s, k_d ≪ k_532 + k_eg`:
///
/// `g² = 1 − (1 + x)e^{−(k_eg+k_532)τ} + x·e^{−(k_d + k_532 k_s/(k_532+k_eg))τ}`.
///
/// Logs a warning when the scale separation fails by more than 10 %.
pub fn g2_simplified(p: &Rate3Params, tau_ns: f64) -> Result<f64> {
    check_tau(tau_ns)?;
    p.validate()?;
    if !(p.k_d > 0.0) {
        return domain("simplified form needs k_d > 0");
    }
    if !p.scale_separated() {
        warn!(
            "k_s = {} and k_d = {} are not small against k_532 + k_eg = {}; simplified g2 is approximate",
            p.k_s,
            p.k_d,
            p.k_532 + p.k_eg
        );
    }
    let t = tau_ns * 1e-3;
    let x = p.bunching_amplitude();
    let fast = p.k_eg + p.k_532;
    let slow = p.k_d + p.k_532 * p.k_s / fast;
    Ok(1.0 - (1.0 + x) * (-fast * t).exp() + x * (-slow * t).exp())
}

/// `ρ_e(τ)/ρ_e(∞)` on a sorted non-negative grid (ns) by propagating the
/// generator with the matrix exponential.
pub fn g2_numeric(p: &Rate3Params, tau_grid_ns: &[f64]) -> Result<Vec<f64>> {
    if tau_grid_ns.windows(2).any(|w| w[1] < w[0]) {
        return domain("delay grid must be sorted");
    }
    if let Some(&t) = tau_grid_ns.first() {
        check_tau(t)?;
    }
    let r_inf = rho_e_inf(p)?;
    let m = p.generator();
    let p0 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
    tau_grid_ns
        .iter()
        .map(|&t| Ok(m.propagate(&p0, t * 1e-3)?[E] / r_inf))
        .collect()
}

/// `(ρ_e(τ) + ℬ)/(ρ_e(∞) + ℬ)` from the clean `g²` and `ρ_e(∞)`.
pub fn g2_with_background(g2_clean: f64, rho_e_inf: f64, b: f64) -> Result<f64> {
    if !(rho_e_inf > 0.0) {
        return domain(format!("rho_e(inf) must be positive, got {rho_e_inf}"));
    }
    if !(b >= 0.0) {
        return domain(format!("background must be non-negative, got {b}"));
    }
    Ok((g2_clean * rho_e_inf + b) / (rho_e_inf + b))
}

/// Background that lifts the zero-delay value to `g2_zero`:
/// `ℬ = g·ρ_e(∞)/(1 − g)`.
pub fn background_for_g2_zero(g2_zero: f64, rho_e_inf: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&g2_zero) {
        return domain(format!("zero-delay value must lie in [0, 1), got {g2_zero}"));
    }
    Ok(g2_zero * rho_e_inf / (1.0 - g2_zero))
}

/// Curve model for fitting measured `g²(τ)` (τ in ns). Parameters:
/// `[k_eg, k_532, k_s, k_d, background_fraction]` where the last is
/// `ℬ/(ρ_e(∞) + ℬ)`, the zero-delay floor.
#[derive(Debug, Clone, Copy, Default)]
pub struct G2Model;

impl CurveModel for G2Model {
    fn names(&self) -> Vec<&'static str> {
        vec!["k_eg", "k_532", "k_s", "k_d", "background_fraction"]
    }

    fn eval(&self, tau_ns: f64, q: &[f64]) -> f64 {
        let p = Rate3Params {
            k_eg: q[0],
            k_532: q[1],
            k_s: q[2],
            k_d: q[3],
        };
        match g2_analytic(&p, tau_ns.abs()) {
            Ok(g) => q[4] + (1.0 - q[4]) * g,
            Err(_) => f64::NAN,
        }
    }
}
