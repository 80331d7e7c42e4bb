//! Cavity-QED parameter calculus: Purcell factors, β, the cavity-modified
//! Debye-Waller factor, outcoupling efficiency and the mirror loss budget.
//!
//! Rates may be in any common unit as long as they agree; the parameter
//! records store angular frequencies in rad/µs.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::units::{angular, TWO_PI};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CavityParams {
    /// Top mirror transmission (ppm).
    pub t_top_ppm: f64,
    /// Bottom mirror transmission (ppm).
    pub t_bottom_ppm: f64,
    /// Scattering and absorption per round trip (ppm).
    pub loss_extra_ppm: f64,
    /// Optical frequency (THz).
    pub frequency_thz: f64,
    /// Quality factor of the mode.
    pub quality: f64,
    /// Splitting of M1 from M2 in displacement units (pm).
    pub mode_splitting_pm: f64,
    /// Half-width of the mode resonance in displacement units (pm).
    pub mode_hwhm_pm: f64,
    /// Displacement-to-frequency calibration (pm per GHz of detuning).
    pub pm_per_ghz: f64,
}

impl CavityParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("t_top_ppm", self.t_top_ppm),
            ("t_bottom_ppm", self.t_bottom_ppm),
            ("loss_extra_ppm", self.loss_extra_ppm),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return domain(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        if !(self.total_loss_ppm() > 0.0) {
            return domain("total round-trip loss must be positive");
        }
        if !(self.frequency_thz > 0.0) || !(self.quality > 0.0) {
            return domain("frequency and quality factor must be positive");
        }
        if !(self.mode_hwhm_pm > 0.0) || !(self.pm_per_ghz > 0.0) {
            return domain("mode width and displacement calibration must be positive");
        }
        Ok(())
    }

    pub fn total_loss_ppm(&self) -> f64 {
        self.t_top_ppm + self.t_bottom_ppm + self.loss_extra_ppm
    }

    pub fn loss_budget(&self) -> Result<LossBudget> {
        loss_budget(self.t_top_ppm, self.t_bottom_ppm, self.loss_extra_ppm)
    }

    /// κ as an angular rate in rad/µs.
    pub fn kappa(&self) -> Result<f64> {
        Ok(angular(kappa_from_quality(self.frequency_thz, self.quality)? * 1e3))
    }

    pub fn displacement_to_ghz(&self, pm: f64) -> f64 {
        pm / self.pm_per_ghz
    }

    pub fn ghz_to_displacement(&self, ghz: f64) -> f64 {
        ghz * self.pm_per_ghz
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmitterParams {
    /// Natural decay rate γ₀ (rad/µs).
    pub gamma0: f64,
    /// Debye-Waller factor ξ₀.
    pub xi0: f64,
    /// ZPL coupling g (rad/µs).
    pub g_zpl: f64,
    /// Dipole angle to the polarisation of M2 (degrees).
    pub theta_cav_deg: f64,
}

impl EmitterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma0 > 0.0) {
            return domain(format!("gamma0 must be positive, got {}", self.gamma0));
        }
        check_xi0(self.xi0)?;
        if !(self.g_zpl >= 0.0) {
            return domain(format!("g_zpl must be non-negative, got {}", self.g_zpl));
        }
        if !(0.0..180.0).contains(&self.theta_cav_deg) {
            return domain(format!("theta_cav must lie in [0, 180) degrees, got {}", self.theta_cav_deg));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PurcellReport {
    pub f_p: f64,
    pub beta: f64,
    pub f_p_zpl: f64,
    pub xi_cav: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBudget {
    pub finesse: f64,
    pub kappa_top_fraction: f64,
}

fn check_xi0(xi0: f64) -> Result<()> {
    if !(xi0 > 0.0 && xi0 < 1.0) {
        return domain(format!("Debye-Waller factor must lie in (0, 1), got {xi0}"));
    }
    Ok(())
}

/// `F_P = 1 + 4g²/(κγ₀)`.
pub fn purcell_total(g_zpl: f64, kappa: f64, gamma0: f64) -> Result<f64> {
    if !(kappa > 0.0) || !(gamma0 > 0.0) {
        return domain(format!("kappa ({kappa}) and gamma0 ({gamma0}) must be positive"));
    }
    if !(g_zpl >= 0.0) {
        return domain(format!("coupling must be non-negative, got {g_zpl}"));
    }
    Ok(1.0 + 4.0 * g_zpl * g_zpl / (kappa * gamma0))
}

/// Inverse of [`purcell_total`]: `g = sqrt((F_P − 1)κγ₀/4)`.
pub fn g_from_purcell(f_p: f64, kappa: f64, gamma0: f64) -> Result<f64> {
    if !(kappa > 0.0) || !(gamma0 > 0.0) {
        return domain(format!("kappa ({kappa}) and gamma0 ({gamma0}) must be positive"));
    }
    if !(f_p >= 1.0) {
        return domain(format!("Purcell factor must be at least 1, got {f_p}"));
    }
    Ok(((f_p - 1.0) * kappa * gamma0 / 4.0).sqrt())
}

/// β, ZPL Purcell factor, ξ_cav and η from the overall Purcell factor.
///
/// `η = β·κ_top/(κ + γ₀)` with `κ_top = kappa_top_fraction·κ`.
pub fn derived_figures(
    f_p: f64,
    xi0: f64,
    kappa_top_fraction: f64,
    kappa: f64,
    gamma0: f64,
) -> Result<PurcellReport> {
    check_xi0(xi0)?;
    if !(f_p >= 1.0) || !f_p.is_finite() {
        return domain(format!("Purcell factor must be finite and at least 1, got {f_p}"));
    }
    if !(0.0..=1.0).contains(&kappa_top_fraction) {
        return domain(format!("kappa_top fraction must lie in [0, 1], got {kappa_top_fraction}"));
    }
    if !(kappa > 0.0) || !(gamma0 > 0.0) {
        return domain(format!("kappa ({kappa}) and gamma0 ({gamma0}) must be positive"));
    }
    let beta = (f_p - 1.0) / f_p;
    Ok(PurcellReport {
        f_p,
        beta,
        f_p_zpl: (f_p - (1.0 - xi0)) / xi0,
        xi_cav: beta + xi0 / f_p,
        eta: beta * kappa_top_fraction * kappa / (kappa + gamma0),
    })
}

/// First-order propagation of independent input uncertainties
/// `(σ_F, σ_ξ₀)` into the report fields, in field order.
pub fn derived_uncertainty(f_p: f64, sigma_f: f64, xi0: f64, sigma_xi0: f64, kappa_top_fraction: f64, kappa: f64, gamma0: f64) -> Result<PurcellReport> {
    derived_figures(f_p, xi0, kappa_top_fraction, kappa, gamma0)?;
    let out = kappa_top_fraction * kappa / (kappa + gamma0);
    // Partial derivatives with respect to F_P and ξ₀.
    let dbeta_df = 1.0 / (f_p * f_p);
    let dzpl_df = 1.0 / xi0;
    let dzpl_dxi = (1.0 - f_p) / (xi0 * xi0);
    let dxi_df = dbeta_df - xi0 / (f_p * f_p);
    let dxi_dxi = 1.0 / f_p;
    let q = |a: f64, b: f64| ((a * sigma_f).powi(2) + (b * sigma_xi0).powi(2)).sqrt();
    Ok(PurcellReport {
        f_p: sigma_f,
        beta: q(dbeta_df, 0.0),
        f_p_zpl: q(dzpl_df, dzpl_dxi),
        xi_cav: q(dxi_df, dxi_dxi),
        eta: q(dbeta_df * out, 0.0),
    })
}

/// Finesse `2π/L` and the top-mirror share of the round-trip loss.
pub fn loss_budget(t_top_ppm: f64, t_bottom_ppm: f64, loss_extra_ppm: f64) -> Result<LossBudget> {
    let parts = [t_top_ppm, t_bottom_ppm, loss_extra_ppm];
    if parts.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return domain(format!("mirror losses must be finite and non-negative, got {parts:?}"));
    }
    let total = parts.iter().sum::<f64>();
    if !(total > 0.0) {
        return Err(Error::Domain("total round-trip loss is zero".into()));
    }
    Ok(LossBudget {
        finesse: TWO_PI / (total * 1e-6),
        kappa_top_fraction: t_top_ppm / total,
    })
}

/// `κ/2π = ν/Q`, returned in GHz for ν in THz.
pub fn kappa_from_quality(frequency_thz: f64, quality: f64) -> Result<f64> {
    if !(frequency_thz > 0.0) || !(quality > 0.0) {
        return domain(format!("frequency ({frequency_thz}) and quality ({quality}) must be positive"));
    }
    Ok(frequency_thz * 1e3 / quality)
}

/// Free spectral range implied by κ and the finesse (same unit as κ).
pub fn free_spectral_range(kappa: f64, finesse: f64) -> f64 {
    kappa * finesse
}

/// Gain in signal-to-laser ratio available from removing charge noise,
/// `Γ_ext/(γ₀F_P)`. Both widths in the same (ordinary or angular) unit.
pub fn slr_gain_ratio(gamma_ext: f64, gamma0: f64, f_p: f64) -> Result<f64> {
    if !(gamma0 > 0.0) || !(f_p >= 1.0) || !(gamma_ext >= 0.0) {
        return domain("SLR gain needs gamma_ext >= 0, gamma0 > 0 and F_P >= 1");
    }
    Ok(gamma_ext / (gamma0 * f_p))
}

/// Ratio of the two modes' Purcell enhancements `C_M1/C_M2 = tan²θ`.
pub fn mode_coupling_ratio(theta_cav_deg: f64) -> f64 {
    theta_cav_deg.to_radians().tan().powi(2)
}

/// Splits a degenerate-mode enhancement `C` between the two polarisation
/// modes: `(sin²θ·C, cos²θ·C)` for (M1, M2).
pub fn split_enhancement(c_degenerate: f64, theta_cav_deg: f64) -> (f64, f64) {
    let t = theta_cav_deg.to_radians();
    (t.sin().powi(2) * c_degenerate, t.cos().powi(2) * c_degenerate)
}
