//! Unit conventions.
//!
//! Rates are carried internally as angular frequencies in rad/µs
//! ("angular MHz"). Boundary values quoted in ordinary MHz are converted
//! with [`angular`]; times are ns unless a name says otherwise.

use std::f64::consts::PI;

pub const TWO_PI: f64 = 2.0 * PI;

/// Ordinary frequency in MHz to angular frequency in rad/µs.
#[inline]
pub fn angular(f_mhz: f64) -> f64 {
    TWO_PI * f_mhz
}

/// Angular frequency in rad/µs to ordinary frequency in MHz.
#[inline]
pub fn ordinary(w: f64) -> f64 {
    w / TWO_PI
}

/// Decay rate in 1/µs from a lifetime in ns.
#[inline]
pub fn rate_from_lifetime_ns(tau_ns: f64) -> f64 {
    1.0e3 / tau_ns
}

/// Lifetime in ns from a decay rate in 1/µs.
#[inline]
pub fn lifetime_ns_from_rate(rate_per_us: f64) -> f64 {
    1.0e3 / rate_per_us
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn natural_rate_matches_lifetime() {
        // 1/12.35 ns and 2π·12.89 MHz describe the same decay rate.
        let from_tau = rate_from_lifetime_ns(12.35);
        assert!((from_tau - angular(12.89)).abs() / from_tau < 1e-3);
        assert!((ordinary(angular(23.07)) - 23.07).abs() < 1e-12);
    }
}
