//! Optical Bloch equations for a resonantly driven two-level transition.
//!
//! Times in ns, angular rates in rad/µs (converted internally). The Bloch
//! vector is `(u, v, w)` with `w = −1` in the ground state and
//! `ρ_ee = (1 + w)/2`; damping is radiative only (`T₂ = 2T₁`).

use ode_solvers::{Dopri5, OutputType, System, Vector3};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{domain, Error, Result};
use crate::quad::LorentzianRule;
use crate::units::TWO_PI;

/// Leading edge of the drive: an error-function rise blended with a
/// slower inverted exponential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveEnvelope {
    /// Twice the error-function σ (ns).
    pub t_fast: f64,
    /// Time constant of the slow component (ns).
    pub t_slow: f64,
    /// Peak Rabi frequency Ω_R (rad/µs).
    pub amplitude: f64,
    pub slow_fraction: f64,
}

/// Slow time constant (ns) giving a 9.5 ns 10–90% rise with
/// `t_fast = 3 ns` and `slow_fraction = 0.3`.
pub const DEFAULT_T_SLOW: f64 = 7.18965;

impl Default for DriveEnvelope {
    fn default() -> Self {
        Self {
            t_fast: 3.0,
            t_slow: DEFAULT_T_SLOW,
            amplitude: TWO_PI * 51.1,
            slow_fraction: 0.3,
        }
    }
}

impl DriveEnvelope {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_fast > 0.0) {
            return domain(format!("t_fast must be positive, got {}", self.t_fast));
        }
        if !(self.t_slow >= 0.0) {
            return domain(format!("t_slow must be non-negative, got {}", self.t_slow));
        }
        if !(0.0..1.0).contains(&self.slow_fraction) {
            return domain(format!("slow fraction must lie in [0, 1), got {}", self.slow_fraction));
        }
        if !(self.amplitude >= 0.0) {
            return domain("Rabi amplitude must be non-negative");
        }
        Ok(())
    }

    /// Normalised envelope in `[0, 1]`, centred on the fast edge at `t = 0`.
    pub fn value(&self, t: f64) -> f64 {
        let sigma = 0.5 * self.t_fast;
        let fast = 0.5 * (1.0 + erf(t / (sigma * std::f64::consts::SQRT_2)));
        let slow = if self.t_slow == 0.0 || t <= 0.0 {
            if t > 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            1.0 - (-t / self.t_slow).exp()
        };
        fast * ((1.0 - self.slow_fraction) + self.slow_fraction * slow)
    }

    pub fn rabi(&self, t: f64) -> f64 {
        self.amplitude * self.value(t)
    }

    /// Time at which the envelope first reaches `level`, by bisection.
    pub fn crossing(&self, level: f64) -> f64 {
        let (mut a, mut b) = (-10.0 * self.t_fast, 10.0 * self.t_fast + 50.0 * self.t_slow);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if self.value(m) < level {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    }

    /// 10–90% rise time (ns).
    pub fn rise_time(&self) -> f64 {
        self.crossing(0.9) - self.crossing(0.1)
    }

    /// Slow time constant reproducing `rise_ns`, keeping the other fields.
    pub fn with_rise_time(mut self, rise_ns: f64) -> Result<Self> {
        self.validate()?;
        let fastest = Self { t_slow: 0.0, ..self }.rise_time();
        if self.slow_fraction == 0.0 || rise_ns <= fastest {
            return domain(format!("rise time {rise_ns} ns is not reachable (fastest {fastest:.3} ns)"));
        }
        let (mut a, mut b) = (0.0, 1.0);
        while (Self { t_slow: b, ..self }).rise_time() < rise_ns {
            b *= 2.0;
            if b > 1e6 {
                return domain(format!("rise time {rise_ns} ns is not reachable"));
            }
        }
        for _ in 0..100 {
            let m = 0.5 * (a + b);
            if (Self { t_slow: m, ..self }).rise_time() < rise_ns {
                a = m;
            } else {
                b = m;
            }
        }
        self.t_slow = 0.5 * (a + b);
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { rtol: 1e-9, atol: 1e-11 }
    }
}

struct Bloch<F: Fn(f64) -> f64> {
    omega: F,
    delta: f64,
    gamma: f64,
}

impl<F: Fn(f64) -> f64> System<f64, Vector3<f64>> for Bloch<F> {
    fn system(&self, t: f64, y: &Vector3<f64>, dy: &mut Vector3<f64>) {
        let o = (self.omega)(t);
        let g2 = 0.5 * self.gamma;
        dy[0] = -g2 * y[0] - self.delta * y[1];
        dy[1] = self.delta * y[0] - g2 * y[1] + o * y[2];
        dy[2] = -o * y[1] - self.gamma * (y[2] + 1.0);
    }
}

fn check_grid(t_grid: &[f64], omega_max: f64) -> Result<f64> {
    if t_grid.len() < 2 {
        return domain("time grid needs at least two points");
    }
    let dt = t_grid[1] - t_grid[0];
    if !(dt > 0.0) {
        return domain("time grid must increase");
    }
    if t_grid.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.max(1.0)) {
        return domain("time grid must be uniform");
    }
    // ≥ 10 points per 1/Ω
    if omega_max > 0.0 && dt > 1e3 / (10.0 * omega_max) {
        return domain(format!(
            "time step {dt} ns does not resolve the Rabi period; use at most {:.4} ns",
            1e2 / omega_max
        ));
    }
    Ok(dt)
}

/// Excited population on a uniform `t_grid` (ns) for a general drive
/// `omega(t)` (rad/µs), detuning `delta` and total decay `gamma_total`
/// (both rad/µs). The system starts in the ground state at `t_grid[0]`.
pub fn obe_solve_with<F: Fn(f64) -> f64>(
    omega: F,
    omega_max: f64,
    delta: f64,
    gamma_total: f64,
    t_grid: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<f64>> {
    if !(gamma_total >= 0.0) {
        return domain("decay rate must be non-negative");
    }
    let dt = check_grid(t_grid, omega_max)?;
    let t0 = t_grid[0];
    let t_end = t_grid[t_grid.len() - 1];
    // Work in ns from the grid start: rates in rad/µs scale by 1e-3. The
    // solver's dense output compares |t|, so time must start at zero.
    let sys = Bloch {
        omega: |s: f64| 1e-3 * omega(s + t0),
        delta: 1e-3 * delta,
        gamma: 1e-3 * gamma_total,
    };
    let h_max = dt.min(if omega_max > 0.0 { 1e3 / omega_max } else { dt });
    let mut solver = Dopri5::from_param(
        sys,
        0.0,
        t_end - t0,
        dt,
        Vector3::new(0.0, 0.0, -1.0),
        opts.rtol,
        opts.atol,
        0.9,
        0.04,
        0.2,
        10.0,
        h_max,
        0.0,
        10_000_000,
        1000,
        OutputType::Dense,
    );
    solver.integrate().map_err(|e| {
        let t = match e {
            ode_solvers::dop_shared::IntegrationError::MaxNumStepReached { x, .. }
            | ode_solvers::dop_shared::IntegrationError::StepSizeUnderflow { x }
            | ode_solvers::dop_shared::IntegrationError::StiffnessDetected { x } => x,
        };
        Error::StepSize { t: t + t0 }
    })?;
    let ys = solver.y_out();
    let mut out: Vec<f64> = ys.iter().map(|y| (0.5 * (1.0 + y[2])).clamp(0.0, 1.0)).collect();
    out.resize(t_grid.len(), *out.last().unwrap_or(&0.0));
    Ok(out)
}

/// Optional slow decay of the bright population (µs).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Shelving {
    pub tau_spin_us: Option<f64>,
}

impl Shelving {
    pub fn factor(&self, t_ns: f64) -> f64 {
        match self.tau_spin_us {
            Some(tau) if tau > 0.0 && t_ns > 0.0 => (-t_ns * 1e-3 / tau).exp(),
            _ => 1.0,
        }
    }
}

/// Excited population under the shaped drive, with shelving applied.
pub fn obe_solve(
    env: &DriveEnvelope,
    delta: f64,
    gamma_total: f64,
    shelving: &Shelving,
    t_grid: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<f64>> {
    env.validate()?;
    let rho = obe_solve_with(|t| env.rabi(t), env.amplitude, delta, gamma_total, t_grid, opts)?;
    Ok(rho.iter().zip(t_grid).map(|(r, &t)| r * shelving.factor(t)).collect())
}

/// Closed-form excited population for constant Ω on resonance with
/// `T₂ = 2T₁` (rates in rad/µs, time in ns).
pub fn damped_rabi(omega: f64, gamma: f64, t_ns: f64) -> f64 {
    let t = t_ns * 1e-3;
    let ss = omega * omega / (2.0 * omega * omega + gamma * gamma);
    let disc = omega * omega - gamma * gamma / 16.0;
    let decay = (-0.75 * gamma * t).exp();
    let osc = if disc > 0.0 {
        let l = disc.sqrt();
        (l * t).cos() + 0.75 * gamma / l * (l * t).sin()
    } else if disc < 0.0 {
        let l = (-disc).sqrt();
        (l * t).cosh() + 0.75 * gamma / l * (l * t).sinh()
    } else {
        1.0 + 0.75 * gamma * t
    };
    ss * (1.0 - decay * osc)
}

/// Lorentzian-weighted average of `ρ_ee(t; δ + δ_cn)` over charge-noise
/// detunings of FWHM `gamma_ext` (rad/µs), using `nodes` quadrature points.
#[allow(clippy::too_many_arguments)]
pub fn charge_noise_average(
    env: &DriveEnvelope,
    delta: f64,
    gamma_total: f64,
    gamma_ext: f64,
    shelving: &Shelving,
    t_grid: &[f64],
    nodes: usize,
    opts: &SolverOptions,
) -> Result<Vec<f64>> {
    let rule = LorentzianRule::new(gamma_ext, nodes);
    let mut acc = vec![0.0; t_grid.len()];
    for (&d, &w) in rule.nodes.iter().zip(&rule.weights) {
        let r = obe_solve(env, delta + d, gamma_total, shelving, t_grid, opts)?;
        for (a, v) in acc.iter_mut().zip(&r) {
            *a += w * v;
        }
    }
    Ok(acc)
}

/// Largest drop from a local maximum to the following local minimum.
pub fn modulation_depth(y: &[f64]) -> f64 {
    let mut best: f64 = 0.0;
    let mut last_max: Option<f64> = None;
    for i in 1..y.len().saturating_sub(1) {
        if y[i] > y[i - 1] && y[i] >= y[i + 1] {
            last_max = Some(y[i]);
        } else if y[i] < y[i - 1] && y[i] <= y[i + 1] {
            if let Some(m) = last_max.take() {
                best = best.max(m - y[i]);
            }
        }
    }
    best
}

/// Incoherent additions to the Eₓ signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositionModel {
    /// A₁ fluorescence at the start of the pulse (counts/s).
    pub a1_amplitude: f64,
    /// Fast ISC decay of the A₁ contribution (ns).
    pub a1_decay_ns: f64,
    /// Laser leakage at full power (counts/s); follows the envelope.
    pub laser_background: f64,
}

impl CompositionModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.a1_amplitude >= 0.0 && self.a1_decay_ns >= 0.0 && self.laser_background >= 0.0) {
            return domain("composition terms must be non-negative");
        }
        Ok(())
    }

    /// A₁ and laser contributions at time `t` (counts/s).
    pub fn extra(&self, env: &DriveEnvelope, t: f64) -> f64 {
        let gate = env.value(t);
        let a1 = if self.a1_decay_ns > 0.0 && t > 0.0 {
            self.a1_amplitude * (-t / self.a1_decay_ns).exp()
        } else if t > 0.0 {
            0.0
        } else {
            self.a1_amplitude
        };
        gate * (a1 + self.laser_background)
    }
}

/// Total detected counts: Eₓ signal plus A₁ fluorescence and laser ramp.
pub fn compose_signal(ex_signal: &[f64], t_grid: &[f64], comp: &CompositionModel, env: &DriveEnvelope) -> Result<Vec<f64>> {
    comp.validate()?;
    if ex_signal.len() != t_grid.len() {
        return domain("signal and time grid lengths differ");
    }
    Ok(ex_signal
        .iter()
        .zip(t_grid)
        .map(|(s, &t)| s + comp.extra(env, t))
        .collect())
}

/// Share of the total that is not Eₓ signal over `[t0, t1]`.
pub fn non_ex_share(ex_signal: &[f64], total: &[f64], t_grid: &[f64], t0: f64, t1: f64) -> f64 {
    let (mut ex, mut tot) = (0.0, 0.0);
    for ((e, s), t) in ex_signal.iter().zip(total).zip(t_grid) {
        if *t >= t0 && *t <= t1 {
            ex += e;
            tot += s;
        }
    }
    if tot > 0.0 {
        1.0 - ex / tot
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decay::uniform_grid;
    use crate::units::rate_from_lifetime_ns;
    use proptest::prelude::*;

    fn gamma_purcell() -> f64 {
        TWO_PI * 23.07
    }

    #[test]
    fn envelope_limits_and_rise() {
        let e = DriveEnvelope::default();
        assert!(e.value(-100.0) < 1e-12);
        assert!((e.value(1e4) - 1.0).abs() < 1e-12);
        assert!((e.rise_time() - 9.5).abs() < 1e-3, "{}", e.rise_time());
        let c = e.with_rise_time(9.5).unwrap();
        assert!((c.t_slow - DEFAULT_T_SLOW).abs() < 1e-3, "{}", c.t_slow);
    }

    #[test]
    fn pure_error_function_is_symmetric() {
        let e = DriveEnvelope { slow_fraction: 0.0, ..DriveEnvelope::default() };
        for t in [0.3, 1.0, 2.5] {
            assert!((e.value(t) + e.value(-t) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn undamped_rabi() {
        let omega = TWO_PI * 30.0;
        let grid = uniform_grid(0.0, 100.0, 0.1);
        let r = obe_solve_with(|_| omega, omega, 0.0, 0.0, &grid, &SolverOptions::default()).unwrap();
        for (t, v) in grid.iter().zip(&r) {
            assert!((v - (omega * t * 1e-3 / 2.0).sin().powi(2)).abs() < 1e-6);
        }
    }

    #[test]
    fn no_drive_no_population() {
        let grid = uniform_grid(-20.0, 60.0, 0.1);
        let env = DriveEnvelope { amplitude: 0.0, ..DriveEnvelope::default() };
        let r = obe_solve(&env, 0.0, gamma_purcell(), &Shelving::default(), &grid, &SolverOptions::default()).unwrap();
        assert!(r.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn damped_rabi_matches_closed_form() {
        let omega = TWO_PI * 51.1;
        let g = gamma_purcell();
        let grid = uniform_grid(0.0, 150.0, 0.1);
        let r = obe_solve_with(|_| omega, omega, 0.0, g, &grid, &SolverOptions::default()).unwrap();
        for (t, v) in grid.iter().zip(&r) {
            assert!((v - damped_rabi(omega, g, *t)).abs() < 1e-6);
        }
        // Overdamped branch.
        let weak = 0.1 * g;
        let r = obe_solve_with(|_| weak, weak, 0.0, g, &grid, &SolverOptions::default()).unwrap();
        for (t, v) in grid.iter().zip(&r) {
            assert!((v - damped_rabi(weak, g, *t)).abs() < 1e-6);
        }
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let grid = uniform_grid(0.0, 100.0, 1.0);
        let env = DriveEnvelope::default();
        assert!(obe_solve(&env, 0.0, gamma_purcell(), &Shelving::default(), &grid, &SolverOptions::default()).is_err());
    }

    #[test]
    fn step_halving_is_stable() {
        let env = DriveEnvelope::default();
        let g1 = uniform_grid(-20.0, 80.0, 0.2);
        let g2 = uniform_grid(-20.0, 80.0, 0.1);
        let opts = SolverOptions::default();
        let a = obe_solve(&env, 0.0, gamma_purcell(), &Shelving::default(), &g1, &opts).unwrap();
        let b = obe_solve(&env, 0.0, gamma_purcell(), &Shelving::default(), &g2, &opts).unwrap();
        for (i, v) in a.iter().enumerate() {
            assert!((v - b[2 * i]).abs() < 1e-4);
        }
    }

    #[test]
    fn charge_noise_washes_out_oscillations() {
        let env = DriveEnvelope::default();
        let grid = uniform_grid(-20.0, 100.0, 0.25);
        let opts = SolverOptions::default();
        let avg = |gext: f64, delta: f64| {
            charge_noise_average(&env, delta, gamma_purcell(), TWO_PI * gext, &Shelving::default(), &grid, 48, &opts).unwrap()
        };
        let depths: Vec<f64> = [0.0, 50.0, 159.0, 300.0].iter().map(|&g| modulation_depth(&avg(g, 0.0))).collect();
        assert!(depths.windows(2).all(|w| w[1] <= w[0]), "{depths:?}");
        assert!(depths[2] > 0.0);
        let detuned = modulation_depth(&avg(159.0, TWO_PI * 171.0));
        assert!(detuned < 0.2 * depths[2], "{detuned} vs {}", depths[2]);
        assert!(((TWO_PI * 51.1) / gamma_purcell() - 2.2).abs() < 0.05 * 2.2);
    }

    #[test]
    fn zero_noise_average_is_identity() {
        let env = DriveEnvelope::default();
        let grid = uniform_grid(-10.0, 40.0, 0.25);
        let opts = SolverOptions::default();
        let a = charge_noise_average(&env, 0.0, gamma_purcell(), 0.0, &Shelving::default(), &grid, 16, &opts).unwrap();
        let b = obe_solve(&env, 0.0, gamma_purcell(), &Shelving::default(), &grid, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shelving_decays_the_signal() {
        let s = Shelving { tau_spin_us: Some(2.0) };
        assert!((s.factor(2000.0) - (-1f64).exp()).abs() < 1e-12);
        assert_eq!(Shelving::default().factor(1e6), 1.0);
    }

    #[test]
    fn composition() {
        let env = DriveEnvelope::default();
        let grid = uniform_grid(-10.0, 200.0, 0.5);
        let ex: Vec<f64> = grid.iter().map(|&t| 1e4 * env.value(t)).collect();
        let none = CompositionModel { a1_amplitude: 0.0, a1_decay_ns: 5.0, laser_background: 0.0 };
        assert_eq!(compose_signal(&ex, &grid, &none, &env).unwrap(), ex);
        let comp = CompositionModel { a1_amplitude: 3e4, a1_decay_ns: 6.0, laser_background: 2e3 };
        let tot = compose_signal(&ex, &grid, &comp, &env).unwrap();
        // Fast A₁ peak early, decaying to Eₓ plus background.
        let peak = tot.iter().cloned().fold(0.0, f64::max);
        assert!(peak > 1.5 * tot[tot.len() - 1]);
        assert!((tot[tot.len() - 1] - 1.2e4).abs() < 1.0);
        let share = non_ex_share(&ex, &tot, &grid, 0.0, 20.0);
        assert!(share > 0.3 && share < 1.0, "{share}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn population_bounded_and_symmetric(
            omega_mhz in 5.0f64..80.0,
            delta_mhz in 0.0f64..300.0,
            t_fast in 1.0f64..6.0,
        ) {
            let env = DriveEnvelope { t_fast, amplitude: TWO_PI * omega_mhz, ..DriveEnvelope::default() };
            let grid = uniform_grid(-10.0, 60.0, 0.1);
            let g = rate_from_lifetime_ns(12.35) * 1.79;
            let opts = SolverOptions::default();
            let p = obe_solve(&env, TWO_PI * delta_mhz, g, &Shelving::default(), &grid, &opts).unwrap();
            let m = obe_solve(&env, -TWO_PI * delta_mhz, g, &Shelving::default(), &grid, &opts).unwrap();
            for (a, b) in p.iter().zip(&m) {
                prop_assert!((0.0..=1.0).contains(a));
                prop_assert!((a - b).abs() < 1e-6);
            }
        }

        #[test]
        fn envelope_monotone(t_fast in 0.5f64..8.0, t_slow in 0.0f64..40.0, f in 0.0f64..0.99) {
            let e = DriveEnvelope { t_fast, t_slow, amplitude: 1.0, slow_fraction: f };
            let mut prev = 0.0;
            for k in 0..2000 {
                let v = e.value(-20.0 + 0.1 * k as f64);
                prop_assert!(v >= prev - 1e-15 && v <= 1.0);
                prev = v;
            }
        }
    }
}
