//! Bounded Levenberg-Marquardt least squares with linearised and
//! profile-likelihood confidence intervals.
//!
//! Residuals are weighted (`(model - data) / σ`). Parameters whose lower
//! and upper bounds coincide are held fixed and excluded from the
//! optimisation; they get zero variance.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Two-sided 95 % normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;
/// 95 % quantile of χ² with one degree of freedom (`Z95²`).
pub const CHI2_1_95: f64 = Z95 * Z95;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Param {
    pub name: String,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Param {
    pub fn new(name: &str, value: f64) -> Self {
        Self::bounded(name, value, f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn bounded(name: &str, value: f64, lower: f64, upper: f64) -> Self {
        Self {
            name: name.to_string(),
            value,
            lower,
            upper,
        }
    }

    pub fn fixed(name: &str, value: f64) -> Self {
        Self::bounded(name, value, value, value)
    }

    pub fn is_fixed(&self) -> bool {
        self.lower == self.upper
    }

    fn clamp(&self, v: f64) -> f64 {
        v.max(self.lower).min(self.upper)
    }
}

/// Data weighting for curve fits.
#[derive(Debug, Clone, Default)]
pub enum Weights {
    /// `σ = sqrt(max(y, 1))`, for count data.
    #[default]
    Poisson,
    Uniform,
    Sigma(Vec<f64>),
}

impl Weights {
    pub fn sigmas(&self, ys: &[f64]) -> Vec<f64> {
        match self {
            Weights::Poisson => ys.iter().map(|&y| y.max(1.0).sqrt()).collect(),
            Weights::Uniform => vec![1.0; ys.len()],
            Weights::Sigma(s) => s.clone(),
        }
    }
}

/// A model `y = f(x; p)` with optional analytic parameter gradient.
pub trait CurveModel {
    fn names(&self) -> Vec<&'static str>;
    fn eval(&self, x: f64, p: &[f64]) -> f64;
    fn gradient(&self, _x: f64, _p: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

type ResidualFn<'a> = Box<dyn Fn(&[f64], &mut [f64]) + 'a>;
type JacobianFn<'a> = Box<dyn Fn(&[f64], &mut DMatrix<f64>) + 'a>;

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Stop when an accepted step lowers the SSE by less than this fraction.
    pub sse_rel_tol: f64,
    /// Stop when `‖Jᵀr‖∞` falls below this.
    pub grad_tol: f64,
    /// Scale the covariance by the reduced χ².
    pub scale_covariance: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            sse_rel_tol: 1e-10,
            grad_tol: 1e-8,
            scale_covariance: true,
        }
    }
}

pub struct FitProblem<'a> {
    params: Vec<Param>,
    n_residuals: usize,
    residuals: ResidualFn<'a>,
    jacobian: Option<JacobianFn<'a>>,
    pub options: FitOptions,
}

impl<'a> FitProblem<'a> {
    /// `f(p, out)` must fill `out` (length `n_residuals`) with weighted residuals.
    pub fn new<F>(params: Vec<Param>, n_residuals: usize, f: F) -> Result<Self>
    where
        F: Fn(&[f64], &mut [f64]) + 'a,
    {
        for p in &params {
            if p.lower > p.upper || !(p.value >= p.lower && p.value <= p.upper) {
                return Err(Error::Fit(format!(
                    "initial value of {} ({}) outside [{}, {}]",
                    p.name, p.value, p.lower, p.upper
                )));
            }
        }
        let n_free = params.iter().filter(|p| !p.is_fixed()).count();
        if n_residuals < n_free {
            return Err(Error::Fit(format!(
                "{n_residuals} residuals for {n_free} free parameters"
            )));
        }
        Ok(Self {
            params,
            n_residuals,
            residuals: Box::new(f),
            jacobian: None,
            options: FitOptions::default(),
        })
    }

    /// Weighted curve fit of `model` to `(xs, ys)`.
    pub fn curve<M>(params: Vec<Param>, xs: &'a [f64], ys: &'a [f64], weights: Weights, model: M) -> Result<Self>
    where
        M: CurveModel + 'a,
    {
        if xs.len() != ys.len() {
            return Err(Error::Fit(format!("{} abscissae for {} ordinates", xs.len(), ys.len())));
        }
        let sigma = weights.sigmas(ys);
        if sigma.len() != ys.len() || sigma.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Fit("weights must be positive, one per point".into()));
        }
        let inv: Vec<f64> = sigma.iter().map(|s| 1.0 / s).collect();
        let inv_j = inv.clone();
        let model = std::rc::Rc::new(model);
        let m_res = model.clone();
        let has_gradient = model.gradient(xs.first().copied().unwrap_or(0.0), &values(&params)).is_some();
        let mut prob = Self::new(params, xs.len(), move |p, out| {
            for (i, o) in out.iter_mut().enumerate() {
                *o = (m_res.eval(xs[i], p) - ys[i]) * inv[i];
            }
        })?;
        if has_gradient {
            prob.jacobian = Some(Box::new(move |p, jac| {
                for i in 0..xs.len() {
                    let g = model.gradient(xs[i], p).expect("gradient");
                    for (k, gk) in g.iter().enumerate() {
                        jac[(i, k)] = gk * inv_j[i];
                    }
                }
            }));
        }
        Ok(prob)
    }

    pub fn with_jacobian<J>(mut self, j: J) -> Self
    where
        J: Fn(&[f64], &mut DMatrix<f64>) + 'a,
    {
        self.jacobian = Some(Box::new(j));
        self
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn n_residuals(&self) -> usize {
        self.n_residuals
    }

    pub fn residuals(&self, p: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; self.n_residuals];
        (self.residuals)(p, &mut r);
        r
    }

    pub fn sse(&self, p: &[f64]) -> f64 {
        self.residuals(p).iter().map(|r| r * r).sum()
    }

    /// Central-difference Jacobian over all parameters.
    pub fn numerical_jacobian(&self, p: &[f64]) -> DMatrix<f64> {
        let n = p.len();
        let mut jac = DMatrix::zeros(self.n_residuals, n);
        let mut x = p.to_vec();
        let mut rp = vec![0.0; self.n_residuals];
        let mut rm = vec![0.0; self.n_residuals];
        let step = f64::EPSILON.cbrt();
        for k in 0..n {
            let h = step * p[k].abs().max(1e-8);
            x[k] = p[k] + h;
            (self.residuals)(&x, &mut rp);
            x[k] = p[k] - h;
            (self.residuals)(&x, &mut rm);
            x[k] = p[k];
            for i in 0..self.n_residuals {
                jac[(i, k)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        jac
    }

    pub fn jacobian(&self, p: &[f64]) -> DMatrix<f64> {
        match &self.jacobian {
            Some(j) => {
                let mut jac = DMatrix::zeros(self.n_residuals, p.len());
                j(p, &mut jac);
                jac
            }
            None => self.numerical_jacobian(p),
        }
    }
}

fn values(params: &[Param]) -> Vec<f64> {
    params.iter().map(|p| p.value).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    #[serde(skip)]
    pub covariance: DMatrix<f64>,
    pub ci95: Vec<f64>,
    pub sse: f64,
    pub dof: usize,
    pub reduced_chi2: f64,
    pub converged: bool,
    pub iterations: usize,
    pub termination: String,
    /// SSE after every accepted step, starting with the initial point.
    pub sse_history: Vec<f64>,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.estimates[i])
    }

    pub fn ci(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.ci95[i])
    }

    pub fn stderr(&self, index: usize) -> f64 {
        self.covariance[(index, index)].max(0.0).sqrt()
    }
}

/// Minimises the weighted SSE of `problem` from its initial parameters.
pub fn least_squares(problem: &FitProblem) -> FitResult {
    minimize(problem, &problem.params)
}

fn minimize(problem: &FitProblem, params: &[Param]) -> FitResult {
    let opts = &problem.options;
    let free: Vec<usize> = (0..params.len()).filter(|&k| !params[k].is_fixed()).collect();
    let mut x = values(params);
    let mut r = DVector::from_vec(problem.residuals(&x));
    let mut sse = r.norm_squared();
    let mut history = vec![sse];

    let mut converged = false;
    let mut termination = String::from("maximum iterations reached");
    let mut iterations = 0;

    if !sse.is_finite() {
        termination = "non-finite residuals at the initial point".into();
    } else if free.is_empty() {
        converged = true;
        termination = "no free parameters".into();
    } else {
        let mut mu = -1.0;
        let mut nu = 2.0;
        'outer: while iterations < opts.max_iterations {
            iterations += 1;
            let jac_full = problem.jacobian(&x);
            let jac = jac_full.select_columns(&free);
            let a = jac.transpose() * &jac;
            let g = jac.transpose() * &r;
            if g.amax() < opts.grad_tol || sse == 0.0 {
                converged = true;
                termination = "gradient below tolerance".into();
                break;
            }
            let diag: Vec<f64> = (0..free.len()).map(|i| a[(i, i)].max(1e-300)).collect();
            if mu < 0.0 {
                mu = 1e-3 * diag.iter().cloned().fold(0.0, f64::max);
            }
            loop {
                let mut damped = a.clone();
                for i in 0..free.len() {
                    damped[(i, i)] += mu * diag[i];
                }
                let step = damped.lu().solve(&(-&g));
                let Some(step) = step else {
                    mu *= nu;
                    nu *= 2.0;
                    continue;
                };
                let mut trial = x.clone();
                for (i, &k) in free.iter().enumerate() {
                    trial[k] = params[k].clamp(x[k] + step[i]);
                }
                let actual_step =
                    DVector::from_iterator(free.len(), free.iter().map(|&k| trial[k] - x[k]));
                let r_trial = DVector::from_vec(problem.residuals(&trial));
                let sse_trial = r_trial.norm_squared();
                let predicted = sse - (&r + &jac * &actual_step).norm_squared();
                if sse_trial.is_finite() && sse_trial < sse {
                    let gain = (sse - sse_trial) / predicted.max(f64::MIN_POSITIVE);
                    let rel_change = (sse - sse_trial) / sse;
                    x = trial;
                    r = r_trial;
                    sse = sse_trial;
                    history.push(sse);
                    mu *= (1.0 - (2.0 * gain - 1.0).powi(3)).max(1.0 / 3.0);
                    nu = 2.0;
                    if rel_change < opts.sse_rel_tol {
                        converged = true;
                        termination = "relative SSE change below tolerance".into();
                        break 'outer;
                    }
                    break;
                }
                mu *= nu;
                nu *= 2.0;
                if !mu.is_finite() || mu > 1e300 {
                    converged = true;
                    termination = "no downhill step available".into();
                    break 'outer;
                }
            }
        }
    }

    let n = params.len();
    let dof = problem.n_residuals.saturating_sub(free.len());
    let reduced_chi2 = if dof > 0 { sse / dof as f64 } else { f64::NAN };
    let mut covariance = DMatrix::zeros(n, n);
    if !free.is_empty() && sse.is_finite() {
        let jac = problem.jacobian(&x).select_columns(&free);
        let a = jac.transpose() * &jac;
        let scale = if opts.scale_covariance && dof > 0 { reduced_chi2 } else { 1.0 };
        let eps = 1e-14 * a.amax().max(f64::MIN_POSITIVE);
        if let Ok(inv) = a.pseudo_inverse(eps) {
            for (i, &ki) in free.iter().enumerate() {
                for (j, &kj) in free.iter().enumerate() {
                    covariance[(ki, kj)] = inv[(i, j)] * scale;
                }
            }
        }
    }
    // Symmetrise round-off.
    let covariance = (&covariance + covariance.transpose()) * 0.5;
    let ci95 = (0..n).map(|k| Z95 * covariance[(k, k)].max(0.0).sqrt()).collect();

    FitResult {
        names: params.iter().map(|p| p.name.clone()).collect(),
        estimates: x,
        covariance,
        ci95,
        sse,
        dof,
        reduced_chi2,
        converged,
        iterations,
        termination,
        sse_history: history,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum IntervalMethod {
    /// Parameter is fixed; the interval is a point.
    Degenerate,
    /// Profile agreed with `estimate ± ci95` within 5 %.
    Linear,
    Profile,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfileInterval {
    pub lower: f64,
    pub upper: f64,
    /// The profile never crossed the threshold on this side.
    pub lower_open: bool,
    pub upper_open: bool,
    pub method: IntervalMethod,
}

/// Profile-likelihood 95 % interval for parameter `index`.
///
/// The threshold is `SSE_min + χ²₁(0.95)·s²` with `s²` the reduced χ² when
/// the covariance is scaled, matching the linear interval for a model that
/// is linear in its parameters.
pub fn profile_ci(problem: &FitProblem, result: &FitResult, index: usize) -> Result<ProfileInterval> {
    if index >= problem.params.len() {
        return Err(Error::Fit(format!("no parameter with index {index}")));
    }
    if !result.converged {
        return Err(Error::Fit("profile requires a converged fit".into()));
    }
    let theta_hat = result.estimates[index];
    let base = &problem.params[index];
    if base.is_fixed() {
        return Ok(ProfileInterval {
            lower: theta_hat,
            upper: theta_hat,
            lower_open: false,
            upper_open: false,
            method: IntervalMethod::Degenerate,
        });
    }
    let s2 = if problem.options.scale_covariance && result.dof > 0 {
        result.reduced_chi2
    } else {
        1.0
    };
    let target = result.sse + CHI2_1_95 * s2;
    let lin = result.ci95[index];

    let profile_sse = |theta: f64, start: &[f64]| -> (f64, Vec<f64>) {
        let mut ps: Vec<Param> = problem.params.clone();
        for (k, p) in ps.iter_mut().enumerate() {
            p.value = p.clamp(start[k]);
        }
        ps[index] = Param::fixed(&ps[index].name, theta);
        let fit = minimize(problem, &ps);
        (fit.sse, fit.estimates)
    };

    let mut bounds = [(theta_hat, false); 2];
    for (side, sign) in [(0usize, -1.0f64), (1, 1.0)] {
        let limit = if sign < 0.0 { base.lower } else { base.upper };
        let mut step = if lin.is_finite() && lin > 0.0 {
            lin
        } else {
            0.1 * theta_hat.abs().max(1.0)
        };
        let mut prev_theta = theta_hat;
        let mut prev_x = result.estimates.clone();
        let mut found = None;
        for _ in 0..60 {
            let mut theta = prev_theta + sign * step;
            let at_limit = if sign < 0.0 { theta <= limit } else { theta >= limit };
            if at_limit {
                theta = limit;
            }
            let (f, x) = profile_sse(theta, &prev_x);
            if f >= target {
                // Bisect the crossing between prev_theta and theta.
                let (mut lo, mut hi) = (prev_theta, theta);
                let mut x_lo = prev_x.clone();
                for _ in 0..50 {
                    let mid = 0.5 * (lo + hi);
                    let (fm, xm) = profile_sse(mid, &x_lo);
                    if fm >= target {
                        hi = mid;
                    } else {
                        lo = mid;
                        x_lo = xm;
                    }
                    if (hi - lo).abs() <= 1e-10 * (theta_hat.abs() + step) {
                        break;
                    }
                }
                found = Some(0.5 * (lo + hi));
                break;
            }
            if at_limit || !theta.is_finite() {
                break;
            }
            prev_theta = theta;
            prev_x = x;
            step *= 1.6;
        }
        bounds[side] = match found {
            Some(t) => (t, false),
            None => (if limit.is_finite() { limit } else { sign * f64::INFINITY }, true),
        };
    }

    let (lower, lower_open) = bounds[0];
    let (upper, upper_open) = bounds[1];
    let quadratic = !lower_open
        && !upper_open
        && lin > 0.0
        && ((theta_hat - lower) - lin).abs() <= 0.05 * lin
        && ((upper - theta_hat) - lin).abs() <= 0.05 * lin;
    Ok(if quadratic {
        ProfileInterval {
            lower: theta_hat - lin,
            upper: theta_hat + lin,
            lower_open: false,
            upper_open: false,
            method: IntervalMethod::Linear,
        }
    } else {
        ProfileInterval {
            lower,
            upper,
            lower_open,
            upper_open,
            method: IntervalMethod::Profile,
        }
    })
}

/// `A·exp(-(t - t0)/τ) + offset` with parameters `[A, τ, offset]` and fixed `t0`.
#[derive(Debug, Clone, Copy)]
pub struct ExpDecay {
    pub t0: f64,
}

impl CurveModel for ExpDecay {
    fn names(&self) -> Vec<&'static str> {
        vec!["amplitude", "tau", "offset"]
    }

    fn eval(&self, t: f64, p: &[f64]) -> f64 {
        p[0] * (-(t - self.t0) / p[1]).exp() + p[2]
    }

    fn gradient(&self, t: f64, p: &[f64]) -> Option<Vec<f64>> {
        let e = (-(t - self.t0) / p[1]).exp();
        Some(vec![e, p[0] * e * (t - self.t0) / (p[1] * p[1]), 1.0])
    }
}
