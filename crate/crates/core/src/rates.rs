//! Continuous-time population models.
//!
//! A [`RateMatrix`] is the generator `M` of `ṗ = M p`. Column `j` holds the
//! rates out of state `j`: `M[(i, j)]` is the rate `j → i` and the diagonal
//! carries minus the total exit rate, so every column sums to zero.
//! Rates are in 1/µs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column sums must vanish to this tolerance relative to the largest rate.
pub const COLUMN_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub rate: f64,
}

#[derive(Debug, Clone)]
pub struct RateMatrix {
    labels: Vec<String>,
    generator: DMatrix<f64>,
}

impl RateMatrix {
    /// Builds a generator from directed edges. Parallel edges accumulate.
    pub fn from_edges<S: AsRef<str>>(labels: &[S], edges: &[Edge]) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::Generator("no states".into()));
        }
        let mut m = DMatrix::zeros(n, n);
        for e in edges {
            if e.from >= n || e.to >= n {
                return Err(Error::Generator(format!(
                    "edge {} -> {} references a state outside 0..{n}",
                    e.from, e.to
                )));
            }
            if e.from == e.to {
                return Err(Error::Generator(format!("self-loop on state {}", e.from)));
            }
            if !(e.rate >= 0.0) || !e.rate.is_finite() {
                return Err(Error::Generator(format!(
                    "edge {} -> {} has invalid rate {}",
                    e.from, e.to, e.rate
                )));
            }
            m[(e.to, e.from)] += e.rate;
            m[(e.from, e.from)] -= e.rate;
        }
        Ok(Self {
            labels: labels.iter().map(|s| s.as_ref().to_string()).collect(),
            generator: m,
        })
    }

    /// Wraps a dense generator after validating it.
    pub fn from_dense<S: AsRef<str>>(labels: &[S], generator: DMatrix<f64>) -> Result<Self> {
        if !generator.is_square() || generator.nrows() != labels.len() {
            return Err(Error::Generator(format!(
                "{}x{} generator for {} labels",
                generator.nrows(),
                generator.ncols(),
                labels.len()
            )));
        }
        let rm = Self {
            labels: labels.iter().map(|s| s.as_ref().to_string()).collect(),
            generator,
        };
        rm.validate()?;
        Ok(rm)
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.generator
    }

    /// Rate of the transition `from → to`.
    pub fn rate(&self, from: usize, to: usize) -> f64 {
        if from == to {
            0.0
        } else {
            self.generator[(to, from)]
        }
    }

    pub fn exit_rate(&self, state: usize) -> f64 {
        -self.generator[(state, state)]
    }

    /// All non-zero off-diagonal transitions.
    pub fn edges(&self) -> Vec<Edge> {
        let n = self.dim();
        let mut out = Vec::new();
        for from in 0..n {
            for to in 0..n {
                if from != to && self.generator[(to, from)] != 0.0 {
                    out.push(Edge {
                        from,
                        to,
                        rate: self.generator[(to, from)],
                    });
                }
            }
        }
        out
    }

    /// Checks non-negative off-diagonal rates and vanishing column sums.
    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        let scale = self.generator.amax().max(1.0);
        for j in 0..n {
            let mut sum = 0.0;
            for i in 0..n {
                let v = self.generator[(i, j)];
                if !v.is_finite() {
                    return Err(Error::Generator(format!("non-finite entry at ({i}, {j})")));
                }
                if i != j && v < 0.0 {
                    return Err(Error::Generator(format!("negative rate {v} at ({i}, {j})")));
                }
                sum += v;
            }
            if sum.abs() > COLUMN_SUM_TOL * scale {
                return Err(Error::Generator(format!(
                    "column {j} ({}) sums to {sum:e}",
                    self.labels[j]
                )));
            }
        }
        Ok(())
    }

    /// `exp(M·dt)` with `dt` in µs.
    pub fn propagator(&self, dt: f64) -> DMatrix<f64> {
        if dt == 0.0 {
            return DMatrix::identity(self.dim(), self.dim());
        }
        (&self.generator * dt).exp()
    }

    /// Propagates a population vector over `dt` µs.
    pub fn propagate(&self, p0: &DVector<f64>, dt: f64) -> Result<DVector<f64>> {
        self.validate()?;
        check_population(p0, self.dim())?;
        if !(dt >= 0.0) {
            return Err(Error::Domain(format!("negative duration {dt}")));
        }
        Ok(clean_population(self.propagator(dt) * p0))
    }

    /// Stationary distribution `M p = 0`, `Σ p = 1`.
    ///
    /// Fails when the chain has more than one closed class (singular system).
    pub fn steady_state(&self) -> Result<DVector<f64>> {
        self.validate()?;
        let n = self.dim();
        let mut a = self.generator.clone();
        let mut b = DVector::zeros(n);
        for j in 0..n {
            a[(n - 1, j)] = 1.0;
        }
        b[n - 1] = 1.0;
        let lu = a.lu();
        let p = lu
            .solve(&b)
            .ok_or_else(|| Error::Generator("steady state is not unique".into()))?;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Generator("steady state is not unique".into()));
        }
        Ok(clean_population(p))
    }
}

pub(crate) fn check_population(p: &DVector<f64>, n: usize) -> Result<()> {
    if p.len() != n {
        return Err(Error::Domain(format!(
            "population vector has {} entries, expected {n}",
            p.len()
        )));
    }
    if p.iter().any(|&v| !(v >= -1e-12)) {
        return Err(Error::Domain("population entries must be non-negative".into()));
    }
    let s = p.sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("populations sum to {s}, expected 1")));
    }
    Ok(())
}

/// Clamps round-off negatives to zero.
pub(crate) fn clean_population(mut p: DVector<f64>) -> DVector<f64> {
    for v in p.iter_mut() {
        if *v < 0.0 && *v > -1e-10 {
            *v = 0.0;
        }
    }
    p
}
