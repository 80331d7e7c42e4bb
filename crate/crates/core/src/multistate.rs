//! Ten-state NV⁻/NV⁰ model of the interleaved repump/probe pulse sequence.
//!
//! Each segment (green repump, resonant probe, dark wait) has its own
//! generator; the sequence steady state is the fixed point of the
//! full-cycle map. Rates are in 1/µs, durations in µs, powers in mW.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::rates::{check_population, clean_population, Edge, RateMatrix};

pub const N_STATES: usize = 10;

pub const LABELS: [&str; N_STATES] = [
    "g0", "g1", "lb0", "lb1", "ub0", "ub1", "singlet", "nv0g", "nv0e", "spare",
];

pub const G0: usize = 0;
pub const G1: usize = 1;
pub const LB0: usize = 2;
pub const LB1: usize = 3;
pub const UB0: usize = 4;
pub const UB1: usize = 5;
pub const SINGLET: usize = 6;
pub const NV0G: usize = 7;
pub const NV0E: usize = 8;
pub const SPARE: usize = 9;

/// Bundled placeholder rates. Not calibrated against any measurement.
pub const DEFAULT_CONFIG: &str = include_str!("../data/multistate_default.conf");

pub fn state_index(label: &str) -> Option<usize> {
    LABELS.iter().position(|l| *l == label)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Repump,
    Resonant,
    Wait,
}

impl fmt::Display for SegmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SegmentKind::Repump => "repump",
            SegmentKind::Resonant => "resonant",
            SegmentKind::Wait => "wait",
        })
    }
}

impl FromStr for SegmentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "repump" => Ok(SegmentKind::Repump),
            "resonant" => Ok(SegmentKind::Resonant),
            "wait" => Ok(SegmentKind::Wait),
            other => Err(Error::Format(format!("unknown segment kind {other:?}"))),
        }
    }
}

/// Additional transition read from the configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtraEdge {
    pub from: usize,
    pub to: usize,
    pub rate: f64,
    /// Scale with `beta_532 · P` like the other green-driven rates.
    pub green: bool,
    pub segments: Vec<SegmentKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultistateRates {
    pub gamma_nv: f64,
    pub purcell_ub: f64,
    pub isc_ms0: f64,
    pub isc_ms1: f64,
    pub singlet_decay: f64,
    pub beta_532: f64,
    pub green_exc_per_mw: f64,
    pub green_scale_ub: f64,
    pub green_scale_lb: f64,
    pub ion_per_mw: f64,
    pub singlet_ion_per_mw: f64,
    pub nv0_exc_per_mw: f64,
    pub gamma_nv0: f64,
    pub k_rec_per_mw: f64,
    pub k_ex1: f64,
    pub k_a10: f64,
    pub k_ion_res: f64,
    pub extra_edges: Vec<ExtraEdge>,
}

impl Default for MultistateRates {
    fn default() -> Self {
        Self::parse(DEFAULT_CONFIG).expect("bundled configuration parses")
    }
}

impl MultistateRates {
    /// Parses the commented `key = value` format.
    pub fn parse(text: &str) -> Result<Self> {
        let mut values: BTreeMap<String, f64> = BTreeMap::new();
        let mut extra_edges = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim();
            let value = value.trim();
            if key == "edge" {
                extra_edges.push(parse_edge(value).map_err(|e| {
                    Error::Format(format!("line {}: {e}", lineno + 1))
                })?);
                continue;
            }
            let v: f64 = value
                .parse()
                .map_err(|_| Error::Format(format!("line {}: {value:?} is not a number", lineno + 1)))?;
            if values.insert(key.to_string(), v).is_some() {
                return Err(Error::Format(format!("line {}: duplicate key {key}", lineno + 1)));
            }
        }
        let mut take = |k: &str| {
            values
                .remove(k)
                .ok_or_else(|| Error::Format(format!("missing key {k}")))
        };
        let rates = Self {
            gamma_nv: take("gamma_nv")?,
            purcell_ub: take("purcell_ub")?,
            isc_ms0: take("isc_ms0")?,
            isc_ms1: take("isc_ms1")?,
            singlet_decay: take("singlet_decay")?,
            beta_532: take("beta_532")?,
            green_exc_per_mw: take("green_exc_per_mw")?,
            green_scale_ub: take("green_scale_ub")?,
            green_scale_lb: take("green_scale_lb")?,
            ion_per_mw: take("ion_per_mw")?,
            singlet_ion_per_mw: take("singlet_ion_per_mw")?,
            nv0_exc_per_mw: take("nv0_exc_per_mw")?,
            gamma_nv0: take("gamma_nv0")?,
            k_rec_per_mw: take("k_rec_per_mw")?,
            k_ex1: take("k_ex1")?,
            k_a10: take("k_a10")?,
            k_ion_res: take("k_ion_res")?,
            extra_edges,
        };
        if let Some(k) = values.keys().next() {
            return Err(Error::Format(format!("unknown key {k}")));
        }
        rates.validate()?;
        Ok(rates)
    }

    pub fn validate(&self) -> Result<()> {
        let scalars = [
            self.gamma_nv,
            self.isc_ms0,
            self.isc_ms1,
            self.singlet_decay,
            self.beta_532,
            self.green_exc_per_mw,
            self.green_scale_ub,
            self.green_scale_lb,
            self.ion_per_mw,
            self.singlet_ion_per_mw,
            self.nv0_exc_per_mw,
            self.gamma_nv0,
            self.k_rec_per_mw,
            self.k_ex1,
            self.k_a10,
            self.k_ion_res,
        ];
        if scalars.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return domain("all rates must be finite and non-negative");
        }
        if !(self.purcell_ub >= 1.0) {
            return domain(format!("Purcell factor must be at least 1, got {}", self.purcell_ub));
        }
        for e in &self.extra_edges {
            if e.from == e.to || e.from >= N_STATES || e.to >= N_STATES {
                return domain(format!("invalid extra edge {} -> {}", e.from, e.to));
            }
            if !(e.rate >= 0.0) || !e.rate.is_finite() {
                return domain(format!("invalid extra edge rate {}", e.rate));
            }
        }
        Ok(())
    }

    /// Emits the configuration in the format read by [`MultistateRates::parse`].
    pub fn to_config(&self) -> String {
        let mut s = String::new();
        let pairs = [
            ("gamma_nv", self.gamma_nv),
            ("purcell_ub", self.purcell_ub),
            ("isc_ms0", self.isc_ms0),
            ("isc_ms1", self.isc_ms1),
            ("singlet_decay", self.singlet_decay),
            ("beta_532", self.beta_532),
            ("green_exc_per_mw", self.green_exc_per_mw),
            ("green_scale_ub", self.green_scale_ub),
            ("green_scale_lb", self.green_scale_lb),
            ("ion_per_mw", self.ion_per_mw),
            ("singlet_ion_per_mw", self.singlet_ion_per_mw),
            ("nv0_exc_per_mw", self.nv0_exc_per_mw),
            ("gamma_nv0", self.gamma_nv0),
            ("k_rec_per_mw", self.k_rec_per_mw),
            ("k_ex1", self.k_ex1),
            ("k_a10", self.k_a10),
            ("k_ion_res", self.k_ion_res),
        ];
        for (k, v) in pairs {
            s.push_str(&format!("{k} = {v:?}\n"));
        }
        for e in &self.extra_edges {
            let segs: Vec<String> = e.segments.iter().map(|k| k.to_string()).collect();
            s.push_str(&format!(
                "edge = {} {} {:?} {} {}\n",
                LABELS[e.from],
                LABELS[e.to],
                e.rate,
                if e.green { "green" } else { "const" },
                segs.join(",")
            ));
        }
        s
    }

    /// Radiative rate of a NV⁻ excited state (the upper branch is Purcell enhanced).
    pub fn radiative_rate(&self, state: usize) -> f64 {
        match state {
            LB0 | LB1 => self.gamma_nv,
            UB0 | UB1 => self.gamma_nv * self.purcell_ub,
            _ => 0.0,
        }
    }

    /// Generator for one segment kind at the given repump power.
    pub fn generator(&self, kind: SegmentKind, power_mw: f64) -> Result<RateMatrix> {
        self.validate()?;
        if !(power_mw >= 0.0) {
            return domain(format!("power must be non-negative, got {power_mw}"));
        }
        let mut edges = Vec::new();
        let mut add = |from: usize, to: usize, rate: f64| {
            if rate > 0.0 {
                edges.push(Edge { from, to, rate });
            }
        };

        // Spontaneous processes act in every segment.
        for (exc, gnd) in [(LB0, G0), (LB1, G1), (UB0, G0), (UB1, G1)] {
            add(exc, gnd, self.radiative_rate(exc));
        }
        for exc in [LB0, UB0] {
            add(exc, SINGLET, self.isc_ms0);
        }
        for exc in [LB1, UB1] {
            add(exc, SINGLET, self.isc_ms1);
        }
        add(SINGLET, G0, 0.5 * self.singlet_decay);
        add(SINGLET, G1, 0.5 * self.singlet_decay);
        add(NV0E, NV0G, self.gamma_nv0);

        let green = self.beta_532 * power_mw;
        match kind {
            SegmentKind::Repump => {
                let ub = self.green_exc_per_mw * self.green_scale_ub * green;
                let lb = self.green_exc_per_mw * self.green_scale_lb * green;
                add(G0, UB0, ub);
                add(G1, UB1, ub);
                add(G0, LB0, lb);
                add(G1, LB1, lb);
                for exc in [LB0, LB1, UB0, UB1] {
                    add(exc, NV0G, self.ion_per_mw * green);
                }
                add(SINGLET, NV0G, self.singlet_ion_per_mw * green);
                add(NV0G, NV0E, self.nv0_exc_per_mw * green);
                add(NV0E, G0, 0.5 * self.k_rec_per_mw * green);
                add(NV0E, G1, 0.5 * self.k_rec_per_mw * green);
            }
            SegmentKind::Resonant => {
                add(G0, G1, self.k_ex1);
                add(G1, G0, self.k_a10);
                add(G0, NV0G, self.k_ion_res);
            }
            SegmentKind::Wait => {}
        }
        for e in &self.extra_edges {
            if e.segments.contains(&kind) {
                add(e.from, e.to, if e.green { e.rate * green } else { e.rate });
            }
        }
        RateMatrix::from_edges(&LABELS, &edges)
    }

    /// Copy with the upper-branch Purcell factor replaced.
    pub fn with_purcell(&self, purcell_ub: f64) -> Self {
        Self {
            purcell_ub,
            ..self.clone()
        }
    }
}

fn parse_edge(spec: &str) -> Result<ExtraEdge> {
    let parts: Vec<&str> = spec.split_whitespace().collect();
    if parts.len() != 5 {
        return Err(Error::Format(
            "edge needs <from> <to> <rate> <const|green> <segments>".into(),
        ));
    }
    let from = state_index(parts[0]).ok_or_else(|| Error::Format(format!("unknown state {:?}", parts[0])))?;
    let to = state_index(parts[1]).ok_or_else(|| Error::Format(format!("unknown state {:?}", parts[1])))?;
    if from == to {
        return Err(Error::Format(format!("self-loop on {}", parts[0])));
    }
    let rate: f64 = parts[2]
        .parse()
        .map_err(|_| Error::Format(format!("{:?} is not a number", parts[2])))?;
    let green = match parts[3] {
        "const" => false,
        "green" => true,
        other => return Err(Error::Format(format!("scaling must be const or green, got {other:?}"))),
    };
    let segments = parts[4]
        .split(',')
        .map(SegmentKind::from_str)
        .collect::<Result<Vec<_>>>()?;
    Ok(ExtraEdge {
        from,
        to,
        rate,
        green,
        segments,
    })
}

#[derive(Debug, Clone)]
pub struct SegmentModel {
    pub kind: SegmentKind,
    pub duration_us: f64,
    pub generator: RateMatrix,
}

impl SegmentModel {
    pub fn new(kind: SegmentKind, duration_us: f64, generator: RateMatrix) -> Result<Self> {
        if !(duration_us > 0.0) || !duration_us.is_finite() {
            return domain(format!("segment duration must be positive, got {duration_us}"));
        }
        if generator.dim() != N_STATES {
            return domain(format!("segment generator has {} states, expected {N_STATES}", generator.dim()));
        }
        generator.validate()?;
        Ok(Self {
            kind,
            duration_us,
            generator,
        })
    }

    pub fn propagator(&self) -> DMatrix<f64> {
        self.generator.propagator(self.duration_us)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceTiming {
    pub repump_us: f64,
    pub wait_us: f64,
    pub resonant_us: f64,
}

impl Default for SequenceTiming {
    fn default() -> Self {
        Self {
            repump_us: 1.8,
            wait_us: 0.4,
            resonant_us: 31.0,
        }
    }
}

/// Repump, wait, probe, wait: the order in which a cycle is applied.
pub fn pulse_sequence(rates: &MultistateRates, timing: &SequenceTiming, repump_mw: f64) -> Result<Vec<SegmentModel>> {
    Ok(vec![
        SegmentModel::new(SegmentKind::Repump, timing.repump_us, rates.generator(SegmentKind::Repump, repump_mw)?)?,
        SegmentModel::new(SegmentKind::Wait, timing.wait_us, rates.generator(SegmentKind::Wait, 0.0)?)?,
        SegmentModel::new(SegmentKind::Resonant, timing.resonant_us, rates.generator(SegmentKind::Resonant, 0.0)?)?,
        SegmentModel::new(SegmentKind::Wait, timing.wait_us, rates.generator(SegmentKind::Wait, 0.0)?)?,
    ])
}

/// Population after `dt` µs under `generator`.
pub fn propagate(generator: &RateMatrix, p0: &DVector<f64>, dt: f64) -> Result<DVector<f64>> {
    generator.propagate(p0, dt)
}

/// Full-cycle map, first segment applied first.
pub fn cycle_map(segments: &[SegmentModel]) -> Result<DMatrix<f64>> {
    if segments.is_empty() {
        return domain("a sequence needs at least one segment");
    }
    let n = segments[0].generator.dim();
    let mut u = DMatrix::identity(n, n);
    for s in segments {
        if s.generator.dim() != n {
            return domain("segments have different state spaces");
        }
        u = s.propagator() * u;
    }
    Ok(u)
}

#[derive(Debug, Clone)]
pub struct SequenceSteadyState {
    /// Population at the start of the cycle.
    pub population: DVector<f64>,
    pub cycles: usize,
    pub residual: f64,
}

/// Iterates the cycle map from `init` (all in NV⁻ ms=0 when `None`) until the
/// max-norm change per cycle is below `tol`.
pub fn sequence_steady_state(
    segments: &[SegmentModel],
    tol: f64,
    max_cycles: usize,
    init: Option<&DVector<f64>>,
) -> Result<SequenceSteadyState> {
    if !(tol > 0.0) {
        return domain(format!("tolerance must be positive, got {tol}"));
    }
    let u = cycle_map(segments)?;
    let n = u.nrows();
    let mut p = match init {
        Some(p0) => {
            check_population(p0, n)?;
            p0.clone()
        }
        None => {
            let mut p = DVector::zeros(n);
            p[G0] = 1.0;
            p
        }
    };
    let mut residual = f64::INFINITY;
    for cycle in 1..=max_cycles {
        let next = &u * &p;
        residual = (&next - &p).amax();
        // Renormalise round-off drift of the trace.
        p = &next / next.sum();
        if residual < tol {
            return Ok(SequenceSteadyState {
                population: clean_population(p),
                cycles: cycle,
                residual,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: max_cycles,
        residual,
    })
}

/// Direct solve of `U p = p`, `Σp = 1`, as a cross-check of the iteration.
///
/// States the cycle never enters or leaves (such as an unused spare) are
/// excluded and get zero population.
pub fn sequence_steady_state_direct(segments: &[SegmentModel]) -> Result<DVector<f64>> {
    let u = cycle_map(segments)?;
    let n = u.nrows();
    let active: Vec<usize> = (0..n)
        .filter(|&j| (0..n).any(|i| i != j && (u[(i, j)] != 0.0 || u[(j, i)] != 0.0)))
        .collect();
    if active.is_empty() {
        return Err(Error::Generator("cycle map has no transitions".into()));
    }
    let m = active.len();
    let mut a = DMatrix::from_fn(m, m, |i, j| u[(active[i], active[j])]) - DMatrix::identity(m, m);
    let mut b = DVector::zeros(m);
    for j in 0..m {
        a[(m - 1, j)] = 1.0;
    }
    b[m - 1] = 1.0;
    let q = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Generator("cycle map has no unique fixed point".into()))?;
    let mut p = DVector::zeros(n);
    for (i, &k) in active.iter().enumerate() {
        p[k] = q[i];
    }
    Ok(clean_population(p))
}

/// NV⁻ radiative photon flux (1/µs) for a population vector.
pub fn pl_flux(rates: &MultistateRates, p: &DVector<f64>) -> f64 {
    [LB0, LB1, UB0, UB1]
        .iter()
        .map(|&s| rates.radiative_rate(s) * p[s])
        .sum()
}

#[derive(Debug, Clone)]
pub struct TracePoint {
    /// Time since the start of the cycle (µs).
    pub t_us: f64,
    pub segment: SegmentKind,
    pub population: DVector<f64>,
}

/// Populations sampled at `points` equally spaced instants per segment
/// (including both segment edges), starting from `p0`.
pub fn trace(segments: &[SegmentModel], p0: &DVector<f64>, points: usize) -> Result<Vec<TracePoint>> {
    let points = points.max(2);
    let mut out = Vec::with_capacity(points * segments.len());
    let mut p = p0.clone();
    let mut t0 = 0.0;
    for s in segments {
        let dt = s.duration_us / (points - 1) as f64;
        let step = s.generator.propagator(dt);
        out.push(TracePoint {
            t_us: t0,
            segment: s.kind,
            population: p.clone(),
        });
        for k in 1..points {
            p = clean_population(&step * &p);
            out.push(TracePoint {
                t_us: t0 + k as f64 * dt,
                segment: s.kind,
                population: p.clone(),
            });
        }
        t0 += s.duration_us;
    }
    Ok(out)
}

/// Measured RF0 at the onset and end of the probe for a set of repump
/// powers, mapped to the two effective exchange rates of the resonant
/// two-level spin model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShelvingFit {
    /// ms=0 → ms=±1 rate (1/µs).
    pub k_ex1: f64,
    /// ms=±1 → ms=0 rate (1/µs).
    pub k_a10: f64,
    pub slope: f64,
    pub intercept: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShelvingConfig {
    /// Time between the onset and tail samples (µs).
    pub duration_us: f64,
    /// RF count rate with the whole population in ms=0.
    pub rf_full: f64,
}

/// Linear regression `tail = slope·onset + intercept` inverted through
/// `p₀(T) = p∞ + (p₀(0) − p∞)e^{−kT}`, `k = k_Ex1 + k_A10`,
/// `p∞ = k_A10/k`:
/// `slope = e^{−kT}` and `intercept = rf_full·p∞·(1 − slope)`.
pub fn shelving_regression(onset: &[f64], tail: &[f64], cfg: &ShelvingConfig) -> Result<ShelvingFit> {
    if onset.len() != tail.len() {
        return domain(format!("{} onset values for {} tail values", onset.len(), tail.len()));
    }
    if onset.len() < 3 {
        return domain("shelving regression needs at least three points");
    }
    if !(cfg.duration_us > 0.0) || !(cfg.rf_full > 0.0) {
        return domain("duration and full-scale RF must be positive");
    }
    let n = onset.len() as f64;
    let mx = onset.iter().sum::<f64>() / n;
    let my = tail.iter().sum::<f64>() / n;
    let sxx: f64 = onset.iter().map(|x| (x - mx).powi(2)).sum();
    if !(sxx > 1e-24 * mx.abs().max(1.0).powi(2)) {
        return domain("onset values are degenerate");
    }
    let sxy: f64 = onset.iter().zip(tail).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;

    let s = if slope > 1.0 {
        warn!("regression slope {slope} exceeds one; treating as no shelving");
        1.0
    } else if slope < 0.0 {
        warn!("regression slope {slope} is negative; treating as complete shelving");
        0.0
    } else {
        slope
    };
    if s == 1.0 {
        return Ok(ShelvingFit {
            k_ex1: 0.0,
            k_a10: 0.0,
            slope,
            intercept,
        });
    }
    let p_inf = (intercept / (cfg.rf_full * (1.0 - s))).clamp(0.0, 1.0);
    if s == 0.0 {
        return Ok(ShelvingFit {
            k_ex1: f64::INFINITY,
            k_a10: if p_inf == 0.0 { 0.0 } else { f64::INFINITY },
            slope,
            intercept,
        });
    }
    let k = -s.ln() / cfg.duration_us;
    Ok(ShelvingFit {
        k_ex1: k * (1.0 - p_inf),
        k_a10: k * p_inf,
        slope,
        intercept,
    })
}

/// Quasi-static transition detuning proportional to repump power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftModel {
    /// Detuning per repump power (MHz/mW).
    pub c_drift_mhz_per_mw: f64,
    /// FWHM of the resonance seen by the probe (MHz).
    pub linewidth_mhz: f64,
}

impl DriftModel {
    /// Relative excitation efficiency `1/(1 + (2 c P / FWHM)²)`.
    pub fn efficiency(&self, power_mw: f64) -> f64 {
        if self.linewidth_mhz <= 0.0 {
            return if self.c_drift_mhz_per_mw * power_mw == 0.0 { 1.0 } else { 0.0 };
        }
        let x = 2.0 * self.c_drift_mhz_per_mw * power_mw / self.linewidth_mhz;
        1.0 / (1.0 + x * x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlRfScales {
    /// Detected PL counts per emitted photon (counts/s per 1/µs of flux).
    pub pl_scale: f64,
    /// RF count rate for unit ms=0 population on resonance.
    pub rf_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlRfPoint {
    pub power_mw: f64,
    pub pl: f64,
    pub rf0: f64,
}

/// PL at the end of the repump and RF0 at the start of the probe in the
/// sequence steady state, for each repump power.
pub fn pl_rf_vs_repump(
    powers_mw: &[f64],
    rates: &MultistateRates,
    timing: &SequenceTiming,
    drift: &DriftModel,
    scales: &PlRfScales,
) -> Result<Vec<PlRfPoint>> {
    powers_mw
        .iter()
        .map(|&power_mw| {
            if !(power_mw > 0.0) {
                return domain(format!("repump power must be positive, got {power_mw}"));
            }
            let segs = pulse_sequence(rates, timing, power_mw)?;
            let ss = sequence_steady_state(&segs, 1e-12, 100_000, None)?;
            let end_repump = clean_population(segs[0].propagator() * &ss.population);
            let start_probe = clean_population(segs[1].propagator() * &end_repump);
            Ok(PlRfPoint {
                power_mw,
                pl: scales.pl_scale * pl_flux(rates, &end_repump),
                rf0: scales.rf_scale * start_probe[G0] * drift.efficiency(power_mw),
            })
        })
        .collect()
}

/// Saturating PL count rate `I_sat·P/(P + P_sat)`.
pub fn pl_saturation(power: f64, i_sat: f64, p_sat: f64) -> Result<f64> {
    if !(power >= 0.0) || !(p_sat > 0.0) {
        return domain("PL saturation needs power >= 0 and P_sat > 0");
    }
    Ok(i_sat * power / (power + p_sat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rate3::{self, Rate3Params};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn unit(i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(N_STATES);
        v[i] = 1.0;
        v
    }

    #[test]
    fn default_config_round_trips() {
        let r = MultistateRates::default();
        let again = MultistateRates::parse(&r.to_config()).unwrap();
        assert_eq!(r, again);
        let with_edge = format!("{}edge = nv0g spare 0.2 green repump,wait\n", r.to_config());
        let e = MultistateRates::parse(&with_edge).unwrap();
        assert_eq!(e.extra_edges.len(), 1);
        assert_eq!(MultistateRates::parse(&e.to_config()).unwrap(), e);
    }

    #[test]
    fn config_errors_are_reported() {
        let base = MultistateRates::default().to_config();
        assert!(MultistateRates::parse(&format!("{base}bogus = 1\n")).is_err());
        assert!(MultistateRates::parse(&base.replace("k_ex1 = ", "k_ex1 = x")).is_err());
        assert!(MultistateRates::parse(&format!("{base}edge = g0 g0 1 const wait\n")).is_err());
        assert!(MultistateRates::parse(&format!("{base}edge = g0 nowhere 1 const wait\n")).is_err());
        assert!(MultistateRates::parse("gamma_nv = 1\n").is_err());
    }

    #[test]
    fn two_state_submodel_is_exponential() {
        let labels: Vec<&str> = LABELS.to_vec();
        let m = RateMatrix::from_edges(&labels, &[Edge { from: UB0, to: G0, rate: 101.2 }]).unwrap();
        for &t in &[0.0, 0.005, 0.02] {
            let p = propagate(&m, &unit(UB0), t).unwrap();
            assert!((p[UB0] - (-101.2 * t).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn embedded_three_level_model_matches_rate3() {
        let r3 = Rate3Params::new(101.2, 2.5, 32.0, 3.8).unwrap();
        let labels: Vec<&str> = LABELS.to_vec();
        let m = RateMatrix::from_edges(
            &labels,
            &[
                Edge { from: G0, to: UB0, rate: r3.k_532 },
                Edge { from: UB0, to: G0, rate: r3.k_eg },
                Edge { from: UB0, to: SINGLET, rate: r3.k_s },
                Edge { from: SINGLET, to: G0, rate: r3.k_d },
            ],
        )
        .unwrap();
        let p = propagate(&m, &unit(G0), 20.0).unwrap();
        let ss = rate3::steady_state(&r3).unwrap();
        assert!((p[G0] - ss.rho_g).abs() < 1e-9);
        assert!((p[UB0] - ss.rho_e).abs() < 1e-9);
        assert!((p[SINGLET] - ss.rho_s).abs() < 1e-9);
    }

    #[test]
    fn long_wait_empties_excited_states() {
        let r = MultistateRates::default();
        let seg = SegmentModel::new(SegmentKind::Wait, 100.0, r.generator(SegmentKind::Wait, 0.0).unwrap()).unwrap();
        let ss = sequence_steady_state(std::slice::from_ref(&seg), 1e-12, 100, Some(&unit(UB1))).unwrap();
        let ground = ss.population[G0] + ss.population[G1] + ss.population[NV0G];
        assert!((ground - 1.0).abs() < 1e-9);
    }

    #[test]
    fn repump_fixed_point_is_independent_of_start() {
        let r = MultistateRates::default();
        let seg = SegmentModel::new(SegmentKind::Repump, 1.8, r.generator(SegmentKind::Repump, 0.6).unwrap()).unwrap();
        let segs = [seg];
        let a = sequence_steady_state(&segs, 1e-13, 100_000, Some(&unit(G0))).unwrap();
        let b = sequence_steady_state(&segs, 1e-13, 100_000, Some(&unit(NV0G))).unwrap();
        assert!((&a.population - &b.population).amax() < 1e-9);
        let direct = sequence_steady_state_direct(&segs).unwrap();
        assert!((&a.population - &direct).amax() < 1e-9);
    }

    #[test]
    fn interleaved_sequence_shapes() {
        let r = MultistateRates::default();
        let segs = pulse_sequence(&r, &SequenceTiming::default(), 0.2).unwrap();
        let ss = sequence_steady_state(&segs, 1e-12, 100_000, None).unwrap();
        let direct = sequence_steady_state_direct(&segs).unwrap();
        assert!((&ss.population - &direct).amax() < 1e-8);
        let tr = trace(&segs, &ss.population, 50).unwrap();
        let repump: Vec<&TracePoint> = tr.iter().filter(|p| p.segment == SegmentKind::Repump).collect();
        let probe: Vec<&TracePoint> = tr.iter().filter(|p| p.segment == SegmentKind::Resonant).collect();
        // PL builds up during the repump pulse, RF decays during the probe.
        let pl_early = pl_flux(&r, &repump[5].population);
        let pl_late = pl_flux(&r, &repump.last().unwrap().population);
        assert!(pl_late > pl_early);
        assert!(probe.last().unwrap().population[G0] < probe[0].population[G0]);
    }

    #[test]
    fn nonconvergence_is_an_error() {
        let r = MultistateRates::default();
        let segs = pulse_sequence(&r, &SequenceTiming::default(), 0.2).unwrap();
        let e = sequence_steady_state(&segs, 1e-15, 2, None);
        assert!(matches!(e, Err(Error::NoConvergence { .. })));
    }

    fn synthetic_shelving(k_ex1: f64, k_a10: f64, cfg: &ShelvingConfig) -> (Vec<f64>, Vec<f64>) {
        let m = RateMatrix::from_edges(
            &["ms0", "ms1"],
            &[Edge { from: 0, to: 1, rate: k_ex1 }, Edge { from: 1, to: 0, rate: k_a10 }],
        )
        .unwrap();
        let mut on = Vec::new();
        let mut tl = Vec::new();
        for p0 in [0.3, 0.45, 0.6, 0.75, 0.9] {
            let v = m.propagate(&DVector::from_vec(vec![p0, 1.0 - p0]), cfg.duration_us).unwrap();
            on.push(cfg.rf_full * p0);
            tl.push(cfg.rf_full * v[0]);
        }
        (on, tl)
    }

    #[test]
    fn shelving_regression_recovers_rates() {
        let cfg = ShelvingConfig { duration_us: 30.0, rf_full: 1e5 };
        let (on, tl) = synthetic_shelving(0.05, 0.01, &cfg);
        let fit = shelving_regression(&on, &tl, &cfg).unwrap();
        assert!((fit.k_ex1 / 0.05 - 1.0).abs() < 0.02);
        assert!((fit.k_a10 / 0.01 - 1.0).abs() < 0.02);
    }

    #[test]
    fn shelving_regression_limits() {
        let cfg = ShelvingConfig { duration_us: 30.0, rf_full: 1e5 };
        let on = [1e4, 2e4, 3e4, 4e4];
        let same = shelving_regression(&on, &on, &cfg).unwrap();
        assert_eq!((same.k_ex1, same.k_a10), (0.0, 0.0));
        let dark = shelving_regression(&on, &[0.0; 4], &cfg).unwrap();
        assert_eq!(dark.k_a10, 0.0);
        assert!(dark.k_ex1 > 0.0);
        assert!(shelving_regression(&[1.0, 1.0, 1.0], &[0.5, 0.6, 0.7], &cfg).is_err());
        assert!(shelving_regression(&[1.0, 2.0], &[0.5, 0.6], &cfg).is_err());
    }

    #[test]
    fn rf0_without_drift_is_monotone() {
        let r = MultistateRates::default();
        let drift = DriftModel { c_drift_mhz_per_mw: 0.0, linewidth_mhz: 200.0 };
        let scales = PlRfScales { pl_scale: 1e3, rf_scale: 1e5 };
        let powers: Vec<f64> = (1..=12).map(|i| i as f64 * 0.3).collect();
        let pts = pl_rf_vs_repump(&powers, &r, &SequenceTiming::default(), &drift, &scales).unwrap();
        assert!(pts.windows(2).all(|w| w[1].rf0 >= w[0].rf0 - 1e-9));
        assert!(pts.windows(2).all(|w| w[1].pl > w[0].pl));
    }

    #[test]
    fn rf0_with_drift_peaks_then_droops() {
        let r = MultistateRates::default();
        let drift = DriftModel { c_drift_mhz_per_mw: 60.0, linewidth_mhz: 200.0 };
        let scales = PlRfScales { pl_scale: 1e3, rf_scale: 1e5 };
        let powers: Vec<f64> = (1..=12).map(|i| i as f64 * 0.3).collect();
        let pts = pl_rf_vs_repump(&powers, &r, &SequenceTiming::default(), &drift, &scales).unwrap();
        let (imax, _) = pts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.rf0.total_cmp(&b.1.rf0))
            .unwrap();
        assert!(imax > 0 && imax < pts.len() - 1, "maximum at index {imax}");
    }

    #[test]
    fn pl_saturation_arithmetic() {
        let pl = pl_saturation(3.6, 2.3e6, 67.0).unwrap();
        assert!((pl - 117.3e3).abs() < 500.0);
    }

    #[test]
    fn purcell_raises_repump_pl() {
        let base = MultistateRates::default();
        let mut last = 0.0;
        for f in [1.0, 1.5, 2.0, 3.0, 5.0] {
            let r = base.with_purcell(f);
            let segs = pulse_sequence(&r, &SequenceTiming::default(), 0.5).unwrap();
            let ss = sequence_steady_state(&segs, 1e-12, 100_000, None).unwrap();
            let end = segs[0].propagator() * &ss.population;
            let pl = pl_flux(&r, &end);
            assert!(pl > last);
            last = pl;
        }
    }

    fn random_generator(rng: &mut Xoshiro256PlusPlus) -> RateMatrix {
        let mut edges = Vec::new();
        for from in 0..N_STATES {
            for to in 0..N_STATES {
                if from != to && rng.random::<f64>() < 0.3 {
                    edges.push(Edge { from, to, rate: 10f64.powf(rng.random_range(-2.0..2.0)) });
                }
            }
        }
        RateMatrix::from_edges(&LABELS, &edges).unwrap()
    }

    #[test]
    fn random_generators_conserve_population() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
        for _ in 0..10_000 {
            let m = random_generator(&mut rng);
            let mut p0 = DVector::from_fn(N_STATES, |_, _| rng.random::<f64>());
            p0 /= p0.sum();
            let dt = 10f64.powf(rng.random_range(-3.0..1.0));
            let p = m.propagate(&p0, dt).unwrap();
            assert!((p.sum() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|v| *v >= 0.0));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn segment_composition(seed in 0u64..1000, dt1 in 0.0f64..2.0, dt2 in 0.0f64..2.0) {
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
            let m = random_generator(&mut rng);
            let p0 = unit((seed % N_STATES as u64) as usize);
            let two = m.propagate(&m.propagate(&p0, dt1).unwrap(), dt2).unwrap();
            let one = m.propagate(&p0, dt1 + dt2).unwrap();
            prop_assert!((two - one).amax() < 1e-9);
        }
    }
}
