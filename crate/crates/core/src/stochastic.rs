//! Kinetic Monte Carlo photon streams and their correlation histograms.
//!
//! Generator rates are in 1/µs; tag times are in ns and persisted in ps.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::rates::RateMatrix;

pub const MAGIC: [u8; 3] = *b"NVT";
pub const FORMAT_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 16;
pub const RECORD_LEN: usize = 9;

/// Photon arrival times with detector labels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeTagStream {
    /// Strictly increasing arrival times (ns).
    pub times_ns: Vec<f64>,
    pub channels: Vec<u8>,
    pub duration_ns: f64,
    pub seed: u64,
    /// The trajectory hit a state with no exit before `duration_ns`.
    pub terminated_early: bool,
}

impl TimeTagStream {
    pub fn len(&self) -> usize {
        self.times_ns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times_ns.is_empty()
    }

    pub fn rate_per_us(&self) -> f64 {
        1e3 * self.len() as f64 / self.duration_ns
    }

    pub fn validate(&self) -> Result<()> {
        if self.times_ns.len() != self.channels.len() {
            return Err(Error::Format("times and channels differ in length".into()));
        }
        if self.times_ns.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Format("tags are not strictly increasing".into()));
        }
        if self.times_ns.last().is_some_and(|t| *t >= self.duration_ns) {
            return Err(Error::Format("tag beyond the acquisition time".into()));
        }
        Ok(())
    }

    /// Little-endian binary: 16-byte header (magic, version, duration in
    /// whole µs rounded up, seed) then `u64` ps timestamp and `u8` channel
    /// per record.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let dur_us = (self.duration_ns * 1e-3).ceil();
        if dur_us > u32::MAX as f64 {
            return Err(Error::Format("duration does not fit the header".into()));
        }
        let mut header = [0u8; HEADER_LEN];
        header[..3].copy_from_slice(&MAGIC);
        header[3] = FORMAT_VERSION;
        header[4..8].copy_from_slice(&(dur_us as u32).to_le_bytes());
        header[8..].copy_from_slice(&self.seed.to_le_bytes());
        w.write_all(&header)?;
        let mut buf = Vec::with_capacity(self.len() * RECORD_LEN);
        for (t, c) in self.times_ns.iter().zip(&self.channels) {
            buf.extend_from_slice(&((t * 1e3).round() as u64).to_le_bytes());
            buf.push(*c);
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN];
        r.read_exact(&mut header)
            .map_err(|_| Error::Format("truncated header".into()))?;
        if header[..3] != MAGIC {
            return Err(Error::Format("not a tag stream (bad magic)".into()));
        }
        if header[3] != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {}", header[3])));
        }
        let dur_us = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes"));
        let seed = u64::from_le_bytes(header[8..].try_into().expect("8 bytes"));
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() % RECORD_LEN != 0 {
            return Err(Error::Format(format!("{} trailing bytes", body.len() % RECORD_LEN)));
        }
        let (times_ns, channels) = body
            .chunks_exact(RECORD_LEN)
            .map(|rec| {
                let ps = u64::from_le_bytes(rec[..8].try_into().expect("8 bytes"));
                (ps as f64 * 1e-3, rec[8])
            })
            .unzip();
        let s = Self {
            times_ns,
            channels,
            duration_ns: dur_us as f64 * 1e3,
            seed,
            terminated_early: false,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# seed={} duration_ns={}", self.seed, self.duration_ns)?;
        writeln!(w, "t_ns,channel")?;
        for (t, c) in self.times_ns.iter().zip(&self.channels) {
            writeln!(w, "{t},{c}")?;
        }
        Ok(())
    }

    /// Each tag sent to channel 0 or 1 with equal probability.
    pub fn split(&self, seed: u64) -> Self {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        Self {
            channels: self.times_ns.iter().map(|_| rng.random_range(0..2u8)).collect(),
            ..self.clone()
        }
    }

    /// Drops tags arriving within `dead_ns` of the previous detected tag
    /// on the same channel.
    pub fn with_dead_time(&self, dead_ns: f64) -> Self {
        let mut last = [f64::NEG_INFINITY; 256];
        let (mut times, mut chans) = (Vec::new(), Vec::new());
        for (&t, &c) in self.times_ns.iter().zip(&self.channels) {
            if t - last[c as usize] >= dead_ns {
                last[c as usize] = t;
                times.push(t);
                chans.push(c);
            }
        }
        Self {
            times_ns: times,
            channels: chans,
            ..self.clone()
        }
    }
}

/// Exact trajectory of the Markov chain `generator` from `initial`,
/// tagging a photon on channel 0 whenever one of `radiative` (from, to)
/// transitions fires.
pub fn gillespie(generator: &RateMatrix, radiative: &[(usize, usize)], initial: usize, duration_ns: f64, seed: u64) -> Result<TimeTagStream> {
    generator.validate()?;
    let n = generator.dim();
    if initial >= n {
        return domain(format!("initial state {initial} out of range"));
    }
    if !(duration_ns > 0.0) {
        return domain(format!("duration must be positive, got {duration_ns}"));
    }
    if radiative.iter().any(|&(a, b)| a >= n || b >= n) {
        return domain("radiative edge refers to an unknown state");
    }
    // Per-state cumulative exit tables in 1/ns.
    let table: Vec<(f64, Vec<(usize, f64)>)> = (0..n)
        .map(|i| {
            let mut acc = 0.0;
            let targets = (0..n)
                .filter(|&j| j != i && generator.rate(i, j) > 0.0)
                .map(|j| {
                    acc += generator.rate(i, j) * 1e-3;
                    (j, acc)
                })
                .collect();
            (acc, targets)
        })
        .collect();
    let mut radiative_mask = vec![false; n * n];
    for &(a, b) in radiative {
        radiative_mask[a * n + b] = true;
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut state = initial;
    let mut t = 0.0;
    let mut times = Vec::new();
    let mut terminated_early = false;
    loop {
        let (total, targets) = &table[state];
        if *total <= 0.0 {
            terminated_early = true;
            break;
        }
        let u: f64 = rng.random();
        t += -(1.0 - u).ln() / total;
        if t >= duration_ns {
            break;
        }
        let pick = rng.random::<f64>() * total;
        let next = targets
            .iter()
            .find(|(_, c)| pick < *c)
            .map(|(j, _)| *j)
            .unwrap_or(targets[targets.len() - 1].0);
        if radiative_mask[state * n + next] && times.last().is_none_or(|&l| t > l) {
            times.push(t);
        }
        state = next;
    }
    let channels = vec![0; times.len()];
    Ok(TimeTagStream {
        times_ns: times,
        channels,
        duration_ns,
        seed,
        terminated_early,
    })
}

/// Homogeneous Poisson stream at `rate_per_us`.
pub fn poisson_stream(rate_per_us: f64, duration_ns: f64, seed: u64) -> Result<TimeTagStream> {
    if !(rate_per_us > 0.0 && duration_ns > 0.0) {
        return domain("rate and duration must be positive");
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let r = rate_per_us * 1e-3;
    let mut t = 0.0;
    let mut times = Vec::new();
    loop {
        let u: f64 = rng.random();
        t += -(1.0 - u).ln() / r;
        if t >= duration_ns {
            break;
        }
        times.push(t);
    }
    let channels = vec![0; times.len()];
    Ok(TimeTagStream {
        times_ns: times,
        channels,
        duration_ns,
        seed,
        terminated_early: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CorrelationMode {
    /// Every pair within the maximum delay.
    Full,
    /// Each start paired with the next stop only.
    StartStop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Channels {
    /// All tags, regardless of channel.
    Auto,
    /// Pairs with one tag on each channel, both orders folded to `|τ|`.
    Cross(u8, u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrelationConfig {
    pub bin_ns: f64,
    pub max_delay_us: f64,
    /// Normalisation window `[start, end]` (µs).
    pub norm_window_us: (f64, f64),
    pub mode: CorrelationMode,
    pub channels: Channels,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationHistogram {
    /// `n + 1` edges for `n` bins (ns).
    pub bin_edges_ns: Vec<f64>,
    pub counts: Vec<u64>,
    pub norm_window_us: (f64, f64),
    /// Mean counts per bin inside the window.
    pub norm: f64,
}

impl CorrelationHistogram {
    pub fn centers_ns(&self) -> Vec<f64> {
        self.bin_edges_ns.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn g2(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / self.norm).collect()
    }

    /// Poisson standard error of each normalised bin.
    pub fn g2_err(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| (c as f64).max(1.0).sqrt() / self.norm).collect()
    }
}

/// Delay histogram of `stream`, normalised to its mean over the window.
pub fn correlate(stream: &TimeTagStream, cfg: &CorrelationConfig) -> Result<CorrelationHistogram> {
    if stream.is_empty() {
        return Err(Error::Correlation("empty stream".into()));
    }
    if !(cfg.bin_ns > 0.0) || !(cfg.max_delay_us > 0.0) {
        return domain("bin width and maximum delay must be positive");
    }
    let max_ns = cfg.max_delay_us * 1e3;
    let (w0, w1) = cfg.norm_window_us;
    if !(w0 >= 0.0 && w1 > w0 && w1 * 1e3 <= max_ns) {
        return domain("normalisation window must lie inside the histogram span");
    }
    let nbins = (max_ns / cfg.bin_ns).floor() as usize;
    let mut counts = vec![0u64; nbins];
    let accept = |a: u8, b: u8| match cfg.channels {
        Channels::Auto => true,
        Channels::Cross(x, y) => (a == x && b == y) || (a == y && b == x),
    };
    let t = &stream.times_ns;
    let c = &stream.channels;
    for i in 0..t.len() {
        for j in i + 1..t.len() {
            let d = t[j] - t[i];
            if d >= max_ns {
                break;
            }
            if accept(c[i], c[j]) {
                let k = (d / cfg.bin_ns) as usize;
                if k < nbins {
                    counts[k] += 1;
                }
                if cfg.mode == CorrelationMode::StartStop {
                    break;
                }
            }
        }
    }
    let edges: Vec<f64> = (0..=nbins).map(|k| k as f64 * cfg.bin_ns).collect();
    let in_window: Vec<u64> = (0..nbins)
        .filter(|&k| {
            let mid = 0.5 * (edges[k] + edges[k + 1]) * 1e-3;
            mid >= w0 && mid <= w1
        })
        .map(|k| counts[k])
        .collect();
    if in_window.is_empty() {
        return Err(Error::Correlation("normalisation window holds no bins".into()));
    }
    let norm = in_window.iter().sum::<u64>() as f64 / in_window.len() as f64;
    if norm == 0.0 {
        return Err(Error::Correlation("normalisation window holds no counts".into()));
    }
    Ok(CorrelationHistogram {
        bin_edges_ns: edges,
        counts,
        norm_window_us: cfg.norm_window_us,
        norm,
    })
}

/// Reduced χ² of the histogram against `model(τ_lo, τ_hi)`, the model
/// averaged over each bin, for bins whose upper edge is below `up_to_ns`.
pub fn reduced_chi2<F: Fn(f64, f64) -> f64>(h: &CorrelationHistogram, model: F, up_to_ns: f64) -> f64 {
    let g = h.g2();
    let e = h.g2_err();
    let mut chi = 0.0;
    let mut n = 0usize;
    for k in 0..g.len() {
        let (lo, hi) = (h.bin_edges_ns[k], h.bin_edges_ns[k + 1]);
        if hi > up_to_ns {
            break;
        }
        chi += ((g[k] - model(lo, hi)) / e[k]).powi(2);
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        chi / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::gauss_legendre;
    use crate::rate3::{g2_analytic, steady_state, Rate3Params};
    use crate::rates::Edge;

    fn two_state(k1: f64, k2: f64) -> RateMatrix {
        RateMatrix::from_edges(
            &["a", "b"],
            &[Edge { from: 0, to: 1, rate: k1 }, Edge { from: 1, to: 0, rate: k2 }],
        )
        .unwrap()
    }

    #[test]
    fn two_state_intervals() {
        let (k1, k2) = (5.0, 20.0);
        let s = gillespie(&two_state(k1, k2), &[(1, 0)], 0, 2e7, 1).unwrap();
        let dts: Vec<f64> = s.times_ns.windows(2).map(|w| (w[1] - w[0]) * 1e-3).collect();
        let n = dts.len() as f64;
        let mean = dts.iter().sum::<f64>() / n;
        let expect = 1.0 / k1 + 1.0 / k2;
        let sd = (1.0 / (k1 * k1) + 1.0 / (k2 * k2)).sqrt() / n.sqrt();
        assert!((mean - expect).abs() < 3.0 * sd, "{mean} vs {expect}");
    }

    #[test]
    fn no_radiative_edges_no_tags() {
        let s = gillespie(&two_state(1.0, 1.0), &[], 0, 1e5, 3).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn absorbing_state_ends_early() {
        let rm = RateMatrix::from_edges(&["a", "b"], &[Edge { from: 0, to: 1, rate: 1.0 }]).unwrap();
        let s = gillespie(&rm, &[(0, 1)], 0, 1e9, 3).unwrap();
        assert!(s.terminated_early);
        assert_eq!(s.len(), 1);
    }

    fn paper_rates() -> Rate3Params {
        Rate3Params::new(101.2, 2.5, 32.0, 3.8).unwrap()
    }

    #[test]
    fn mean_rate_matches_flux() {
        let p = paper_rates();
        let s = gillespie(&p.generator(), &[(1, 0)], 0, 2e8, 17).unwrap();
        let ss = steady_state(&p).unwrap();
        let expect = ss.rho_e * p.k_eg;
        // Bunching inflates the count variance; allow for it generously.
        let sd = (expect * 2e5).sqrt() * 2.0 / 2e5;
        assert!((s.rate_per_us() - expect).abs() < 3.0 * sd, "{} vs {expect}", s.rate_per_us());
    }

    #[test]
    fn seed_determinism() {
        let p = paper_rates();
        let a = gillespie(&p.generator(), &[(1, 0)], 0, 1e6, 99).unwrap();
        let b = gillespie(&p.generator(), &[(1, 0)], 0, 1e6, 99).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        a.write_binary(&mut ba).unwrap();
        b.write_binary(&mut bb).unwrap();
        assert_eq!(ba, bb);
        let c = gillespie(&p.generator(), &[(1, 0)], 0, 1e6, 100).unwrap();
        assert_ne!(a.times_ns, c.times_ns);
    }

    #[test]
    fn binary_round_trip() {
        let s = poisson_stream(3.0, 1e6, 4).unwrap().split(5);
        let mut buf = Vec::new();
        s.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), HEADER_LEN + RECORD_LEN * s.len());
        let r = TimeTagStream::read_binary(buf.as_slice()).unwrap();
        assert_eq!(r.seed, 4);
        assert_eq!(r.channels, s.channels);
        for (a, b) in r.times_ns.iter().zip(&s.times_ns) {
            assert!((a - b).abs() <= 5e-4);
        }
        buf[0] = b'X';
        assert!(matches!(TimeTagStream::read_binary(buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn poisson_is_flat() {
        let s = poisson_stream(2.0, 5e8, 8).unwrap();
        let cfg = CorrelationConfig {
            bin_ns: 50.0,
            max_delay_us: 10.0,
            norm_window_us: (5.0, 10.0),
            mode: CorrelationMode::Full,
            channels: Channels::Auto,
        };
        let h = correlate(&s, &cfg).unwrap();
        let chi = reduced_chi2(&h, |_, _| 1.0, 5000.0);
        assert!(chi > 0.5 && chi < 1.5, "{chi}");
    }

    #[test]
    fn split_channels_match_single_channel() {
        let p = paper_rates();
        let s = gillespie(&p.generator(), &[(1, 0)], 0, 5e7, 21).unwrap();
        let split = s.split(3);
        let auto = CorrelationConfig {
            bin_ns: 20.0,
            max_delay_us: 4.0,
            norm_window_us: (3.0, 4.0),
            mode: CorrelationMode::Full,
            channels: Channels::Auto,
        };
        assert_eq!(correlate(&s, &auto).unwrap(), correlate(&split, &auto).unwrap());
        let cross = CorrelationConfig { channels: Channels::Cross(0, 1), ..auto };
        let a = correlate(&s, &auto).unwrap();
        let x = correlate(&split, &cross).unwrap();
        let (ga, gx, ex) = (a.g2(), x.g2(), x.g2_err());
        let chi: f64 = (0..ga.len()).map(|k| ((ga[k] - gx[k]) / ex[k]).powi(2)).sum::<f64>() / ga.len() as f64;
        assert!(chi < 1.5, "{chi}");
    }

    #[test]
    fn matches_analytic_g2() {
        let p = paper_rates();
        let s = gillespie(&p.generator(), &[(1, 0)], 0, 2e8, 5).unwrap();
        let cfg = CorrelationConfig {
            bin_ns: 0.5,
            max_delay_us: 35.0,
            norm_window_us: (30.0, 35.0),
            mode: CorrelationMode::Full,
            channels: Channels::Auto,
        };
        let h = correlate(&s, &cfg).unwrap();
        assert!(h.g2()[0] < 0.1);
        let (x, w) = gauss_legendre(8);
        let model = |lo: f64, hi: f64| {
            x.iter()
                .zip(&w)
                .map(|(xi, wi)| 0.5 * wi * g2_analytic(&p, 0.5 * (lo + hi) + 0.5 * (hi - lo) * xi).unwrap())
                .sum::<f64>()
        };
        let chi = reduced_chi2(&h, model, 2000.0);
        assert!(chi > 0.5 && chi < 1.5, "{chi}");
    }

    #[test]
    fn time_rescaling() {
        let p = paper_rates();
        let s = 3.0;
        let q = Rate3Params::new(p.k_eg * s, p.k_532 * s, p.k_s * s, p.k_d * s).unwrap();
        let a = gillespie(&p.generator(), &[(1, 0)], 0, 3e6, 2).unwrap();
        let b = gillespie(&q.generator(), &[(1, 0)], 0, 1e6, 2).unwrap();
        assert_eq!(a.len(), b.len());
        for (ta, tb) in a.times_ns.iter().zip(&b.times_ns) {
            assert!((ta - s * tb).abs() < 1e-9 * ta.max(1.0));
        }
    }

    #[test]
    fn dead_time_drops_close_tags() {
        let s = poisson_stream(50.0, 1e5, 1).unwrap();
        let d = s.with_dead_time(30.0);
        assert!(d.len() < s.len());
        assert!(d.times_ns.windows(2).all(|w| w[1] - w[0] >= 30.0));
    }

    #[test]
    fn empty_stream_cannot_be_correlated() {
        let s = gillespie(&two_state(1.0, 1.0), &[], 0, 1e3, 1).unwrap();
        let cfg = CorrelationConfig {
            bin_ns: 1.0,
            max_delay_us: 1.0,
            norm_window_us: (0.5, 1.0),
            mode: CorrelationMode::Full,
            channels: Channels::Auto,
        };
        assert!(matches!(correlate(&s, &cfg), Err(Error::Correlation(_))));
    }
}
