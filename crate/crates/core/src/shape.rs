//! Width and edge measurements on sampled curves.

use crate::error::{domain, Result};

/// Full width at half maximum of the highest peak of `y(x)`, with linear
/// interpolation of the half-height crossings. `x` must be increasing.
pub fn fwhm(x: &[f64], y: &[f64]) -> Result<f64> {
    width_at(x, y, 0.5)
}

/// Width of the highest peak at `fraction` of its height.
pub fn width_at(x: &[f64], y: &[f64], fraction: f64) -> Result<f64> {
    if x.len() != y.len() || x.len() < 3 {
        return domain("width needs at least three matching samples");
    }
    let (imax, &ymax) = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    if !(ymax > 0.0) {
        return domain("curve has no positive peak");
    }
    let level = fraction * ymax;
    let mut left = None;
    for i in (0..imax).rev() {
        if y[i] <= level {
            left = Some(cross(x[i], y[i], x[i + 1], y[i + 1], level));
            break;
        }
    }
    let mut right = None;
    for i in imax + 1..y.len() {
        if y[i] <= level {
            right = Some(cross(x[i - 1], y[i - 1], x[i], y[i], level));
            break;
        }
    }
    match (left, right) {
        (Some(l), Some(r)) => Ok(r - l),
        _ => domain("peak is not resolved within the sampled range"),
    }
}

fn cross(x0: f64, y0: f64, x1: f64, y1: f64, level: f64) -> f64 {
    if y1 == y0 {
        0.5 * (x0 + x1)
    } else {
        x0 + (level - y0) * (x1 - x0) / (y1 - y0)
    }
}

/// First upward crossing of `level`, interpolated.
pub fn first_crossing(t: &[f64], y: &[f64], level: f64) -> Option<f64> {
    (1..y.len())
        .find(|&i| y[i - 1] < level && y[i] >= level)
        .map(|i| cross(t[i - 1], y[i - 1], t[i], y[i], level))
}
