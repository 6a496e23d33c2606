//! Uniform-grid quadrature shared by criteria, bounds and tracers.

use crate::error::{Error, Result};

/// Relative tolerance on the spacing of a "uniform" time grid.
pub const UNIFORM_TOLERANCE: f64 = 1e-9;

/// Checks `times` is strictly increasing with constant spacing and returns
/// the spacing.
pub fn uniform_step(times: &[f64]) -> Result<f64> {
    if times.len() < 2 {
        return Err(Error::TooFewSamples {
            need: 2,
            got: times.len(),
        });
    }
    let h = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    if !(h > 0.0) {
        return Err(Error::NonUniformGrid { index: 1, deviation: h });
    }
    for (k, w) in times.windows(2).enumerate() {
        let deviation = (w[1] - w[0] - h) / h;
        if !(deviation.abs() <= UNIFORM_TOLERANCE) {
            return Err(Error::NonUniformGrid { index: k + 1, deviation });
        }
    }
    Ok(h)
}

/// `int_{t_0}^{t_k} f` by the trapezoid rule, for every k.
pub fn cumulative_trapezoid(h: f64, f: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(f.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in f.windows(2) {
        acc += 0.5 * h * (w[0] + w[1]);
        out.push(acc);
    }
    out.truncate(f.len());
    out
}

/// `int_{t_0}^{t_k} int_{t_0}^{s} m` for every k, given `g` = cumulative
/// trapezoid of `m`. Exact when `m` is piecewise linear between samples.
pub fn cumulative_double(h: f64, m: &[f64], g: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    let mut acc = 0.0;
    out.push(0.0);
    for k in 0..m.len().saturating_sub(1) {
        acc += h * g[k] + h * h * (m[k] / 3.0 + m[k + 1] / 6.0);
        out.push(acc);
    }
    out.truncate(m.len());
    out
}

/// Per-interval weights of the cubic through four neighbouring samples:
/// interior, first interval, last interval.
const CUBIC_INTERIOR: [f64; 4] = [-1.0 / 24.0, 13.0 / 24.0, 13.0 / 24.0, -1.0 / 24.0];
const CUBIC_FIRST: [f64; 4] = [9.0 / 24.0, 19.0 / 24.0, -5.0 / 24.0, 1.0 / 24.0];
const CUBIC_LAST: [f64; 4] = [1.0 / 24.0, -5.0 / 24.0, 19.0 / 24.0, 9.0 / 24.0];

/// `int_{t_0}^{t_k} f` with local cubics, fourth order for smooth `f`.
/// Falls back to the trapezoid rule below four samples.
pub fn cumulative_cubic(h: f64, f: &[f64]) -> Vec<f64> {
    let n = f.len();
    if n < 4 {
        return cumulative_trapezoid(h, f);
    }
    let mut out = Vec::with_capacity(n);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 0..n - 1 {
        let (start, w) = if k == 0 {
            (0, CUBIC_FIRST)
        } else if k == n - 2 {
            (n - 4, CUBIC_LAST)
        } else {
            (k - 1, CUBIC_INTERIOR)
        };
        acc += h * (0..4).map(|i| w[i] * f[start + i]).sum::<f64>();
        out.push(acc);
    }
    out
}

/// `int_{t_0}^{t_k} int_{t_0}^{s} m` as `int (t_k - s) m(s) ds`, fourth
/// order for smooth `m`.
pub fn cumulative_double_cubic(h: f64, m: &[f64]) -> Vec<f64> {
    let sm: Vec<f64> = m.iter().enumerate().map(|(k, v)| k as f64 * h * v).collect();
    let a = cumulative_cubic(h, m);
    let b = cumulative_cubic(h, &sm);
    a.iter()
        .zip(&b)
        .enumerate()
        .map(|(k, (a, b))| k as f64 * h * a - b)
        .collect()
}

pub fn trapezoid(h: f64, f: &[f64]) -> f64 {
    cumulative_trapezoid(h, f).last().copied().unwrap_or(0.0)
}
