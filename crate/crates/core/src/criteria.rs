//! Blow-up criterion functionals and type-I monitors over sampled
//! sup-norm series.
//!
//! Inputs are series `m_k = ||f(t_k)||_{L^inf(region)}` on a uniform time
//! grid. The inner integral uses the trapezoid rule and the outer one
//! integrates the resulting piecewise-quadratic exactly, so both are exact
//! for piecewise-linear `m`.

use serde::Serialize;

use crate::engine::Region;
use crate::error::{Error, Result};
use crate::quadrature::{cumulative_double, cumulative_trapezoid, trapezoid, uniform_step};

pub const EULER_TYPE_I_THRESHOLD: f64 = 1.0;
pub const BOUSSINESQ_TYPE_I_THRESHOLD: f64 = 2.0;
/// Trailing fraction of samples over which the limsup proxy is taken.
pub const DEFAULT_WINDOW_FRACTION: f64 = 0.25;
/// Monitor values within this relative distance below the threshold are
/// treated as touching it.
pub const BOUNDARY_BAND: f64 = 1e-10;

pub const VERDICT_SATISFIED: &str = "condition satisfied (< threshold)";
pub const VERDICT_NOT_VERIFIED: &str = "condition not verified";

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Weight {
    /// `w = 1`
    None,
    /// `w = T - t`
    Linear { candidate_t: f64 },
}

impl Weight {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            Weight::None => 1.0,
            Weight::Linear { candidate_t } => candidate_t - t,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CriterionSeries {
    pub times: Vec<f64>,
    pub m: Vec<f64>,
    /// `g(t) = int_0^t m`
    pub inner: Vec<f64>,
    /// `G(t) = int_0^t g`
    pub double: Vec<f64>,
    /// `w(t) exp(G(t))`
    pub integrand: Vec<f64>,
    pub weight: Weight,
    pub value: f64,
    pub finite: bool,
}

fn check_series(times: &[f64], m: &[f64]) -> Result<f64> {
    if times.len() != m.len() {
        return Err(Error::Sampling(format!(
            "{} times but {} samples",
            times.len(),
            m.len()
        )));
    }
    let h = uniform_step(times)?;
    for (index, &value) in m.iter().enumerate() {
        if !(value >= 0.0) {
            return Err(Error::NegativeSample { index, value });
        }
    }
    Ok(h)
}

/// Cumulative integrals and the criterion `int w exp(int int m)`.
pub fn criterion_functional(times: &[f64], m: &[f64], weight: Weight) -> Result<CriterionSeries> {
    let h = check_series(times, m)?;
    let inner = cumulative_trapezoid(h, m);
    let double = cumulative_double(h, m, &inner);
    let integrand: Vec<f64> = times
        .iter()
        .zip(&double)
        .map(|(&t, &big)| weight.at(t) * big.exp())
        .collect();
    let value = trapezoid(h, &integrand);
    Ok(CriterionSeries {
        times: times.to_vec(),
        m: m.to_vec(),
        inner,
        double,
        integrand,
        weight,
        value,
        finite: value.is_finite(),
    })
}

/// `int w m` by the trapezoid rule.
pub fn bkm_integral(times: &[f64], m: &[f64], weight: Weight) -> Result<f64> {
    let h = check_series(times, m)?;
    let wm: Vec<f64> = times.iter().zip(m).map(|(&t, &v)| weight.at(t) * v).collect();
    Ok(trapezoid(h, &wm))
}

#[derive(Clone, Debug, Serialize)]
pub struct TypeIMonitor {
    pub candidate_t: f64,
    pub threshold: f64,
    pub window_fraction: f64,
    pub window_start: usize,
    /// `(T - t)^2 m(t)`
    pub series: Vec<f64>,
    /// Max of `series` over the trailing window.
    pub limsup: f64,
    pub satisfied: bool,
    pub verdict: &'static str,
}

/// Type-I monitor relative to the candidate time `T`. The limsup is
/// realized as the max over the trailing `window_fraction` of samples.
/// Values at the threshold (within [`BOUNDARY_BAND`]) are not verified.
pub fn type_one_monitor(
    times: &[f64],
    m: &[f64],
    candidate_t: f64,
    threshold: f64,
    window_fraction: f64,
) -> Result<TypeIMonitor> {
    if times.len() != m.len() || times.is_empty() {
        return Err(Error::Sampling(format!(
            "{} times but {} samples",
            times.len(),
            m.len()
        )));
    }
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(Error::Config(format!("window fraction must lie in (0, 1], got {window_fraction}")));
    }
    if let Some(&time) = times.iter().find(|&&t| !(t < candidate_t)) {
        return Err(Error::PastCandidateTime {
            time,
            candidate: candidate_t,
        });
    }
    for (index, &value) in m.iter().enumerate() {
        if !(value >= 0.0) {
            return Err(Error::NegativeSample { index, value });
        }
    }
    let series: Vec<f64> = times
        .iter()
        .zip(m)
        .map(|(&t, &v)| (candidate_t - t).powi(2) * v)
        .collect();
    let len = series.len();
    let window_start = (((1.0 - window_fraction) * len as f64).floor() as usize).min(len - 1);
    let limsup = series[window_start..].iter().fold(0.0_f64, |a, &b| a.max(b));
    let satisfied = limsup < threshold * (1.0 - BOUNDARY_BAND);
    Ok(TypeIMonitor {
        candidate_t,
        threshold,
        window_fraction,
        window_start,
        series,
        limsup,
        satisfied,
        verdict: if satisfied { VERDICT_SATISFIED } else { VERDICT_NOT_VERIFIED },
    })
}

/// Which bracketed quantity a series carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriterionKind {
    /// `[zeta.P xi]_-`
    AlignMinus,
    /// `[|M xi|^2 - 2 alpha^2 - rho]_+`
    StretchPlus,
    /// `|P xi|`; the resulting criterion is weaker than the `AlignMinus` one.
    PressureAlongXi,
}

impl CriterionKind {
    pub fn name(&self) -> &'static str {
        match self {
            CriterionKind::AlignMinus => "align-minus",
            CriterionKind::StretchPlus => "stretch-plus",
            CriterionKind::PressureAlongXi => "pressure-along-xi",
        }
    }
}

/// Everything reported for one (quantity, region) pair.
#[derive(Clone, Debug, Serialize)]
pub struct CriterionReport {
    pub kind: CriterionKind,
    pub region_name: String,
    pub region: Region,
    pub value: f64,
    pub finite: bool,
    pub final_double_integral: f64,
    /// Set for the `|P xi|` criterion.
    pub weaker: bool,
    /// Absent for the weaker criterion, which has no type-I counterpart.
    pub monitor: Option<TypeIMonitor>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn zero_input_gives_interval_length() {
        let t = grid(0.0, 2.0, 41);
        let c = criterion_functional(&t, &vec![0.0; 41], Weight::None).unwrap();
        assert!((c.value - 2.0).abs() < 1e-14);
        assert!(c.double.iter().all(|&g| g == 0.0));
        let w = criterion_functional(&t, &vec![0.0; 41], Weight::Linear { candidate_t: 2.0 }).unwrap();
        assert!((w.value - 2.0).abs() < 1e-14);
    }

    #[test]
    fn constant_input_closed_form() {
        let c0 = 1.7;
        let t = grid(0.0, 1.0, 101);
        let c = criterion_functional(&t, &vec![c0; 101], Weight::None).unwrap();
        for (k, &tk) in t.iter().enumerate() {
            assert!((c.double[k] - c0 * tk * tk / 2.0).abs() < 1e-13);
            assert!((c.integrand[k] - (c0 * tk * tk / 2.0).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn negative_sample_rejected() {
        let t = grid(0.0, 1.0, 5);
        assert!(matches!(
            criterion_functional(&t, &[0.0, 1.0, -0.1, 0.0, 0.0], Weight::None),
            Err(Error::NegativeSample { index: 2, .. })
        ));
    }

    #[test]
    fn monitor_thresholds() {
        let big_t = 1.0;
        let t = grid(0.0, 0.9, 91);
        let zero = type_one_monitor(&t, &vec![0.0; 91], big_t, EULER_TYPE_I_THRESHOLD, 0.25).unwrap();
        assert!(zero.satisfied && zero.limsup == 0.0);
        let m1: Vec<f64> = t.iter().map(|s| 1.0 / (big_t - s).powi(2)).collect();
        let one = type_one_monitor(&t, &m1, big_t, EULER_TYPE_I_THRESHOLD, 0.25).unwrap();
        assert!((one.limsup - 1.0).abs() < 1e-14);
        assert_eq!(one.verdict, VERDICT_NOT_VERIFIED);
        let m15: Vec<f64> = m1.iter().map(|v| 1.5 * v).collect();
        let e = type_one_monitor(&t, &m15, big_t, EULER_TYPE_I_THRESHOLD, 0.25).unwrap();
        let b = type_one_monitor(&t, &m15, big_t, BOUSSINESQ_TYPE_I_THRESHOLD, 0.25).unwrap();
        assert!(!e.satisfied && b.satisfied);
        assert_eq!(b.verdict, VERDICT_SATISFIED);
        assert!(type_one_monitor(&grid(0.0, 1.0, 11), &[0.0; 11], 1.0, 1.0, 0.25).is_err());
    }

    #[test]
    fn monitor_window_is_trailing() {
        let t = grid(0.0, 0.75, 4);
        let m = [100.0, 0.0, 0.0, 0.0];
        let mon = type_one_monitor(&t, &m, 1.0, 1.0, 0.25).unwrap();
        assert_eq!(mon.window_start, 3);
        assert!(mon.satisfied);
    }

    #[test]
    fn bkm_closed_forms() {
        let t = grid(0.0, 1.0, 11);
        assert_eq!(bkm_integral(&t, &[0.0; 11], Weight::None).unwrap(), 0.0);
        assert!((bkm_integral(&t, &[2.0; 11], Weight::None).unwrap() - 2.0).abs() < 1e-14);
        let w = bkm_integral(&t, &[1.0; 11], Weight::Linear { candidate_t: 1.0 }).unwrap();
        assert!((w - 0.5).abs() < 1e-14);
    }
}
