//! Gronwall-type bounds and a brute-force oracle for them.
//!
//! (i)  `y <= alpha + int_a^t beta y`            gives `y <= alpha exp(int beta)`
//! (ii) `y <= alpha + int_a^t int_a^s beta y`    gives `y <= alpha exp(int int beta)`
//!
//! with `alpha` non-decreasing, `beta >= 0` and, for (ii), `y >= 0`. The
//! oracle solves the equality case by implicit trapezoid marching on a
//! refined grid, with `alpha` and `beta` interpolated linearly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{cumulative_double, cumulative_trapezoid, uniform_step};

/// Relative slack for domination checks.
pub const DOMINATION_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Single,
    Double,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "single" | "i" => Ok(Variant::Single),
            "double" | "ii" => Ok(Variant::Double),
            other => Err(Error::Config(format!("unknown Gronwall variant `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GronwallProblem {
    pub variant: Variant,
    pub times: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub y: Option<Vec<f64>>,
}

impl GronwallProblem {
    pub fn new(variant: Variant, times: Vec<f64>, alpha: Vec<f64>, beta: Vec<f64>, y: Option<Vec<f64>>) -> Result<Self> {
        let p = GronwallProblem {
            variant,
            times,
            alpha,
            beta,
            y,
        };
        p.validate()?;
        Ok(p)
    }

    /// Samples of `alpha` and `beta` on `samples` uniform points of `[a, b]`.
    pub fn from_profiles(variant: Variant, a: f64, b: f64, samples: usize, alpha: &Profile, beta: &Profile) -> Result<Self> {
        if samples < 2 || !(b > a) {
            return Err(Error::Config(format!("need b > a and at least 2 samples, got [{a}, {b}] with {samples}")));
        }
        let times: Vec<f64> = (0..samples)
            .map(|k| a + (b - a) * k as f64 / (samples - 1) as f64)
            .collect();
        let al = alpha.sample(&times)?;
        let be = beta.sample(&times)?;
        GronwallProblem::new(variant, times, al, be, None)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        if self.alpha.len() != n || self.beta.len() != n || self.y.as_ref().is_some_and(|y| y.len() != n) {
            return Err(Error::Sampling("alpha, beta and y must match the time grid".into()));
        }
        uniform_step(&self.times)?;
        let all = self.alpha.iter().chain(&self.beta).chain(self.y.iter().flatten());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::Hypothesis("non-finite input".into()));
        }
        for (k, w) in self.alpha.windows(2).enumerate() {
            if w[1] < w[0] {
                return Err(Error::Hypothesis(format!(
                    "alpha decreases between samples {k} and {}: {} -> {}",
                    k + 1,
                    w[0],
                    w[1]
                )));
            }
        }
        if let Some((k, b)) = self.beta.iter().enumerate().find(|(_, b)| **b < 0.0) {
            return Err(Error::Hypothesis(format!("beta is negative at sample {k}: {b}")));
        }
        if self.variant == Variant::Double {
            if let Some((k, v)) = self.y.iter().flatten().enumerate().find(|(_, v)| **v < 0.0) {
                return Err(Error::Hypothesis(format!("y is negative at sample {k}: {v}")));
            }
        }
        Ok(())
    }

    fn step(&self) -> f64 {
        uniform_step(&self.times).expect("validated")
    }

    /// `int beta y` (single) or `int int beta y` (double) by the same
    /// quadrature as the bound.
    pub fn integral_term(&self, y: &[f64]) -> Vec<f64> {
        let h = self.step();
        let by: Vec<f64> = self.beta.iter().zip(y).map(|(b, y)| b * y).collect();
        let g = cumulative_trapezoid(h, &by);
        match self.variant {
            Variant::Single => g,
            Variant::Double => cumulative_double(h, &by, &g),
        }
    }
}

/// Closed-form sample profiles for spec files.
#[derive(Clone, Debug, PartialEq)]
pub enum Profile {
    Constant(f64),
    /// `c0 + c1 (t - a)`
    Linear(f64, f64),
    Values(Vec<f64>),
}

impl Profile {
    pub fn sample(&self, times: &[f64]) -> Result<Vec<f64>> {
        let a = times.first().copied().unwrap_or(0.0);
        match self {
            Profile::Constant(c) => Ok(vec![*c; times.len()]),
            Profile::Linear(c0, c1) => Ok(times.iter().map(|t| c0 + c1 * (t - a)).collect()),
            Profile::Values(v) if v.len() == times.len() => Ok(v.clone()),
            Profile::Values(v) => Err(Error::Config(format!(
                "{} explicit values for {} samples",
                v.len(),
                times.len()
            ))),
        }
    }

    pub fn is_refinable(&self) -> bool {
        !matches!(self, Profile::Values(_))
    }

    /// Parses `const:<c>`, `linear:<c0>,<c1>` or `values:<v0>,<v1>,...`; a
    /// bare number is a constant.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let nums = |body: &str| -> Result<Vec<f64>> {
            body.split(',')
                .map(|x| {
                    x.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad number `{}` in profile `{s}`", x.trim())))
                })
                .collect()
        };
        let (kind, body) = s.split_once(':').unwrap_or(("const", s));
        match kind.trim() {
            "const" => match nums(body)?.as_slice() {
                [c] => Ok(Profile::Constant(*c)),
                _ => Err(Error::Config(format!("const profile takes one value: `{s}`"))),
            },
            "linear" => match nums(body)?.as_slice() {
                [c0, c1] => Ok(Profile::Linear(*c0, *c1)),
                _ => Err(Error::Config(format!("linear profile takes two values: `{s}`"))),
            },
            "values" => Ok(Profile::Values(nums(body)?)),
            other => Err(Error::Config(format!("unknown profile kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct YCheck {
    /// Largest `y - (alpha + integral term)`, relative to `max(1, |rhs|)`.
    pub hypothesis_excess: f64,
    pub hypothesis_holds: bool,
    /// Largest `y / bound - 1`.
    pub bound_excess: f64,
    pub dominated: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundSeries {
    pub variant: Variant,
    pub times: Vec<f64>,
    pub bound: Vec<f64>,
    pub y_check: Option<YCheck>,
}

/// The lemma's bound at every sample; checks a supplied `y` against it
/// whenever `y` satisfies the hypothesis inequality.
pub fn gronwall_bound(problem: &GronwallProblem) -> Result<BoundSeries> {
    problem.validate()?;
    let h = problem.step();
    let g = cumulative_trapezoid(h, &problem.beta);
    let exponent = match problem.variant {
        Variant::Single => g,
        Variant::Double => cumulative_double(h, &problem.beta, &g),
    };
    let bound: Vec<f64> = problem.alpha.iter().zip(&exponent).map(|(a, e)| a * e.exp()).collect();
    let y_check = problem.y.as_ref().map(|y| {
        let integral = problem.integral_term(y);
        let hypothesis_excess = y
            .iter()
            .zip(problem.alpha.iter().zip(&integral))
            .map(|(y, (a, i))| (y - a - i) / (a + i).abs().max(1.0))
            .fold(f64::NEG_INFINITY, f64::max);
        let bound_excess = y
            .iter()
            .zip(&bound)
            .map(|(y, b)| if *b > 0.0 { y / b - 1.0 } else if *y > 0.0 { f64::INFINITY } else { 0.0 })
            .fold(f64::NEG_INFINITY, f64::max);
        let hypothesis_holds = hypothesis_excess <= DOMINATION_TOLERANCE;
        YCheck {
            hypothesis_excess,
            hypothesis_holds,
            bound_excess,
            dominated: !hypothesis_holds || bound_excess <= DOMINATION_TOLERANCE,
        }
    });
    Ok(BoundSeries {
        variant: problem.variant,
        times: problem.times.clone(),
        bound,
        y_check,
    })
}

/// Equality-case solution at the sample times, marched with `refine`
/// substeps per sample interval.
pub fn gronwall_oracle(problem: &GronwallProblem, refine: usize) -> Result<Vec<f64>> {
    problem.validate()?;
    if refine == 0 {
        return Err(Error::Config("refine must be at least 1".into()));
    }
    let h = problem.step() / refine as f64;
    let n = problem.times.len();
    let lerp = |v: &[f64], k: usize, j: usize| -> f64 {
        if j == 0 || k + 1 >= n {
            v[k]
        } else {
            let s = j as f64 / refine as f64;
            v[k] * (1.0 - s) + v[k + 1] * s
        }
    };
    let mut out = Vec::with_capacity(n);
    let mut y = problem.alpha[0];
    out.push(y);
    // single: running int beta y; double: W = int int beta y, z = int beta y
    let (mut int1, mut w, mut z) = (0.0, 0.0, 0.0);
    let (mut b_prev, mut y_prev) = (problem.beta[0], y);
    for k in 0..n - 1 {
        for j in 1..=refine {
            let (kk, jj) = if j == refine { (k + 1, 0) } else { (k, j) };
            let a_next = lerp(&problem.alpha, kk, jj);
            let b_next = lerp(&problem.beta, kk, jj);
            y = match problem.variant {
                Variant::Single => {
                    let denom = 1.0 - 0.5 * h * b_next;
                    if !(denom > 0.0) {
                        return Err(Error::NoConvergence(format!(
                            "implicit step unstable (h beta = {}); increase refine",
                            h * b_next
                        )));
                    }
                    let y_next = (a_next + int1 + 0.5 * h * b_prev * y_prev) / denom;
                    int1 += 0.5 * h * (b_prev * y_prev + b_next * y_next);
                    y_next
                }
                Variant::Double => {
                    let denom = 1.0 - 0.25 * h * h * b_next;
                    if !(denom > 0.0) {
                        return Err(Error::NoConvergence(format!(
                            "implicit step unstable (h^2 beta = {}); increase refine",
                            h * h * b_next
                        )));
                    }
                    let y_next = (a_next + w + h * z + 0.25 * h * h * b_prev * y_prev) / denom;
                    let z_next = z + 0.5 * h * (b_prev * y_prev + b_next * y_next);
                    w += 0.5 * h * (z + z_next);
                    z = z_next;
                    y_next
                }
            };
            if !y.is_finite() {
                return Err(Error::NoConvergence("oracle overflowed".into()));
            }
            b_prev = b_next;
            y_prev = y;
        }
        out.push(y);
    }
    Ok(out)
}

/// Random instance `index` of a seeded stream: `alpha` non-decreasing and
/// `beta >= 0`, both piecewise linear on `[0, b]` with `b` in `[0.5, 2]`.
pub fn random_problem(seed: u64, index: u64, variant: Variant, samples: usize) -> GronwallProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let b = rng.random_range(0.5..2.0);
    let times: Vec<f64> = (0..samples).map(|k| b * k as f64 / (samples - 1) as f64).collect();
    let mut alpha = Vec::with_capacity(samples);
    let mut a = rng.random_range(0.1..2.0);
    for _ in 0..samples {
        alpha.push(a);
        // frequent flat stretches keep near-saturating cases in the mix
        if rng.random_bool(0.5) {
            a += rng.random_range(0.0..0.5);
        }
    }
    let level = rng.random_range(0.0..3.0);
    let beta = (0..samples)
        .map(|_| if rng.random_bool(0.2) { 0.0 } else { level * rng.random_range(0.0..1.0) })
        .collect();
    GronwallProblem {
        variant,
        times,
        alpha,
        beta,
        y: None,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DominationBatch {
    pub variant: Variant,
    pub count: usize,
    pub seed: u64,
    pub samples: usize,
    pub refine: usize,
    pub dominated: usize,
    /// Largest `oracle / bound - 1` over all instances and samples.
    pub worst_excess: f64,
    pub worst_instance: u64,
}

impl DominationBatch {
    pub fn passed(&self) -> bool {
        self.dominated == self.count
    }
}

pub fn domination_batch(count: usize, seed: u64, variant: Variant, samples: usize, refine: usize) -> Result<DominationBatch> {
    let excess: Vec<f64> = (0..count as u64)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let p = random_problem(seed, i, variant, samples);
            let bound = gronwall_bound(&p)?.bound;
            let oracle = gronwall_oracle(&p, refine)?;
            Ok(oracle
                .iter()
                .zip(&bound)
                .map(|(o, b)| o / b - 1.0)
                .fold(f64::NEG_INFINITY, f64::max))
        })
        .collect::<Result<_>>()?;
    let (worst_instance, worst_excess) = excess
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    Ok(DominationBatch {
        variant,
        count,
        seed,
        samples,
        refine,
        dominated: excess.iter().filter(|&&e| e <= DOMINATION_TOLERANCE).count(),
        worst_excess,
        worst_instance: worst_instance as u64,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SaturationStudy {
    pub steps: Vec<f64>,
    /// Max `|oracle - bound| / bound` at each step size.
    pub gaps: Vec<f64>,
    /// Least-squares slope of `log gap` against `log h`.
    pub slope: f64,
}

/// Gap between the oracle (marched on the sample grid itself) and the bound
/// as the sample spacing is halved repeatedly.
pub fn saturation_study(
    variant: Variant,
    a: f64,
    b: f64,
    alpha: &Profile,
    beta: &Profile,
    base_samples: usize,
    levels: usize,
) -> Result<SaturationStudy> {
    if !alpha.is_refinable() || !beta.is_refinable() {
        return Err(Error::Config("saturation study needs closed-form profiles".into()));
    }
    let mut steps = Vec::new();
    let mut gaps = Vec::new();
    for level in 0..levels {
        let samples = (base_samples - 1) * (1 << level) + 1;
        let p = GronwallProblem::from_profiles(variant, a, b, samples, alpha, beta)?;
        let bound = gronwall_bound(&p)?.bound;
        let oracle = gronwall_oracle(&p, 1)?;
        let gap = oracle
            .iter()
            .zip(&bound)
            .map(|(o, b)| ((o - b) / b).abs())
            .fold(0.0_f64, f64::max);
        steps.push((b - a) / (samples - 1) as f64);
        gaps.push(gap);
    }
    let xs: Vec<f64> = steps.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = gaps.iter().map(|g| g.ln()).collect();
    Ok(SaturationStudy {
        slope: least_squares_slope(&xs, &ys),
        steps,
        gaps,
    })
}

pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_beta_bound_is_alpha() {
        for variant in [Variant::Single, Variant::Double] {
            let p = GronwallProblem::from_profiles(variant, 0.0, 1.0, 11, &Profile::Linear(1.0, 2.0), &Profile::Constant(0.0))
                .unwrap();
            let b = gronwall_bound(&p).unwrap();
            assert_eq!(b.bound, p.alpha);
            assert_eq!(gronwall_oracle(&p, 4).unwrap(), p.alpha);
        }
    }

    #[test]
    fn closed_forms() {
        let c = 0.8;
        let p = GronwallProblem::from_profiles(Variant::Single, 0.0, 1.0, 21, &Profile::Constant(1.0), &Profile::Constant(c))
            .unwrap();
        let b = gronwall_bound(&p).unwrap();
        for (t, v) in p.times.iter().zip(&b.bound) {
            assert!((v - (c * t).exp()).abs() < 1e-14);
        }
        let oracle = gronwall_oracle(&p, 64).unwrap();
        assert!((oracle[20] - c.exp()).abs() < 1e-5);
        let p2 = GronwallProblem::from_profiles(Variant::Double, 0.0, 2.0, 21, &Profile::Constant(1.0), &Profile::Constant(1.0))
            .unwrap();
        let b2 = gronwall_bound(&p2).unwrap();
        for (t, v) in p2.times.iter().zip(&b2.bound) {
            assert!((v - (t * t / 2.0).exp()).abs() < 1e-13 * v);
        }
        // equality case of (ii) with constant beta: y'' = y, y(0)=1, y'(0)=0
        let o2 = gronwall_oracle(&p2, 64).unwrap();
        assert!((o2[20] - 2.0_f64.cosh()).abs() < 1e-5);
        assert!(o2[20] < b2.bound[20]);
    }

    #[test]
    fn hypothesis_violations_are_rejected() {
        let t = vec![0.0, 0.5, 1.0];
        assert!(matches!(
            GronwallProblem::new(Variant::Single, t.clone(), vec![1.0, 0.9, 1.0], vec![0.0; 3], None),
            Err(Error::Hypothesis(_))
        ));
        assert!(matches!(
            GronwallProblem::new(Variant::Single, t.clone(), vec![1.0; 3], vec![0.0, -1.0, 0.0], None),
            Err(Error::Hypothesis(_))
        ));
        assert!(matches!(
            GronwallProblem::new(Variant::Double, t, vec![1.0; 3], vec![0.0; 3], Some(vec![1.0, -0.1, 1.0])),
            Err(Error::Hypothesis(_))
        ));
    }

    #[test]
    fn oracle_satisfies_hypothesis_with_equality() {
        for variant in [Variant::Single, Variant::Double] {
            let mut p =
                GronwallProblem::from_profiles(variant, 0.0, 1.5, 201, &Profile::Linear(0.5, 1.0), &Profile::Linear(0.2, 1.5))
                    .unwrap();
            p.y = Some(gronwall_oracle(&p, 8).unwrap());
            let check = gronwall_bound(&p).unwrap().y_check.unwrap();
            assert!(check.hypothesis_excess.abs() < 1e-6, "{check:?}");
            assert!(check.dominated);
        }
    }

    #[test]
    fn supplied_y_above_bound_is_flagged() {
        let mut p = GronwallProblem::from_profiles(Variant::Single, 0.0, 1.0, 11, &Profile::Constant(1.0), &Profile::Constant(0.0))
            .unwrap();
        // y = 1 + t violates the hypothesis y <= 1, so no domination claim
        p.y = Some(p.times.iter().map(|t| 1.0 + t).collect());
        let c = gronwall_bound(&p).unwrap().y_check.unwrap();
        assert!(!c.hypothesis_holds && c.dominated);
    }

    #[test]
    fn saturation_gap_is_second_order() {
        let s = saturation_study(Variant::Single, 0.0, 1.0, &Profile::Constant(1.0), &Profile::Constant(1.5), 11, 4)
            .unwrap();
        assert!(s.slope >= 2.0, "{s:?}");
    }

    #[test]
    fn profiles_parse() {
        assert_eq!(Profile::parse("2.5").unwrap(), Profile::Constant(2.5));
        assert_eq!(Profile::parse("linear: 1, 0.5").unwrap(), Profile::Linear(1.0, 0.5));
        assert_eq!(Profile::parse("values:1,2,3").unwrap(), Profile::Values(vec![1.0, 2.0, 3.0]));
        assert!(Profile::parse("cubic:1").is_err());
    }

    proptest! {
        #[test]
        fn oracle_never_exceeds_bound(seed in 0u64..1000, idx in 0u64..1000, double in any::<bool>()) {
            let variant = if double { Variant::Double } else { Variant::Single };
            let p = random_problem(seed, idx, variant, 21);
            let bound = gronwall_bound(&p).unwrap().bound;
            let oracle = gronwall_oracle(&p, 128).unwrap();
            for (o, b) in oracle.iter().zip(&bound) {
                prop_assert!(*o <= b * (1.0 + DOMINATION_TOLERANCE));
            }
        }
    }
}
