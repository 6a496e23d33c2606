//! Randomized algebraic verification of the pointwise kinematic identities.
//!
//! Each sample is a trace-free matrix `M` (symmetric strain `S` in 3D, a
//! general velocity gradient `U` in 2D), a symmetric pressure Hessian `P`
//! and a vector `v` (vorticity or `grad^perp theta`). Material derivatives
//! are replaced by their kinematic expressions:
//!
//! - `D_t|v| = alpha |v|`
//! - `D_t xi = M xi - alpha xi`
//! - `D_t|M v| = -zeta.P v`
//! - `D_t zeta = (-P xi + (zeta.P xi) zeta) / |M xi|`
//!
//! so every identity becomes an exact algebraic statement whose residual
//! must sit at rounding level.

use nalgebra::{SMatrix, SVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

/// Pass threshold for every relative identity residual.
pub const IDENTITY_TOLERANCE: f64 = 1e-10;
/// Relative slack allowed on the inequalities.
pub const INEQUALITY_TOLERANCE: f64 = 1e-12;
/// Absolute floor on residual denominators.
pub const RESIDUAL_FLOOR: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum Identity {
    /// `(D_t|v|)^2 + |D_t xi|^2 |v|^2 = |M v|^2`
    VorticityPythagoras,
    /// `(D_t|M v|)^2 + |D_t zeta|^2 |M v|^2 = |P v|^2`
    StrainPythagoras,
    /// `(D_t|M v|)^2 + (|D_t zeta| D_t|v|)^2 + (|D_t zeta||D_t xi||v|)^2 = |P v|^2`
    ThreeTerm,
    /// `P xi = (zeta.P xi) zeta - |M xi| D_t zeta`, both written forms
    PressureDecomposition,
    /// `(D_t zeta/|D_t zeta|).P xi = -|M xi||D_t zeta|`
    PressureProjection,
    /// `zeta.D_t zeta = 0` and `xi.D_t xi = 0`
    DirectionOrthogonality,
    /// `M xi = alpha xi + D_t xi` and `D_t xi.M xi = |D_t xi|^2 = |M xi|^2 - alpha^2`
    StretchDecomposition,
}

impl Identity {
    pub const ALL: [Identity; 7] = [
        Identity::VorticityPythagoras,
        Identity::StrainPythagoras,
        Identity::ThreeTerm,
        Identity::PressureDecomposition,
        Identity::PressureProjection,
        Identity::DirectionOrthogonality,
        Identity::StretchDecomposition,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Identity::VorticityPythagoras => "vorticity-pythagoras",
            Identity::StrainPythagoras => "strain-pythagoras",
            Identity::ThreeTerm => "three-term",
            Identity::PressureDecomposition => "pressure-decomposition",
            Identity::PressureProjection => "pressure-projection",
            Identity::DirectionOrthogonality => "direction-orthogonality",
            Identity::StretchDecomposition => "stretch-decomposition",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum Inequality {
    /// `D_t|v| + |D_t xi||v| <= sqrt2 |M v|`
    Vorticity,
    /// `D_t|M v| + |D_t zeta||M v| <= sqrt2 |P v|`
    Strain,
    /// `D_t|M v| + |D_t zeta| D_t|v| + |D_t zeta||D_t xi||v| <= sqrt3 |P v|`
    ThreeTerm,
}

impl Inequality {
    pub const ALL: [Inequality; 3] = [Inequality::Vorticity, Inequality::Strain, Inequality::ThreeTerm];

    pub fn name(&self) -> &'static str {
        match self {
            Inequality::Vorticity => "vorticity-sqrt2",
            Inequality::Strain => "strain-sqrt2",
            Inequality::ThreeTerm => "three-term-sqrt3",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkipReason {
    ZeroVector,
    ZeroStretching,
    StationaryStretchDirection,
}

impl SkipReason {
    pub fn describe(&self) -> &'static str {
        match self {
            SkipReason::ZeroVector => "|v| = 0: direction fields undefined",
            SkipReason::ZeroStretching => "|M xi| = 0: zeta undefined",
            SkipReason::StationaryStretchDirection => "|D_t zeta| = 0: unit D_t zeta undefined",
        }
    }
}

pub type Check = Result<f64, SkipReason>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlgebraicSample<const D: usize> {
    /// `S` (symmetric, 3D) or `U` (general, 2D); trace-free.
    pub m: SMatrix<f64, D, D>,
    pub p: SMatrix<f64, D, D>,
    pub v: SVector<f64, D>,
}

/// Direction fields and material-derivative proxies of a sample.
#[derive(Clone, Copy, Debug)]
pub struct Proxies<const D: usize> {
    pub v_norm: f64,
    pub xi: SVector<f64, D>,
    pub alpha: f64,
    pub m_xi: SVector<f64, D>,
    pub m_xi_norm: f64,
    pub p_xi: SVector<f64, D>,
    pub zeta: Option<SVector<f64, D>>,
    pub dt_v_norm: f64,
    pub dt_xi: SVector<f64, D>,
    pub dt_mv_norm: Option<f64>,
    pub dt_zeta: Option<SVector<f64, D>>,
}

fn rel(residual: f64, scale: f64) -> f64 {
    residual.abs() / scale.abs().max(RESIDUAL_FLOOR)
}

impl<const D: usize> AlgebraicSample<D> {
    pub fn proxies(&self) -> Result<Proxies<D>, SkipReason> {
        let v_norm = self.v.norm();
        if v_norm == 0.0 {
            return Err(SkipReason::ZeroVector);
        }
        let xi = self.v / v_norm;
        let m_xi = self.m * xi;
        let m_xi_norm = m_xi.norm();
        let alpha = xi.dot(&m_xi);
        let p_xi = self.p * xi;
        let (zeta, dt_mv_norm, dt_zeta) = if m_xi_norm == 0.0 {
            (None, None, None)
        } else {
            let zeta = m_xi / m_xi_norm;
            let zp = zeta.dot(&p_xi);
            (
                Some(zeta),
                Some(-zp * v_norm),
                Some((-p_xi + zeta * zp) / m_xi_norm),
            )
        };
        Ok(Proxies {
            v_norm,
            xi,
            alpha,
            m_xi,
            m_xi_norm,
            p_xi,
            zeta,
            dt_v_norm: alpha * v_norm,
            dt_xi: m_xi - xi * alpha,
            dt_mv_norm,
            dt_zeta,
        })
    }

    pub fn check(&self, identity: Identity) -> Check {
        let q = self.proxies()?;
        match identity {
            Identity::VorticityPythagoras => check_vorticity_pythagoras(&q),
            Identity::StrainPythagoras => check_strain_pythagoras(self, &q),
            Identity::ThreeTerm => check_three_term(self, &q),
            Identity::PressureDecomposition => check_orthogonal_decompositions(&q).map(|r| r.decomposition),
            Identity::PressureProjection => {
                let r = check_orthogonal_decompositions(&q)?;
                r.projection.ok_or(SkipReason::StationaryStretchDirection)
            }
            Identity::DirectionOrthogonality => check_orthogonal_decompositions(&q).map(|r| r.orthogonality),
            Identity::StretchDecomposition => Ok(check_stretch_decomposition(&q)),
        }
    }

    pub fn margins(&self) -> Result<InequalityMargins, SkipReason> {
        check_inequalities(self)
    }
}

/// Relative residual of `(D_t|v|)^2 + |D_t xi|^2 |v|^2 = |M v|^2`.
pub fn check_vorticity_pythagoras<const D: usize>(q: &Proxies<D>) -> Check {
    if q.m_xi_norm == 0.0 {
        return Err(SkipReason::ZeroStretching);
    }
    let lhs = q.dt_v_norm.powi(2) + q.dt_xi.norm_squared() * q.v_norm.powi(2);
    let rhs = (q.m_xi * q.v_norm).norm_squared();
    Ok(rel(lhs - rhs, rhs))
}

/// Relative residual of `(D_t|M v|)^2 + |D_t zeta|^2 |M v|^2 = |P v|^2`.
pub fn check_strain_pythagoras<const D: usize>(s: &AlgebraicSample<D>, q: &Proxies<D>) -> Check {
    let (dmv, dz) = q.dt_mv_norm.zip(q.dt_zeta).ok_or(SkipReason::ZeroStretching)?;
    let mv = q.m_xi_norm * q.v_norm;
    let lhs = dmv.powi(2) + dz.norm_squared() * mv.powi(2);
    let rhs = (s.p * s.v).norm_squared();
    Ok(rel(lhs - rhs, rhs))
}

/// Relative residual of the three-term identity obtained by substituting the
/// vorticity Pythagoras relation into the strain one.
pub fn check_three_term<const D: usize>(s: &AlgebraicSample<D>, q: &Proxies<D>) -> Check {
    let (dmv, dz) = q.dt_mv_norm.zip(q.dt_zeta).ok_or(SkipReason::ZeroStretching)?;
    let dzn = dz.norm();
    let lhs = dmv.powi(2) + (dzn * q.dt_v_norm).powi(2) + (dzn * q.dt_xi.norm() * q.v_norm).powi(2);
    let rhs = (s.p * s.v).norm_squared();
    Ok(rel(lhs - rhs, rhs))
}

#[derive(Clone, Copy, Debug)]
pub struct DecompositionResiduals {
    /// Worst of the two written forms of the `P xi` decomposition.
    pub decomposition: f64,
    /// Projection of `P xi` onto the unit `D_t zeta`; `None` when `D_t zeta = 0`.
    pub projection: Option<f64>,
    /// Worst of `zeta.D_t zeta` and `xi.D_t xi`.
    pub orthogonality: f64,
}

/// `d` with its component along the unit vector `u` removed once more. The
/// projection forms divide by `|d|^2`, so the `O(eps |M xi|)` rounding
/// component left along `u` by `M xi - alpha xi` would otherwise be
/// amplified by `|M xi| / |d|` when `xi` is close to an eigenvector.
fn reorthogonalize<const D: usize>(d: SVector<f64, D>, u: SVector<f64, D>) -> SVector<f64, D> {
    let r = d - u * u.dot(&d);
    if r.norm_squared() > 0.0 {
        r
    } else {
        d
    }
}

pub fn check_orthogonal_decompositions<const D: usize>(q: &Proxies<D>) -> Result<DecompositionResiduals, SkipReason> {
    let (zeta, dz) = q.zeta.zip(q.dt_zeta).ok_or(SkipReason::ZeroStretching)?;
    let pn = q.p_xi.norm();
    let zp = zeta.dot(&q.p_xi);
    let first = q.p_xi - (zeta * zp - dz * q.m_xi_norm);
    let mut decomposition = rel(first.norm(), pn);
    let dzn2 = dz.norm_squared();
    let mut projection = None;
    if dzn2 > 0.0 {
        let d = reorthogonalize(dz, zeta);
        let second = q.p_xi - (zeta * zp + d * (d.dot(&q.p_xi) / d.norm_squared()));
        decomposition = decomposition.max(rel(second.norm(), pn));
        let dzn = dzn2.sqrt();
        projection = Some(rel((d / d.norm()).dot(&q.p_xi) + q.m_xi_norm * dzn, pn));
    }
    let orth_zeta = rel(zeta.dot(&dz), pn / q.m_xi_norm);
    let orth_xi = rel(q.xi.dot(&q.dt_xi), q.m_xi_norm);
    Ok(DecompositionResiduals {
        decomposition,
        projection,
        orthogonality: orth_zeta.max(orth_xi),
    })
}

/// Worst relative residual of `M xi = alpha xi + D_t xi` (both forms) and
/// `D_t xi.M xi = |D_t xi|^2 = |M xi|^2 - alpha^2`.
pub fn check_stretch_decomposition<const D: usize>(q: &Proxies<D>) -> f64 {
    let scale = q.m_xi_norm;
    let mut worst = rel((q.m_xi - q.xi * q.alpha - q.dt_xi).norm(), scale);
    let dn2 = q.dt_xi.norm_squared();
    if dn2 > 0.0 {
        let d = reorthogonalize(q.dt_xi, q.xi);
        let second = q.m_xi - (q.xi * q.alpha + d * (d.dot(&q.m_xi) / d.norm_squared()));
        worst = worst.max(rel(second.norm(), scale));
    }
    let s2 = scale * scale;
    worst = worst.max(rel(q.dt_xi.dot(&q.m_xi) - dn2, s2));
    worst.max(rel(dn2 - (q.m_xi_norm.powi(2) - q.alpha.powi(2)), s2))
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct InequalityMargin {
    pub lhs: f64,
    pub rhs: f64,
}

impl InequalityMargin {
    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }

    pub fn ratio(&self) -> f64 {
        if self.rhs > 0.0 {
            self.lhs / self.rhs
        } else if self.lhs > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }

    pub fn holds(&self) -> bool {
        self.lhs - self.rhs <= INEQUALITY_TOLERANCE * self.rhs.abs().max(RESIDUAL_FLOOR)
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct InequalityMargins {
    pub vorticity: InequalityMargin,
    pub strain: Option<InequalityMargin>,
    pub three_term: Option<InequalityMargin>,
}

impl InequalityMargins {
    pub fn get(&self, which: Inequality) -> Option<InequalityMargin> {
        match which {
            Inequality::Vorticity => Some(self.vorticity),
            Inequality::Strain => self.strain,
            Inequality::ThreeTerm => self.three_term,
        }
    }
}

/// Left/right sides of the three differential inequalities.
pub fn check_inequalities<const D: usize>(s: &AlgebraicSample<D>) -> Result<InequalityMargins, SkipReason> {
    let q = s.proxies()?;
    let sqrt2 = std::f64::consts::SQRT_2;
    let vorticity = InequalityMargin {
        lhs: q.dt_v_norm + q.dt_xi.norm() * q.v_norm,
        rhs: sqrt2 * q.m_xi_norm * q.v_norm,
    };
    let pv = (s.p * s.v).norm();
    let (strain, three_term) = match q.dt_mv_norm.zip(q.dt_zeta) {
        None => (None, None),
        Some((dmv, dz)) => {
            let dzn = dz.norm();
            (
                Some(InequalityMargin {
                    lhs: dmv + dzn * q.m_xi_norm * q.v_norm,
                    rhs: sqrt2 * pv,
                }),
                Some(InequalityMargin {
                    lhs: dmv + dzn * q.dt_v_norm + dzn * q.dt_xi.norm() * q.v_norm,
                    rhs: 3.0_f64.sqrt() * pv,
                }),
            )
        }
    };
    Ok(InequalityMargins {
        vorticity,
        strain,
        three_term,
    })
}

/// Options for random sample generation.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SampleOptions {
    /// Overall magnitude multiplier applied to `M`, `P` and `v`.
    pub magnitude: f64,
    /// Every k-th sample (k >= 1) gets `v = 0`.
    pub degenerate_every: Option<usize>,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions {
            magnitude: 1.0,
            degenerate_every: None,
        }
    }
}

fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Random sample `index` of a seeded stream. Symmetric `M` via `A + A^T` and
/// trace removal when `symmetric`; otherwise a general trace-free matrix.
pub fn random_sample<const D: usize>(seed: u64, index: u64, symmetric: bool, opts: &SampleOptions) -> AlgebraicSample<D> {
    let mut rng = sample_rng(seed, index);
    let mut draw = || rng.random_range(-1.0..1.0);
    let a = SMatrix::<f64, D, D>::from_fn(|_, _| draw());
    let mut m = if symmetric { a + a.transpose() } else { a };
    let tr = m.trace() / D as f64;
    for i in 0..D {
        m[(i, i)] -= tr;
    }
    let b = SMatrix::<f64, D, D>::from_fn(|_, _| draw());
    let p = b + b.transpose();
    let mut v = SVector::<f64, D>::from_fn(|_, _| draw());
    if let Some(k) = opts.degenerate_every {
        if k > 0 && index % k as u64 == 0 {
            v = SVector::zeros();
        }
    }
    let s = opts.magnitude;
    AlgebraicSample {
        m: m * s,
        p: p * s,
        v: v * s,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct IdentityStats {
    pub identity: Identity,
    pub evaluated: usize,
    pub skipped: usize,
    pub max_residual: f64,
    pub worst_sample: Option<u64>,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct InequalityStats {
    pub inequality: Inequality,
    pub evaluated: usize,
    pub violations: usize,
    pub max_ratio: f64,
    pub worst_sample: Option<u64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SkipCount {
    pub reason: SkipReason,
    pub description: &'static str,
    pub count: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct BatchReport {
    pub dim: usize,
    pub count: usize,
    pub seed: u64,
    pub magnitude: f64,
    pub tolerance: f64,
    pub inequality_tolerance: f64,
    pub identities: Vec<IdentityStats>,
    pub inequalities: Vec<InequalityStats>,
    pub skipped_samples: Vec<SkipCount>,
    pub passed: bool,
}

struct SampleOutcome {
    checks: [Check; 7],
    margins: Result<InequalityMargins, SkipReason>,
}

fn evaluate<const D: usize>(s: &AlgebraicSample<D>) -> SampleOutcome {
    SampleOutcome {
        checks: Identity::ALL.map(|id| s.check(id)),
        margins: s.margins(),
    }
}

/// Runs `count` seeded random samples in `dim` (2: general `U`; 3:
/// symmetric `S`) through every identity and inequality.
pub fn run_batch(dim: usize, count: usize, seed: u64, opts: &SampleOptions) -> BatchReport {
    let outcomes: Vec<SampleOutcome> = (0..count as u64)
        .into_par_iter()
        .map(|i| match dim {
            2 => evaluate(&random_sample::<2>(seed, i, false, opts)),
            _ => evaluate(&random_sample::<3>(seed, i, true, opts)),
        })
        .collect();

    let identities = Identity::ALL
        .iter()
        .enumerate()
        .map(|(k, &identity)| {
            let mut stats = IdentityStats {
                identity,
                evaluated: 0,
                skipped: 0,
                max_residual: 0.0,
                worst_sample: None,
                passed: true,
            };
            for (i, o) in outcomes.iter().enumerate() {
                match o.checks[k] {
                    Ok(r) => {
                        stats.evaluated += 1;
                        if !(r <= stats.max_residual) {
                            stats.max_residual = r;
                            stats.worst_sample = Some(i as u64);
                        }
                    }
                    Err(_) => stats.skipped += 1,
                }
            }
            stats.passed = stats.max_residual <= IDENTITY_TOLERANCE;
            stats
        })
        .collect::<Vec<_>>();

    let inequalities = Inequality::ALL
        .iter()
        .map(|&inequality| {
            let mut stats = InequalityStats {
                inequality,
                evaluated: 0,
                violations: 0,
                max_ratio: 0.0,
                worst_sample: None,
            };
            for (i, o) in outcomes.iter().enumerate() {
                if let Some(m) = o.margins.ok().and_then(|m| m.get(inequality)) {
                    stats.evaluated += 1;
                    if !m.holds() {
                        stats.violations += 1;
                    }
                    let ratio = m.ratio();
                    if !(ratio <= stats.max_ratio) {
                        stats.max_ratio = ratio;
                        stats.worst_sample = Some(i as u64);
                    }
                }
            }
            stats
        })
        .collect::<Vec<_>>();

    let mut skipped_samples = Vec::new();
    for reason in [
        SkipReason::ZeroVector,
        SkipReason::ZeroStretching,
        SkipReason::StationaryStretchDirection,
    ] {
        let count = outcomes
            .iter()
            .filter(|o| o.checks.iter().any(|c| *c == Err(reason)))
            .count();
        if count > 0 {
            skipped_samples.push(SkipCount {
                reason,
                description: reason.describe(),
                count,
            });
        }
    }

    let passed = identities.iter().all(|s| s.passed) && inequalities.iter().all(|s| s.violations == 0);
    BatchReport {
        dim,
        count,
        seed,
        magnitude: opts.magnitude,
        tolerance: IDENTITY_TOLERANCE,
        inequality_tolerance: INEQUALITY_TOLERANCE,
        identities,
        inequalities,
        skipped_samples,
        passed,
    }
}

/// Human-readable dump of one sample for failure reports.
pub fn describe_sample(dim: usize, seed: u64, index: u64, opts: &SampleOptions) -> String {
    match dim {
        2 => format!("{:?}", random_sample::<2>(seed, index, false, opts)),
        _ => format!("{:?}", random_sample::<3>(seed, index, true, opts)),
    }
}

/// Largest `lhs/rhs` found for each inequality by random search followed by
/// greedy perturbation of the best candidates.
pub fn adversarial_inequality_search(dim: usize, count: usize, seed: u64) -> Vec<(Inequality, f64)> {
    match dim {
        2 => adversarial::<2>(count, seed, false),
        _ => adversarial::<3>(count, seed, true),
    }
}

fn adversarial<const D: usize>(count: usize, seed: u64, symmetric: bool) -> Vec<(Inequality, f64)> {
    let opts = SampleOptions::default();
    let ratio_of = |s: &AlgebraicSample<D>, which: Inequality| -> f64 {
        s.margins()
            .ok()
            .and_then(|m| m.get(which))
            .map(|m| m.ratio())
            .unwrap_or(0.0)
    };
    Inequality::ALL
        .iter()
        .map(|&which| {
            let mut scored: Vec<(f64, AlgebraicSample<D>)> = (0..count as u64)
                .map(|i| {
                    let s = random_sample::<D>(seed, i, symmetric, &opts);
                    (ratio_of(&s, which), s)
                })
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0));
            scored.truncate(8);
            let mut rng = sample_rng(seed ^ 0x9e37_79b9_7f4a_7c15, which as u64);
            let mut best = 0.0_f64;
            for (mut r, mut s) in scored {
                let mut step = 0.1;
                for _ in 0..400 {
                    let mut t = s;
                    let dm = SMatrix::<f64, D, D>::from_fn(|_, _| rng.random_range(-step..step));
                    t.m += if symmetric { dm + dm.transpose() } else { dm };
                    let tr = t.m.trace() / D as f64;
                    for i in 0..D {
                        t.m[(i, i)] -= tr;
                    }
                    let dp = SMatrix::<f64, D, D>::from_fn(|_, _| rng.random_range(-step..step));
                    t.p += dp + dp.transpose();
                    t.v += SVector::<f64, D>::from_fn(|_, _| rng.random_range(-step..step));
                    let rt = ratio_of(&t, which);
                    if rt > r {
                        r = rt;
                        s = t;
                    } else {
                        step *= 0.995;
                    }
                }
                best = best.max(r);
            }
            (which, best)
        })
        .collect()
}
