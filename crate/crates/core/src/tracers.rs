//! Lagrangian tracers: trajectories, sampling along them, material
//! derivatives by finite differences in time, dynamical identity residuals
//! and growth-bound checks.
//!
//! Trajectories are advanced with the same RK4 stages as the flow (the
//! stage velocities come from [`StepStages`]), with velocities evaluated by
//! trigonometric interpolation. Sampled quantities are padded to 3D so one
//! code path serves both systems: `v` is `omega` (Euler) or
//! `grad^perp theta` (Boussinesq) and `M` is `S` or `U`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::engine::{gradient, perp_gradient, sup_over, Region};
use crate::diagnostics::{directions, sharp_bracket, Directions, Sign};
use crate::error::{Error, Result};
use crate::field::{Field, ScalarField};
use crate::grid::GridSpec;
use crate::interp::{Order, PointEvaluator};
use crate::io::fmt_f64;
use crate::quadrature::{cumulative_cubic, cumulative_double_cubic, uniform_step};
use crate::solver::{FlowState, StepStages, System};

// ---------------------------------------------------------------------------
// finite differences

/// Weights of derivatives `0..=m` at `z` for the nodes `x` (Fornberg's
/// recursion). `w[i][k]` multiplies `f(x_i)` in the k-th derivative.
pub fn fornberg_weights(z: f64, x: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut c = vec![vec![0.0; m + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c
}

/// Minimum series length accepted by [`material_derivative`].
pub const MIN_SAMPLES: usize = 5;

/// A sampled `f(X(t), t)` on a uniform time grid; `None` marks masked
/// samples.
#[derive(Clone, Debug, Serialize)]
pub struct MaterialSeries {
    pub times: Vec<f64>,
    pub values: Vec<Option<f64>>,
}

impl MaterialSeries {
    pub fn new(times: Vec<f64>, values: Vec<Option<f64>>) -> Self {
        MaterialSeries { times, values }
    }

    pub fn dense(times: Vec<f64>, values: &[f64]) -> Self {
        MaterialSeries {
            times,
            values: values.iter().map(|v| Some(*v)).collect(),
        }
    }
}

/// `d^order/dt^order` along the series with formal accuracy `accuracy`
/// (even, >= 2): centered stencils of `accuracy + 1` points in the interior
/// and one-sided stencils of `order + accuracy` points at the ends. A
/// derivative is masked when any stencil point is masked.
pub fn material_derivative(series: &MaterialSeries, order: usize, accuracy: usize) -> Result<Vec<Option<f64>>> {
    if !(order == 1 || order == 2) {
        return Err(Error::Config(format!("derivative order must be 1 or 2, got {order}")));
    }
    if accuracy < 2 || accuracy % 2 != 0 {
        return Err(Error::Config(format!("stencil accuracy must be even and >= 2, got {accuracy}")));
    }
    let n = series.times.len();
    if series.values.len() != n {
        return Err(Error::Sampling("times and values differ in length".into()));
    }
    let half = accuracy / 2;
    let side = order + accuracy;
    let need = MIN_SAMPLES.max(side);
    if n < need {
        return Err(Error::TooFewSamples { need, got: n });
    }
    let h = uniform_step(&series.times)?;
    let scale = h.powi(order as i32);
    let centered: Vec<f64> = {
        let x: Vec<f64> = (0..=2 * half).map(|i| i as f64 - half as f64).collect();
        fornberg_weights(0.0, &x, order).iter().map(|w| w[order]).collect()
    };
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let (start, weights) = if k >= half && k + half < n {
            (k - half, centered.clone())
        } else {
            let start = if k < half { 0 } else { n - side };
            let x: Vec<f64> = (0..side).map(|i| (start + i) as f64 - k as f64).collect();
            (start, fornberg_weights(0.0, &x, order).iter().map(|w| w[order]).collect())
        };
        let mut acc = 0.0;
        let mut masked = false;
        for (i, w) in weights.iter().enumerate() {
            match series.values[start + i] {
                Some(v) => acc += w * v,
                None => masked = true,
            }
        }
        out.push(if masked { None } else { Some(acc / scale) });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// seeding and advection

/// `count` uniform random points in the box, reproducible from `seed`.
pub fn seed_points(grid: &GridSpec, count: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut p = [0.0; 3];
            for a in p.iter_mut().take(grid.dim) {
                *a = rng.random_range(0.0..grid.length);
            }
            p
        })
        .collect()
}

fn velocity_evaluator(grid: &GridSpec, spectra: &[Vec<rustfft::num_complex::Complex64>]) -> PointEvaluator {
    let inputs: Vec<_> = spectra.iter().map(|s| (s.as_slice(), Order::Value)).collect();
    PointEvaluator::new(grid, &inputs)
}

/// Advances `positions` through one flow step with the flow's own RK4
/// stages. Positions are wrapped into the box afterwards.
pub fn advect_tracers(grid: &GridSpec, positions: &mut [[f64; 3]], stages: &StepStages) -> Result<()> {
    let ev: Vec<PointEvaluator> = stages.velocity.iter().map(|s| velocity_evaluator(grid, s)).collect();
    let dt = stages.dt;
    let d = grid.dim;
    let step = stages.step;
    let moved: Vec<Result<[f64; 3]>> = positions
        .par_iter()
        .enumerate()
        .map(|(label, x0)| {
            let vel = |e: &PointEvaluator, x: &[f64; 3]| -> [f64; 3] {
                let v = e.values(x);
                let mut out = [0.0; 3];
                out[..d].copy_from_slice(&v[..d]);
                out
            };
            let shift = |x: &[f64; 3], k: &[f64; 3], s: f64| -> [f64; 3] {
                let mut y = *x;
                for a in 0..d {
                    y[a] += s * k[a];
                }
                y
            };
            let k1 = vel(&ev[0], x0);
            let k2 = vel(&ev[1], &shift(x0, &k1, 0.5 * dt));
            let k3 = vel(&ev[2], &shift(x0, &k2, 0.5 * dt));
            let k4 = vel(&ev[3], &shift(x0, &k3, dt));
            let mut x = *x0;
            for a in 0..d {
                x[a] += dt / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]);
            }
            if x.iter().any(|c| !c.is_finite()) {
                return Err(Error::TracerNonFinite { label, step });
            }
            grid.wrap(&mut x);
            Ok(x)
        })
        .collect();
    for (p, m) in positions.iter_mut().zip(moved) {
        *p = m?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// sampling

/// Raw fields at one tracer and time, padded to 3D.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TracerSample {
    pub time: f64,
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    /// `omega` or `grad^perp theta`.
    pub v: Vector3<f64>,
    /// `S` or `U`.
    pub m: Matrix3<f64>,
    pub p: Matrix3<f64>,
}

/// Quantities derived from a [`TracerSample`].
#[derive(Clone, Copy, Debug)]
pub struct PointQuantities {
    pub v_norm: f64,
    pub mv: Vector3<f64>,
    pub pv: Vector3<f64>,
    pub dirs: Directions<3>,
    pub pxi_norm: f64,
    /// Kinematic `|D_t xi| = |M xi - alpha xi|`.
    pub dt_xi_norm: f64,
    /// Kinematic `|D_t zeta| = |P xi - (zeta.P xi) zeta| / |M xi|`.
    pub dt_zeta_norm: f64,
}

impl TracerSample {
    pub fn quantities(&self, eps: f64) -> PointQuantities {
        let dirs = directions(&self.v, &self.m, &self.p, eps);
        let pxi = self.p * dirs.xi;
        let dt_xi_norm = (self.m * dirs.xi - dirs.xi * dirs.alpha).norm();
        let dt_zeta_norm = if dirs.zeta == Vector3::zeros() {
            0.0
        } else {
            (pxi - dirs.zeta * dirs.align).norm() / dirs.stretch_rate
        };
        PointQuantities {
            v_norm: self.v.norm(),
            mv: self.m * self.v,
            pv: self.p * self.v,
            dirs,
            pxi_norm: pxi.norm(),
            dt_xi_norm,
            dt_zeta_norm,
        }
    }
}

/// Samples `state` and its pressure at `positions`.
pub fn sample_tracers(state: &FlowState, pressure: &ScalarField, positions: &[[f64; 3]]) -> Result<Vec<TracerSample>> {
    let g = *state.grid();
    g.check_same(pressure.grid())?;
    let u = state.velocity();
    let mut inputs: Vec<(&[rustfft::num_complex::Complex64], Order)> =
        (0..g.dim).map(|c| (u.spectrum(c), Order::Gradient)).collect();
    if let Some(th) = state.theta() {
        inputs.push((th.spectrum(), Order::Gradient));
    }
    // the velocity is band-limited but the pressure fills the whole grid
    let ev = PointEvaluator::new(&g, &inputs);
    let ev_p = PointEvaluator::new(&g, &[(pressure.spectrum(), Order::Hessian)]);
    let time = state.time();
    let system = state.system();
    let d = g.dim;
    Ok(positions
        .par_iter()
        .map(|x| {
            let jets = ev.evaluate(x);
            let pj = ev_p.evaluate(x)[0];
            // T_ij = d_i u_j
            let t = Matrix3::from_fn(|i, j| if i < d && j < d { jets[j].grad[i] } else { 0.0 });
            let p = Matrix3::from_fn(|i, j| if i < d && j < d { pj.hess[i][j] } else { 0.0 });
            let mut velocity = [0.0; 3];
            for c in 0..d {
                velocity[c] = jets[c].value;
            }
            let (v, m) = match system {
                System::Euler3d => {
                    let v = Vector3::new(t[(1, 2)] - t[(2, 1)], t[(2, 0)] - t[(0, 2)], t[(0, 1)] - t[(1, 0)]);
                    (v, (t + t.transpose()) * 0.5)
                }
                System::Boussinesq2d => {
                    let gth = jets[d].grad;
                    (Vector3::new(-gth[1], gth[0], 0.0), t.transpose())
                }
            };
            TracerSample {
                time,
                position: *x,
                velocity,
                v,
                m,
                p,
            }
        })
        .collect())
}

/// Grid maximum of `|omega|` (Euler) or `|grad^perp theta|` (Boussinesq).
pub fn vector_field_max(state: &FlowState) -> Result<f64> {
    match state.theta() {
        Some(th) => Ok(perp_gradient(th)?.max_magnitude()),
        None => {
            let t = gradient(state.velocity())?;
            sup_over(state.grid(), &Region::Global, |idx| {
                let t = t.at(idx);
                let w = [t[1][2] - t[2][1], t[2][0] - t[0][2], t[0][1] - t[1][0]];
                (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt()
            })
        }
    }
}

/// One tracer's history.
#[derive(Clone, Debug)]
pub struct TracerRecord {
    pub label: usize,
    pub start: [f64; 3],
    pub samples: Vec<TracerSample>,
}

impl TracerRecord {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.time).collect()
    }
}

/// Sampled histories of a tracer set plus the per-time grid maximum of
/// `|v|`, which sets the degeneracy thresholds.
#[derive(Clone, Debug)]
pub struct TracerHistory {
    pub system: System,
    pub records: Vec<TracerRecord>,
    pub field_max: Vec<f64>,
}

impl TracerHistory {
    pub fn new(system: System, starts: &[[f64; 3]]) -> Self {
        TracerHistory {
            system,
            records: starts
                .iter()
                .enumerate()
                .map(|(label, s)| TracerRecord {
                    label,
                    start: *s,
                    samples: Vec::new(),
                })
                .collect(),
            field_max: Vec::new(),
        }
    }

    pub fn push(&mut self, samples: Vec<TracerSample>, field_max: f64) {
        for (r, s) in self.records.iter_mut().zip(samples) {
            r.samples.push(s);
        }
        self.field_max.push(field_max);
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.first().map(|r| r.times()).unwrap_or_default()
    }

    /// Largest grid `|v|` over the whole history.
    pub fn overall_field_max(&self) -> f64 {
        self.field_max.iter().fold(0.0, |a: f64, &b| a.max(b))
    }
}

// ---------------------------------------------------------------------------
// dynamical residuals

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualKind {
    /// `D_t|v| - alpha|v|`
    MagnitudeRate,
    /// `D_t|M v| + zeta.P v`
    StretchedMagnitudeRate,
    /// `D_t^2 log|v| - (|M xi|^2 - 2 alpha^2 - rho)`
    LogMagnitudeAcceleration,
    /// `|D_t v - M v|`
    VectorRate,
    /// `|D_t^2 v + P v|`
    VectorAcceleration,
    /// `xi.D_t xi` with `D_t xi` differenced along the trajectory.
    DirectionOrthogonality,
}

impl ResidualKind {
    pub const ALL: [ResidualKind; 6] = [
        ResidualKind::MagnitudeRate,
        ResidualKind::StretchedMagnitudeRate,
        ResidualKind::LogMagnitudeAcceleration,
        ResidualKind::VectorRate,
        ResidualKind::VectorAcceleration,
        ResidualKind::DirectionOrthogonality,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ResidualKind::MagnitudeRate => "magnitude-rate",
            ResidualKind::StretchedMagnitudeRate => "stretched-magnitude-rate",
            ResidualKind::LogMagnitudeAcceleration => "log-magnitude-acceleration",
            ResidualKind::VectorRate => "vector-rate",
            ResidualKind::VectorAcceleration => "vector-acceleration",
            ResidualKind::DirectionOrthogonality => "direction-orthogonality",
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ResidualOptions {
    /// Stencil accuracy (2 or 4).
    pub accuracy: usize,
    /// Samples with `|v| <= mask_factor * max|v|` are masked, and for the
    /// stretched-magnitude rate also those with `|M v| <= mask_factor * max|v|^2`.
    pub mask_factor: f64,
}

impl Default for ResidualOptions {
    fn default() -> Self {
        ResidualOptions {
            accuracy: 4,
            mask_factor: crate::diagnostics::DEFAULT_EPS_FACTOR,
        }
    }
}

/// Residual series of one tracer, one entry per kind in [`ResidualKind::ALL`].
#[derive(Clone, Debug)]
pub struct TracerResiduals {
    pub label: usize,
    pub series: Vec<(ResidualKind, Vec<Option<f64>>)>,
}

impl TracerResiduals {
    pub fn get(&self, kind: ResidualKind) -> &[Option<f64>] {
        &self.series.iter().find(|(k, _)| *k == kind).expect("all kinds present").1
    }
}

fn fd(times: &[f64], values: Vec<Option<f64>>, order: usize, acc: usize) -> Result<Vec<Option<f64>>> {
    material_derivative(&MaterialSeries::new(times.to_vec(), values), order, acc)
}

/// Residual series of every identity along one record.
pub fn dynamical_residuals(record: &TracerRecord, field_max: &[f64], opts: &ResidualOptions) -> Result<TracerResiduals> {
    let times = record.times();
    let n = times.len();
    if field_max.len() != n {
        return Err(Error::Sampling("field maxima do not match the samples".into()));
    }
    let acc = opts.accuracy;
    let q: Vec<PointQuantities> = record
        .samples
        .iter()
        .zip(field_max)
        .map(|(s, fm)| s.quantities(opts.mask_factor * fm))
        .collect();
    let live: Vec<bool> = q.iter().map(|q| !q.dirs.is_degenerate()).collect();
    // |M v| scales like |v|^2
    let stretched: Vec<bool> = q
        .iter()
        .zip(field_max)
        .map(|(q, fm)| q.dirs.zeta != Vector3::zeros() && q.mv.norm() > opts.mask_factor * fm * fm)
        .collect();
    let masked = |ok: &[bool], f: &dyn Fn(usize) -> f64| -> Vec<Option<f64>> {
        (0..n).map(|k| ok[k].then(|| f(k))).collect()
    };

    let d_norm = fd(&times, masked(&live, &|k| q[k].v_norm), 1, acc)?;
    let dd_log = fd(&times, masked(&live, &|k| q[k].v_norm.ln()), 2, acc)?;
    let all = vec![true; n];
    let mut dv = Vec::new();
    let mut ddv = Vec::new();
    let mut dxi = Vec::new();
    let mut dmv = Vec::new();
    for c in 0..3 {
        dmv.push(fd(&times, masked(&all, &|k| q[k].mv[c]), 1, acc)?);
        dv.push(fd(&times, masked(&all, &|k| record.samples[k].v[c]), 1, acc)?);
        ddv.push(fd(&times, masked(&all, &|k| record.samples[k].v[c]), 2, acc)?);
        dxi.push(fd(&times, masked(&live, &|k| q[k].dirs.xi[c]), 1, acc)?);
    }
    let vec3 = |s: &[Vec<Option<f64>>], k: usize| -> Option<Vector3<f64>> {
        Some(Vector3::new(s[0][k]?, s[1][k]?, s[2][k]?))
    };

    let mut series = Vec::new();
    for kind in ResidualKind::ALL {
        let r: Vec<Option<f64>> = (0..n)
            .map(|k| {
                let qk = &q[k];
                if !live[k] {
                    return None;
                }
                match kind {
                    ResidualKind::MagnitudeRate => d_norm[k].map(|d| d - qk.dirs.alpha * qk.v_norm),
                    // D_t|M v| = zeta.D_t(M v), smooth where |M v| is small
                    ResidualKind::StretchedMagnitudeRate => vec3(&dmv, k)
                        .filter(|_| stretched[k])
                        .map(|d| d.dot(&qk.dirs.zeta) + qk.dirs.align * qk.v_norm),
                    ResidualKind::LogMagnitudeAcceleration => dd_log[k].map(|d| d - qk.dirs.stretch_balance),
                    ResidualKind::VectorRate => vec3(&dv, k).map(|d| (d - qk.mv).norm()),
                    ResidualKind::VectorAcceleration => vec3(&ddv, k).map(|d| (d + qk.pv).norm()),
                    ResidualKind::DirectionOrthogonality => vec3(&dxi, k).map(|d| d.dot(&qk.dirs.xi)),
                }
            })
            .collect();
        series.push((kind, r));
    }
    Ok(TracerResiduals {
        label: record.label,
        series,
    })
}

/// Max `|r|` and mask counts for one kind over a tracer set.
#[derive(Clone, Debug, Serialize)]
pub struct ResidualSummary {
    pub kind: ResidualKind,
    pub max_abs: f64,
    pub worst_tracer: Option<usize>,
    pub evaluated: usize,
    pub masked: usize,
}

pub fn summarize_residuals(all: &[TracerResiduals]) -> Vec<ResidualSummary> {
    ResidualKind::ALL
        .iter()
        .map(|&kind| {
            let mut s = ResidualSummary {
                kind,
                max_abs: 0.0,
                worst_tracer: None,
                evaluated: 0,
                masked: 0,
            };
            for tr in all {
                for r in tr.get(kind) {
                    match r {
                        Some(v) => {
                            s.evaluated += 1;
                            if !(v.abs() <= s.max_abs) {
                                s.max_abs = v.abs();
                                s.worst_tracer = Some(tr.label);
                            }
                        }
                        None => s.masked += 1,
                    }
                }
            }
            s
        })
        .collect()
}

// ---------------------------------------------------------------------------
// growth bounds

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum BoundVariant {
    /// `(|v0| + |M0 v0| t) exp(int int [zeta.P xi]_-)`
    Lemma,
    /// `|v0| exp(alpha0 t + int int [|M xi|^2 - 2 alpha^2 - rho]_+)`
    DoubleExp,
    /// `|v0| exp(int int [|M xi|^2 - 2 alpha^2 - rho]_+)`, without the
    /// initial-rate term. Not a valid bound when `alpha0 > 0`; reported for
    /// comparison only.
    DoubleExpNoRate,
    /// `(|w0| + sqrt2 |S0 w0| t) exp(2 int_0^t int_0^s |P xi| e^{-(Z(s)-Z(r))} e^{-(X(t)-X(s))} dr ds)`
    /// with `Z`, `X` the running integrals of `|D_t zeta|`, `|D_t xi|`. Euler only.
    Damped,
}

impl BoundVariant {
    pub fn name(&self) -> &'static str {
        match self {
            BoundVariant::Lemma => "lemma",
            BoundVariant::DoubleExp => "double-exp",
            BoundVariant::DoubleExpNoRate => "double-exp-no-rate",
            BoundVariant::Damped => "damped",
        }
    }

    /// Whether a violation counts as a failure.
    pub fn is_asserted(&self) -> bool {
        !matches!(self, BoundVariant::DoubleExpNoRate)
    }

    pub fn for_system(system: System) -> &'static [BoundVariant] {
        match system {
            System::Euler3d => &[
                BoundVariant::Lemma,
                BoundVariant::DoubleExp,
                BoundVariant::DoubleExpNoRate,
                BoundVariant::Damped,
            ],
            System::Boussinesq2d => &[BoundVariant::Lemma, BoundVariant::DoubleExp, BoundVariant::DoubleExpNoRate],
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lemma" => Ok(BoundVariant::Lemma),
            "double-exp" => Ok(BoundVariant::DoubleExp),
            "double-exp-no-rate" => Ok(BoundVariant::DoubleExpNoRate),
            "damped" => Ok(BoundVariant::Damped),
            other => Err(Error::Config(format!("unknown bound variant `{other}`"))),
        }
    }
}

/// `rhs - |v(t)|` per sample; negative beyond tolerance is a violation.
#[derive(Clone, Debug)]
pub struct BoundMargins {
    pub variant: BoundVariant,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub margin: Vec<f64>,
}

impl BoundMargins {
    pub fn violations(&self, tolerance: f64) -> usize {
        self.margin.iter().filter(|m| !(**m >= -tolerance)).count()
    }

    pub fn min_margin(&self) -> f64 {
        self.margin.iter().fold(f64::INFINITY, |a, &b| a.min(b))
    }
}

/// Evaluates one growth bound along a record by fourth-order quadrature of
/// the sampled diagnostics. Equality cases are common (the double-exp bound
/// is attained while the stretch balance stays positive), so the rule must
/// be accurate beyond the check tolerance.
pub fn growth_bound_check(record: &TracerRecord, field_max: &[f64], variant: BoundVariant, system: System) -> Result<BoundMargins> {
    if variant == BoundVariant::Damped && system != System::Euler3d {
        return Err(Error::UnsupportedDimension { expected: 3, got: 2 });
    }
    let times = record.times();
    let h = uniform_step(&times)?;
    if field_max.len() != times.len() {
        return Err(Error::Sampling("field maxima do not match the samples".into()));
    }
    let q: Vec<PointQuantities> = record
        .samples
        .iter()
        .zip(field_max)
        .map(|(s, fm)| s.quantities(crate::diagnostics::DEFAULT_EPS_FACTOR * fm))
        .collect();
    let lhs: Vec<f64> = q.iter().map(|q| q.v_norm).collect();
    let t0 = times[0];
    let v0 = q[0].v_norm;
    let rhs: Vec<f64> = match variant {
        BoundVariant::Lemma => {
            let m: Vec<f64> = q.iter().map(|q| sharp_bracket(q.dirs.align, Sign::Minus)).collect();
            let big = cumulative_double_cubic(h, &m);
            let mv0 = q[0].mv.norm();
            times.iter().zip(&big).map(|(t, g)| (v0 + mv0 * (t - t0)) * g.exp()).collect()
        }
        BoundVariant::DoubleExp | BoundVariant::DoubleExpNoRate => {
            let m: Vec<f64> = q
                .iter()
                .map(|q| sharp_bracket(q.dirs.stretch_balance, Sign::Plus))
                .collect();
            let big = cumulative_double_cubic(h, &m);
            let a0 = if variant == BoundVariant::DoubleExp { q[0].dirs.alpha } else { 0.0 };
            times.iter().zip(&big).map(|(t, g)| v0 * (a0 * (t - t0) + g).exp()).collect()
        }
        BoundVariant::Damped => {
            let z = cumulative_cubic(h, &q.iter().map(|q| q.dt_zeta_norm).collect::<Vec<_>>());
            let x = cumulative_cubic(h, &q.iter().map(|q| q.dt_xi_norm).collect::<Vec<_>>());
            // inner(s) = e^{-Z(s)} int_0^s |P xi| e^{Z}
            let pz: Vec<f64> = q.iter().zip(&z).map(|(q, z)| q.pxi_norm * z.exp()).collect();
            let inner: Vec<f64> = cumulative_cubic(h, &pz)
                .iter()
                .zip(&z)
                .map(|(i, z)| i * (-z).exp())
                .collect();
            // outer(t) = e^{-X(t)} int_0^t inner e^{X}
            let ix: Vec<f64> = inner.iter().zip(&x).map(|(i, x)| i * x.exp()).collect();
            let outer: Vec<f64> = cumulative_cubic(h, &ix)
                .iter()
                .zip(&x)
                .map(|(o, x)| o * (-x).exp())
                .collect();
            let mv0 = q[0].mv.norm();
            let sqrt2 = std::f64::consts::SQRT_2;
            times
                .iter()
                .zip(&outer)
                .map(|(t, o)| (v0 + sqrt2 * mv0 * (t - t0)) * (2.0 * o).exp())
                .collect()
        }
    };
    let margin = rhs.iter().zip(&lhs).map(|(r, l)| r - l).collect();
    Ok(BoundMargins {
        variant,
        lhs,
        rhs,
        margin,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundSummary {
    pub variant: BoundVariant,
    pub asserted: bool,
    pub tolerance: f64,
    pub violations: usize,
    pub tracers_violating: usize,
    pub min_margin: f64,
    pub worst_tracer: Option<usize>,
}

/// Relative tolerance of the bound checks, scaled by the run's max `|v|`.
pub const BOUND_TOLERANCE_FACTOR: f64 = 1e-6;

pub fn summarize_bounds(all: &[Vec<BoundMargins>], field_max: f64) -> Vec<BoundSummary> {
    let tolerance = BOUND_TOLERANCE_FACTOR * field_max;
    let mut out: Vec<BoundSummary> = Vec::new();
    for (label, per) in all.iter().enumerate() {
        for b in per {
            let s = match out.iter_mut().find(|s| s.variant == b.variant) {
                Some(s) => s,
                None => {
                    out.push(BoundSummary {
                        variant: b.variant,
                        asserted: b.variant.is_asserted(),
                        tolerance,
                        violations: 0,
                        tracers_violating: 0,
                        min_margin: f64::INFINITY,
                        worst_tracer: None,
                    });
                    out.last_mut().expect("just pushed")
                }
            };
            let v = b.violations(tolerance);
            s.violations += v;
            s.tracers_violating += usize::from(v > 0);
            let m = b.min_margin();
            if m < s.min_margin {
                s.min_margin = m;
                s.worst_tracer = Some(label);
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// output

/// Per-tracer CSV: time, position, `|v|`, `alpha`, `rho`, `zeta.P xi`,
/// stretch balance, residuals and bound margins. Masked entries are empty.
pub fn tracer_csv(record: &TracerRecord, field_max: &[f64], residuals: &TracerResiduals, bounds: &[BoundMargins]) -> String {
    let mut out = String::from("time,x1,x2,x3,v_norm,alpha,rho,zeta_dot_p_xi,stretch_balance");
    for (kind, _) in &residuals.series {
        let _ = write!(out, ",residual_{}", kind.name().replace('-', "_"));
    }
    for b in bounds {
        let _ = write!(out, ",margin_{}", b.variant.name().replace('-', "_"));
    }
    out.push('\n');
    for (k, s) in record.samples.iter().enumerate() {
        let q = s.quantities(crate::diagnostics::DEFAULT_EPS_FACTOR * field_max[k]);
        let cols = [
            s.time,
            s.position[0],
            s.position[1],
            s.position[2],
            q.v_norm,
            q.dirs.alpha,
            q.dirs.rho,
            q.dirs.align,
            q.dirs.stretch_balance,
        ];
        let row: Vec<String> = cols
            .iter()
            .map(|v| fmt_f64(*v))
            .chain(residuals.series.iter().map(|(_, r)| r[k].map(fmt_f64).unwrap_or_default()))
            .chain(bounds.iter().map(|b| fmt_f64(b.margin[k])))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_tracer_csv(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::solve_pressure;
    use crate::field::VectorField;
    use crate::solver::{initial_condition, BoussinesqState, EulerState, Integrator, StepperConfig};
    use proptest::prelude::*;

    #[test]
    fn fornberg_matches_textbook_stencils() {
        let w = fornberg_weights(0.0, &[-1.0, 0.0, 1.0], 2);
        assert!((w[0][1] + 0.5).abs() < 1e-15 && (w[2][1] - 0.5).abs() < 1e-15);
        assert!((w[0][2] - 1.0).abs() < 1e-15 && (w[1][2] + 2.0).abs() < 1e-15);
        let w = fornberg_weights(0.0, &[-2.0, -1.0, 0.0, 1.0, 2.0], 1);
        let expect = [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0];
        for (wi, e) in w.iter().zip(expect) {
            assert!((wi[1] - e).abs() < 1e-15);
        }
    }

    #[test]
    fn derivatives_of_polynomials_are_exact() {
        let times: Vec<f64> = (0..9).map(|k| 0.1 * k as f64).collect();
        let f: Vec<f64> = times.iter().map(|t| t * t).collect();
        let s = MaterialSeries::dense(times.clone(), &f);
        for acc in [2, 4] {
            let d1 = material_derivative(&s, 1, acc).unwrap();
            let d2 = material_derivative(&s, 2, acc).unwrap();
            for (k, t) in times.iter().enumerate() {
                assert!((d1[k].unwrap() - 2.0 * t).abs() < 1e-12);
                assert!((d2[k].unwrap() - 2.0).abs() < 1e-10);
            }
        }
        let c = MaterialSeries::dense(times.clone(), &[3.0; 9]);
        assert!(material_derivative(&c, 1, 2).unwrap().iter().all(|d| d.unwrap().abs() < 1e-12));
    }

    #[test]
    fn too_few_samples() {
        let s = MaterialSeries::dense(vec![0.0, 0.1, 0.2, 0.3], &[0.0; 4]);
        assert!(matches!(material_derivative(&s, 1, 2), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn masks_propagate_to_stencils() {
        let times: Vec<f64> = (0..9).map(|k| k as f64).collect();
        let mut vals: Vec<Option<f64>> = times.iter().map(|t| Some(*t)).collect();
        vals[4] = None;
        let d = material_derivative(&MaterialSeries::new(times, vals), 1, 2).unwrap();
        assert!(d[3].is_none() && d[4].is_none() && d[5].is_none());
        assert!((d[1].unwrap() - 1.0).abs() < 1e-14 && d[7].is_some());
    }

    proptest! {
        #[test]
        fn fourth_order_stencils_converge(a in 0.5f64..2.0, phase in 0.0f64..6.0) {
            let f = |t: f64| (a * t + phase).sin();
            let err = |n: usize| -> f64 {
                let times: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
                let vals: Vec<f64> = times.iter().map(|t| f(*t)).collect();
                let d = material_derivative(&MaterialSeries::dense(times.clone(), &vals), 1, 4).unwrap();
                times.iter().zip(&d).map(|(t, d)| (d.unwrap() - a * (a * t + phase).cos()).abs()).fold(0.0, f64::max)
            };
            prop_assert!(err(20) / err(40) > 12.0);
        }
    }

    fn run_tracers(state: FlowState, dt: f64, steps: usize, starts: &[[f64; 3]]) -> TracerHistory {
        let g = *state.grid();
        let mut it = Integrator::new(&state, StepperConfig::new(dt).unwrap()).unwrap();
        let mut pos = starts.to_vec();
        let mut hist = TracerHistory::new(state.system(), starts);
        let sample = |s: &FlowState, pos: &[[f64; 3]], hist: &mut TracerHistory| {
            let p = solve_pressure(s.velocity(), s.theta()).unwrap();
            hist.push(sample_tracers(s, &p, pos).unwrap(), 1.0);
        };
        sample(&state, &pos, &mut hist);
        for _ in 0..steps {
            let stages = it.step().unwrap();
            advect_tracers(&g, &mut pos, &stages).unwrap();
            sample(&it.state(), &pos, &mut hist);
        }
        hist
    }

    #[test]
    fn zero_velocity_keeps_tracers_fixed() {
        let g = GridSpec::new(3, 16).unwrap();
        let s = FlowState::Euler(EulerState {
            time: 0.0,
            step: 0,
            u: VectorField::zeros(g),
        });
        let starts = seed_points(&g, 5, 1);
        let h = run_tracers(s, 0.1, 6, &starts);
        for r in &h.records {
            assert!(r.samples.iter().all(|s| s.position == r.start));
            let res = dynamical_residuals(r, &h.field_max, &ResidualOptions::default()).unwrap();
            assert!(res.series.iter().all(|(_, v)| v.iter().all(|x| x.is_none())));
            for b in BoundVariant::for_system(System::Euler3d) {
                let m = growth_bound_check(r, &h.field_max, *b, System::Euler3d).unwrap();
                assert!(m.margin.iter().all(|m| *m == 0.0));
            }
        }
    }

    #[test]
    fn steady_taylor_green_streamlines() {
        let g = GridSpec::new(2, 32).unwrap();
        let s = initial_condition("taylor-green-2d", &g, 0).unwrap();
        let starts = seed_points(&g, 10, 2);
        let h = run_tracers(s, 0.02, 50, &starts);
        let psi = |x: &[f64; 3]| -(x[0].cos() * x[1].cos());
        for r in &h.records {
            let p0 = psi(&r.start);
            for s in &r.samples {
                assert!((psi(&s.position) - p0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn uniform_shear_transport_is_exact() {
        // u = (-sin x2, 0): x2 is constant, x1 moves at a fixed speed
        let g = GridSpec::new(2, 16).unwrap();
        let u = VectorField::from_fn(g, |x| [-x[1].sin(), 0.0, 0.0]);
        let s = FlowState::Boussinesq(BoussinesqState {
            time: 0.0,
            step: 0,
            u,
            theta: ScalarField::zeros(g),
        });
        let start = [[1.0, 0.7, 0.0]];
        let mut it = Integrator::new(&s, StepperConfig::new(0.05).unwrap()).unwrap();
        let mut pos = start.to_vec();
        for _ in 0..20 {
            let st = it.step().unwrap();
            advect_tracers(&g, &mut pos, &st).unwrap();
        }
        let expect = 1.0 - 0.7_f64.sin() * 1.0;
        assert!((pos[0][0] - expect).abs() < 1e-12);
        assert!((pos[0][1] - 0.7).abs() < 1e-14);
    }
}
