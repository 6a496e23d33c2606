//! Pseudo-spectral RK4 integration of 3D Euler and 2D Boussinesq on the
//! periodic box.
//!
//! The momentum nonlinearity is taken in rotational form `u x omega`, the
//! gradient part being removed by the Leray projection. Temperature is
//! advected in skew-symmetric form `(u.grad theta + div(u theta))/2`, which
//! conserves the discrete L2 norm of `theta` in the semi-discrete system.
//! Nonlinear terms are truncated by the grid's dealiasing mask, Nyquist
//! modes are dropped, and the mean of the momentum tendency is set to zero
//! (a uniform buoyancy force is balanced by pressure).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::engine::{divergence, spectral_tail_fraction};
use crate::error::{Error, Result};
use crate::fft::Transform;
use crate::field::{Field, ScalarField, VectorField};
use crate::grid::GridSpec;

/// Spectral tail fraction above which a state is flagged under-resolved.
pub const UNDER_RESOLVED_THRESHOLD: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum System {
    Euler3d,
    Boussinesq2d,
}

impl System {
    pub fn dim(&self) -> usize {
        match self {
            System::Euler3d => 3,
            System::Boussinesq2d => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            System::Euler3d => "euler3d",
            System::Boussinesq2d => "boussinesq2d",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "euler3d" => Ok(System::Euler3d),
            "boussinesq2d" => Ok(System::Boussinesq2d),
            other => Err(Error::Config(format!("unknown system `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepperConfig {
    pub dt: f64,
    /// Abort when `max|u| dt / dx` exceeds this.
    pub cfl_guard: Option<f64>,
}

impl StepperConfig {
    pub fn new(dt: f64) -> Result<Self> {
        let c = StepperConfig { dt, cfl_guard: None };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if let Some(c) = self.cfl_guard {
            if !(c > 0.0) {
                return Err(Error::Config(format!("cfl_guard must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EulerState {
    pub time: f64,
    pub step: usize,
    pub u: VectorField,
}

#[derive(Clone, Debug)]
pub struct BoussinesqState {
    pub time: f64,
    pub step: usize,
    pub u: VectorField,
    pub theta: ScalarField,
}

#[derive(Clone, Debug)]
pub enum FlowState {
    Euler(EulerState),
    Boussinesq(BoussinesqState),
}

impl FlowState {
    pub fn system(&self) -> System {
        match self {
            FlowState::Euler(_) => System::Euler3d,
            FlowState::Boussinesq(_) => System::Boussinesq2d,
        }
    }

    pub fn time(&self) -> f64 {
        match self {
            FlowState::Euler(s) => s.time,
            FlowState::Boussinesq(s) => s.time,
        }
    }

    pub fn step(&self) -> usize {
        match self {
            FlowState::Euler(s) => s.step,
            FlowState::Boussinesq(s) => s.step,
        }
    }

    pub fn velocity(&self) -> &VectorField {
        match self {
            FlowState::Euler(s) => &s.u,
            FlowState::Boussinesq(s) => &s.u,
        }
    }

    pub fn theta(&self) -> Option<&ScalarField> {
        match self {
            FlowState::Euler(_) => None,
            FlowState::Boussinesq(s) => Some(&s.theta),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        self.velocity().grid()
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.velocity().kinetic_energy()
    }

    /// Fraction of retained spectral energy in the outer third of the
    /// retained band (velocity and, for Boussinesq, temperature).
    pub fn tail_fraction(&self) -> f64 {
        let g = *self.grid();
        let u = self.velocity();
        let mut spectra: Vec<&[Complex64]> = (0..g.dim).map(|c| u.spectrum(c)).collect();
        if let Some(t) = self.theta() {
            spectra.push(t.spectrum());
        }
        spectral_tail_fraction(&g, &spectra)
    }

    pub fn max_divergence(&self) -> Result<f64> {
        Ok(divergence(self.velocity())?.max_abs())
    }
}

/// `sqrt(int theta^2)`.
pub fn theta_l2(theta: &ScalarField) -> f64 {
    let g = theta.grid();
    let s: f64 = theta.values().iter().map(|v| v * v).sum();
    (s * g.volume() / g.npoints() as f64).sqrt()
}

/// Velocity spectra at the four RK4 stage evaluations of one step, at
/// `t`, `t + dt/2`, `t + dt/2`, `t + dt`.
#[derive(Clone, Debug)]
pub struct StepStages {
    /// Index of the step these stages complete.
    pub step: usize,
    pub t0: f64,
    pub dt: f64,
    pub velocity: [Vec<Vec<Complex64>>; 4],
}

#[derive(Clone, Debug)]
struct Spectral {
    u: Vec<Vec<Complex64>>,
    theta: Option<Vec<Complex64>>,
}

impl Spectral {
    fn axpy(&self, a: f64, k: &Spectral) -> Spectral {
        let comb = |x: &[Complex64], y: &[Complex64]| -> Vec<Complex64> {
            x.par_iter().zip(y.par_iter()).map(|(x, y)| x + y * a).collect()
        };
        Spectral {
            u: self.u.iter().zip(&k.u).map(|(x, y)| comb(x, y)).collect(),
            theta: self.theta.as_ref().zip(k.theta.as_ref()).map(|(x, y)| comb(x, y)),
        }
    }
}

/// Precomputed wavevectors and retained-mode mask for one grid.
#[derive(Clone, Debug)]
struct Operators {
    grid: GridSpec,
    transform: Transform,
    k: Vec<[f64; 3]>,
    keep: Vec<bool>,
}

impl Operators {
    fn new(grid: &GridSpec) -> Self {
        let k0 = grid.k0();
        let np = grid.npoints();
        let mut k = Vec::with_capacity(np);
        let mut keep = Vec::with_capacity(np);
        for idx in 0..np {
            let m = grid.unravel(idx);
            let ki = grid.int_wavevector(idx);
            let nyq = (0..grid.dim).any(|a| grid.is_nyquist(m[a]));
            keep.push(!nyq && grid.keeps(ki));
            k.push([k0 * ki[0] as f64, k0 * ki[1] as f64, k0 * ki[2] as f64]);
        }
        Operators {
            grid: *grid,
            transform: Transform::new(grid),
            k,
            keep,
        }
    }

    fn truncate(&self, s: &mut [Complex64]) {
        s.par_iter_mut()
            .zip(self.keep.par_iter())
            .for_each(|(z, &keep)| {
                if !keep {
                    *z = Complex64::default();
                }
            });
    }

    fn deriv(&self, s: &[Complex64], axis: usize) -> Vec<Complex64> {
        s.par_iter()
            .zip(self.k.par_iter())
            .map(|(z, k)| z * Complex64::new(0.0, k[axis]))
            .collect()
    }

    /// Truncate, remove the mean and project onto divergence-free fields.
    fn project(&self, n: &mut [Vec<Complex64>]) {
        let d = self.grid.dim;
        let np = self.grid.npoints();
        let mut cols: Vec<Vec<Complex64>> = n.to_vec();
        let out: Vec<[Complex64; 3]> = (0..np)
            .into_par_iter()
            .map(|idx| {
                let mut v = [Complex64::default(); 3];
                if !self.keep[idx] || idx == 0 {
                    return v;
                }
                let k = self.k[idx];
                let k2: f64 = k[..d].iter().map(|x| x * x).sum();
                let mut kn = Complex64::default();
                for a in 0..d {
                    v[a] = cols[a][idx];
                    kn += v[a] * k[a];
                }
                for a in 0..d {
                    v[a] -= kn * (k[a] / k2);
                }
                v
            })
            .collect();
        for (a, col) in cols.iter_mut().enumerate() {
            col.par_iter_mut().zip(out.par_iter()).for_each(|(z, v)| *z = v[a]);
        }
        n.clone_from_slice(&cols);
    }

    fn rhs(&self, s: &Spectral) -> Spectral {
        let g = &self.grid;
        let t = &self.transform;
        let u: Vec<Vec<f64>> = s.u.iter().map(|c| t.inverse_real(c)).collect();
        let np = g.npoints();
        let mut n: Vec<Vec<f64>> = if g.dim == 3 {
            let curl = |i: usize, j: usize| -> Vec<Complex64> {
                let a = self.deriv(&s.u[j], i);
                let b = self.deriv(&s.u[i], j);
                a.par_iter().zip(b.par_iter()).map(|(a, b)| a - b).collect()
            };
            let w: Vec<Vec<f64>> = [curl(1, 2), curl(2, 0), curl(0, 1)]
                .iter()
                .map(|c| t.inverse_real(c))
                .collect();
            let cross = |i: usize, j: usize| -> Vec<f64> {
                (0..np).into_par_iter().map(|p| u[i][p] * w[j][p] - u[j][p] * w[i][p]).collect()
            };
            vec![cross(1, 2), cross(2, 0), cross(0, 1)]
        } else {
            let a = self.deriv(&s.u[1], 0);
            let b = self.deriv(&s.u[0], 1);
            let w = t.inverse_real(&a.par_iter().zip(b.par_iter()).map(|(a, b)| a - b).collect::<Vec<_>>());
            vec![
                (0..np).into_par_iter().map(|p| u[1][p] * w[p]).collect(),
                (0..np).into_par_iter().map(|p| -u[0][p] * w[p]).collect(),
            ]
        };
        let mut theta_rhs = None;
        if let Some(th) = &s.theta {
            let theta = t.inverse_real(th);
            n[1].par_iter_mut().zip(theta.par_iter()).for_each(|(n, th)| *n += th);
            let mut adv = vec![0.0; np];
            let mut flux_div = vec![Complex64::default(); np];
            for a in 0..g.dim {
                let dth = t.inverse_real(&self.deriv(th, a));
                adv.par_iter_mut()
                    .zip(dth.par_iter().zip(u[a].par_iter()))
                    .for_each(|(acc, (d, ua))| *acc += ua * d);
                let flux: Vec<f64> = u[a].par_iter().zip(theta.par_iter()).map(|(ua, th)| ua * th).collect();
                let df = self.deriv(&t.forward_real(&flux), a);
                flux_div.par_iter_mut().zip(df.par_iter()).for_each(|(acc, d)| *acc += d);
            }
            let mut r: Vec<Complex64> = t
                .forward_real(&adv)
                .par_iter()
                .zip(flux_div.par_iter())
                .map(|(a, f)| -(a + f) * 0.5)
                .collect();
            self.truncate(&mut r);
            theta_rhs = Some(r);
        }
        let mut nh: Vec<Vec<Complex64>> = n.iter_mut().map(|c| t.forward_real(c)).collect();
        self.project(&mut nh);
        Spectral { u: nh, theta: theta_rhs }
    }
}

/// RK4 integrator that owns the spectral state between steps.
#[derive(Clone, Debug)]
pub struct Integrator {
    ops: Operators,
    config: StepperConfig,
    system: System,
    state: Spectral,
    time: f64,
    step: usize,
    // times are t_start + (step - step_start) dt, free of accumulated rounding
    t_start: f64,
    step_start: usize,
}

impl Integrator {
    pub fn new(initial: &FlowState, config: StepperConfig) -> Result<Self> {
        config.validate()?;
        let g = *initial.grid();
        if g.dim != initial.system().dim() {
            return Err(Error::UnsupportedDimension {
                expected: initial.system().dim(),
                got: g.dim,
            });
        }
        let ops = Operators::new(&g);
        let u = initial.velocity();
        u.data().check_finite("velocity")?;
        let mut us: Vec<Vec<Complex64>> = (0..g.dim).map(|c| u.spectrum(c).to_vec()).collect();
        for c in us.iter_mut() {
            ops.truncate(c);
        }
        let theta = initial.theta().map(|th| {
            let mut s = th.spectrum().to_vec();
            ops.truncate(&mut s);
            s
        });
        Ok(Integrator {
            ops,
            config,
            system: initial.system(),
            state: Spectral { u: us, theta },
            time: initial.time(),
            step: initial.step(),
            t_start: initial.time(),
            step_start: initial.step(),
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn config(&self) -> &StepperConfig {
        &self.config
    }

    pub fn grid(&self) -> &GridSpec {
        &self.ops.grid
    }

    pub fn velocity_spectra(&self) -> &[Vec<Complex64>] {
        &self.state.u
    }

    pub fn state(&self) -> FlowState {
        let g = self.ops.grid;
        let u = VectorField::from_spectra(g, self.state.u.clone());
        match &self.state.theta {
            None => FlowState::Euler(EulerState {
                time: self.time,
                step: self.step,
                u,
            }),
            Some(th) => FlowState::Boussinesq(BoussinesqState {
                time: self.time,
                step: self.step,
                u,
                theta: ScalarField::from_spectrum(g, th.clone()),
            }),
        }
    }

    fn max_speed(&self) -> f64 {
        let t = &self.ops.transform;
        let u: Vec<Vec<f64>> = self.state.u.iter().map(|c| t.inverse_real(c)).collect();
        (0..self.ops.grid.npoints())
            .into_par_iter()
            .map(|p| u.iter().map(|c| c[p] * c[p]).sum::<f64>().sqrt())
            .reduce(|| 0.0, f64::max)
    }

    /// Advances one step and returns the stage velocities used.
    pub fn step(&mut self) -> Result<StepStages> {
        let dt = self.config.dt;
        let step = self.step + 1;
        if let Some(limit) = self.config.cfl_guard {
            let cfl = self.max_speed() * dt / self.ops.grid.spacing();
            if cfl > limit {
                return Err(Error::Cfl { step, cfl, limit });
            }
        }
        let s1 = self.state.clone();
        let k1 = self.ops.rhs(&s1);
        let s2 = s1.axpy(0.5 * dt, &k1);
        let k2 = self.ops.rhs(&s2);
        let s3 = s1.axpy(0.5 * dt, &k2);
        let k3 = self.ops.rhs(&s3);
        let s4 = s1.axpy(dt, &k3);
        let k4 = self.ops.rhs(&s4);
        let next = s1
            .axpy(dt / 6.0, &k1)
            .axpy(dt / 3.0, &k2)
            .axpy(dt / 3.0, &k3)
            .axpy(dt / 6.0, &k4);
        let finite = next
            .u
            .iter()
            .chain(next.theta.iter())
            .all(|c| c.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
        if !finite {
            return Err(Error::Blowup { step });
        }
        let stages = StepStages {
            step,
            t0: self.time,
            dt,
            velocity: [s1.u, s2.u, s3.u, s4.u],
        };
        self.state = next;
        self.step = step;
        self.time = self.t_start + (step - self.step_start) as f64 * dt;
        Ok(stages)
    }

    /// Runs until `t_end` (the last step lands on `t_end` up to rounding).
    pub fn advance_to(&mut self, t_end: f64) -> Result<()> {
        while self.time < t_end - 0.5 * self.config.dt {
            self.step()?;
        }
        Ok(())
    }

    pub fn system(&self) -> System {
        self.system
    }
}

/// One RK4 step of the projected Euler equations.
pub fn step_euler(state: &EulerState, config: &StepperConfig) -> Result<EulerState> {
    let mut it = Integrator::new(&FlowState::Euler(state.clone()), *config)?;
    it.step()?;
    match it.state() {
        FlowState::Euler(s) => Ok(s),
        FlowState::Boussinesq(_) => unreachable!("integrator keeps the system"),
    }
}

/// One RK4 step of the Boussinesq system.
pub fn step_boussinesq(state: &BoussinesqState, config: &StepperConfig) -> Result<BoussinesqState> {
    let mut it = Integrator::new(&FlowState::Boussinesq(state.clone()), *config)?;
    it.step()?;
    match it.state() {
        FlowState::Boussinesq(s) => Ok(s),
        FlowState::Euler(_) => unreachable!("integrator keeps the system"),
    }
}

pub const INITIAL_CONDITIONS: [&str; 5] = [
    "taylor-green-2d",
    "taylor-green-3d",
    "boussinesq-bubble",
    "boussinesq-taylor-green",
    "random-band-limited",
];

/// Named initial states. On a 3D grid `taylor-green-2d` is the
/// z-independent embedding; the Boussinesq variants need a 2D grid.
pub fn initial_condition(name: &str, grid: &GridSpec, seed: u64) -> Result<FlowState> {
    grid.validate()?;
    let g = *grid;
    let need2 = || {
        if g.dim != 2 {
            Err(Error::UnsupportedDimension { expected: 2, got: g.dim })
        } else {
            Ok(())
        }
    };
    let tg2 = |x: [f64; 3]| [x[0].cos() * x[1].sin(), -x[0].sin() * x[1].cos(), 0.0];
    let state = match name {
        "taylor-green-2d" => {
            let u = VectorField::from_fn(g, tg2);
            wrap(u, (g.dim == 2).then(|| ScalarField::zeros(g)))
        }
        "taylor-green-3d" => {
            if g.dim != 3 {
                return Err(Error::UnsupportedDimension { expected: 3, got: g.dim });
            }
            let u = VectorField::from_fn(g, |x| {
                [
                    x[0].sin() * x[1].cos() * x[2].cos(),
                    -x[0].cos() * x[1].sin() * x[2].cos(),
                    0.0,
                ]
            });
            wrap(u, None)
        }
        "boussinesq-bubble" => {
            need2()?;
            let theta = ScalarField::from_fn(g, |x| x[0].sin() * x[1].sin());
            wrap(VectorField::zeros(g), Some(theta))
        }
        "boussinesq-taylor-green" => {
            need2()?;
            let theta = ScalarField::from_fn(g, |x| 0.5 * (x[0].cos() + (x[1] + 0.5).sin()));
            wrap(VectorField::from_fn(g, tg2), Some(theta))
        }
        "random-band-limited" => {
            let (u, theta) = random_band_limited(&g, seed);
            wrap(u, theta)
        }
        other => return Err(Error::UnknownInitialCondition(other.to_string())),
    };
    Ok(state)
}

fn wrap(u: VectorField, theta: Option<ScalarField>) -> FlowState {
    match theta {
        Some(theta) => FlowState::Boussinesq(BoussinesqState {
            time: 0.0,
            step: 0,
            u,
            theta,
        }),
        None => FlowState::Euler(EulerState { time: 0.0, step: 0, u }),
    }
}

/// Largest wavenumber component of the random band-limited states.
pub const RANDOM_BAND: i64 = 3;

/// Divergence-free random velocity with modes `|k_a| <= RANDOM_BAND`,
/// amplitudes decaying like `exp(-|k|^2/4)`, normalized to `max|u| = 1`.
/// 2D grids also get a random temperature of the same band, `max|theta| = 1`.
fn random_band_limited(g: &GridSpec, seed: u64) -> (VectorField, Option<ScalarField>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = RANDOM_BAND;
    let mut modes = Vec::new();
    let range = |on: bool| if on { -b..=b } else { 0..=0 };
    for k0 in range(true) {
        for k1 in range(true) {
            for k2 in range(g.dim == 3) {
                let k = [k0, k1, k2];
                // half space: first nonzero component positive
                let first = k.iter().find(|&&c| c != 0);
                if first.is_some_and(|&c| c > 0) {
                    modes.push(k);
                }
            }
        }
    }
    let ncomp = g.dim + usize::from(g.dim == 2);
    // (k, cos amplitudes, sin amplitudes) per component
    let coefs: Vec<([i64; 3], Vec<f64>, Vec<f64>)> = modes
        .into_iter()
        .map(|k| {
            let k2 = k.iter().map(|c| (c * c) as f64).sum::<f64>();
            let amp = (-k2 / 4.0).exp();
            let a = (0..ncomp).map(|_| amp * rng.random_range(-1.0..1.0)).collect();
            let s = (0..ncomp).map(|_| amp * rng.random_range(-1.0..1.0)).collect();
            (k, a, s)
        })
        .collect();
    let raw: Vec<Vec<f64>> = (0..ncomp)
        .map(|c| {
            (0..g.npoints())
                .into_par_iter()
                .map(|idx| {
                    let x = g.position(idx);
                    coefs
                        .iter()
                        .map(|(k, a, s)| {
                            let ph = (0..g.dim).map(|d| k[d] as f64 * g.k0() * x[d]).sum::<f64>();
                            a[c] * ph.cos() + s[c] * ph.sin()
                        })
                        .sum::<f64>()
                })
                .collect()
        })
        .collect();
    let ops = Operators::new(g);
    let mut spectra: Vec<Vec<Complex64>> = raw[..g.dim].iter().map(|c| ops.transform.forward_real(c)).collect();
    ops.project(&mut spectra);
    let u = VectorField::from_spectra(*g, spectra);
    let umax = u.max_magnitude();
    let scaled: Vec<Vec<f64>> = (0..g.dim)
        .map(|c| u.component(c).iter().map(|v| v / umax).collect())
        .collect();
    let u = VectorField::new(*g, scaled).expect("shape preserved");
    let theta = (g.dim == 2).then(|| {
        let th = &raw[2];
        let m = th.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        ScalarField::new(*g, th.iter().map(|v| v / m).collect()).expect("shape preserved")
    });
    (u, theta)
}
