//! Pointwise geometric diagnostics of the velocity gradient and the
//! pressure Hessian.
//!
//! Euler (3D): `S` is the strain, `xi = omega/|omega|`, `zeta = S xi/|S xi|`,
//! `alpha = xi.S xi`, `rho = xi.P xi`. Boussinesq (2D): the full velocity
//! gradient `U` replaces `S` and `grad^perp theta` replaces `omega`.
//!
//! Index conventions: the grid gradient is `T_ij = d_i u_j`. The Boussinesq
//! diagnostics use `U_ij = d_j u_i = T_ji`, the matrix for which
//! `D_t grad^perp theta = U grad^perp theta`.
//!
//! Degenerate points: when `|v| <= eps` every direction quantity is zero;
//! when `|M xi| <= eps` only `zeta` and `align` are zeroed.

use nalgebra::{Matrix2, Matrix3, SMatrix, SVector, Vector2, Vector3};
use rayon::prelude::*;

use crate::engine::{hessian, perp_gradient, Differentiable};
use crate::error::{Error, Result};
use crate::field::{Field, ScalarField, VectorField};
use crate::grid::GridSpec;

/// Relative degeneracy threshold; the absolute `eps` is this times the
/// field's max magnitude.
pub const DEFAULT_EPS_FACTOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

/// `[f]_+ = max(f, 0)`, `[f]_- = max(-f, 0)`.
pub fn sharp_bracket(f: f64, sign: Sign) -> f64 {
    match sign {
        Sign::Plus => f.max(0.0),
        Sign::Minus => (-f).max(0.0),
    }
}

/// Direction quantities shared by both systems.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Directions<const D: usize> {
    pub xi: SVector<f64, D>,
    pub zeta: SVector<f64, D>,
    pub alpha: f64,
    pub rho: f64,
    pub align: f64,
    pub stretch_balance: f64,
    /// `|M xi|` (0 at degenerate points).
    pub stretch_rate: f64,
}

impl<const D: usize> Directions<D> {
    fn zero() -> Self {
        Directions {
            xi: SVector::zeros(),
            zeta: SVector::zeros(),
            alpha: 0.0,
            rho: 0.0,
            align: 0.0,
            stretch_balance: 0.0,
            stretch_rate: 0.0,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.xi == SVector::<f64, D>::zeros()
    }
}

/// Directions of `v` under the matrix `m` with pressure Hessian `p`.
pub fn directions<const D: usize>(
    v: &SVector<f64, D>,
    m: &SMatrix<f64, D, D>,
    p: &SMatrix<f64, D, D>,
    eps: f64,
) -> Directions<D> {
    let vn = v.norm();
    if vn <= eps {
        return Directions::zero();
    }
    let xi = v / vn;
    let mxi = m * xi;
    let mn = mxi.norm();
    let alpha = xi.dot(&mxi);
    let pxi = p * xi;
    let rho = xi.dot(&pxi);
    let (zeta, align) = if mn <= eps {
        (SVector::zeros(), 0.0)
    } else {
        let zeta = mxi / mn;
        (zeta, zeta.dot(&pxi))
    };
    Directions {
        xi,
        zeta,
        alpha,
        rho,
        align,
        stretch_balance: mn * mn - 2.0 * alpha * alpha - rho,
        stretch_rate: mn,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EulerPointDiag {
    pub strain: Matrix3<f64>,
    pub rotation: Matrix3<f64>,
    pub vorticity: Vector3<f64>,
    pub pressure_hessian: Matrix3<f64>,
    pub dirs: Directions<3>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoussinesqPointDiag {
    /// `U_ij = d_j u_i`.
    pub velocity_gradient: Matrix2<f64>,
    /// `grad^perp theta`.
    pub perp_grad: Vector2<f64>,
    pub pressure_hessian: Matrix2<f64>,
    pub dirs: Directions<2>,
}

/// `S = (T + T^T)/2`, `Omega = (T - T^T)/2`.
pub fn strain_rotation_split(gradu: &Matrix3<f64>) -> (Matrix3<f64>, Matrix3<f64>) {
    let t = gradu.transpose();
    ((gradu + t) * 0.5, (gradu - t) * 0.5)
}

/// `omega_k = eps_ijk Omega_ij`.
pub fn vorticity_from_rotation(rotation: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let asym = (rotation + rotation.transpose()).amax();
    if asym > 1e-12 * rotation.amax().max(1.0) {
        return Err(Error::NotSkew(asym));
    }
    Ok(Vector3::new(
        rotation[(1, 2)] - rotation[(2, 1)],
        rotation[(2, 0)] - rotation[(0, 2)],
        rotation[(0, 1)] - rotation[(1, 0)],
    ))
}

/// `Omega_ij = eps_ijk omega_k / 2`.
pub fn rotation_from_vorticity(omega: &Vector3<f64>) -> Matrix3<f64> {
    0.5 * Matrix3::new(
        0.0, omega[2], -omega[1], //
        -omega[2], 0.0, omega[0], //
        omega[1], -omega[0], 0.0,
    )
}

pub fn euler_directions(omega: &Vector3<f64>, strain: &Matrix3<f64>, p: &Matrix3<f64>, eps: f64) -> EulerPointDiag {
    EulerPointDiag {
        strain: *strain,
        rotation: rotation_from_vorticity(omega),
        vorticity: *omega,
        pressure_hessian: *p,
        dirs: directions(omega, strain, p, eps),
    }
}

pub fn boussinesq_directions(g: &Vector2<f64>, u: &Matrix2<f64>, p: &Matrix2<f64>, eps: f64) -> BoussinesqPointDiag {
    BoussinesqPointDiag {
        velocity_gradient: *u,
        perp_grad: *g,
        pressure_hessian: *p,
        dirs: directions(g, u, p, eps),
    }
}

/// Euler diagnostics from the grid-convention gradient `T_ij = d_i u_j`.
pub fn euler_from_gradient(gradu: &Matrix3<f64>, p: &Matrix3<f64>, eps: f64) -> EulerPointDiag {
    let (s, omega_m) = strain_rotation_split(gradu);
    let omega = Vector3::new(
        omega_m[(1, 2)] - omega_m[(2, 1)],
        omega_m[(2, 0)] - omega_m[(0, 2)],
        omega_m[(0, 1)] - omega_m[(1, 0)],
    );
    EulerPointDiag {
        strain: s,
        rotation: omega_m,
        vorticity: omega,
        pressure_hessian: *p,
        dirs: directions(&omega, &s, p, eps),
    }
}

#[derive(Clone, Debug)]
pub enum DiagField {
    Euler { grid: GridSpec, points: Vec<EulerPointDiag> },
    Boussinesq { grid: GridSpec, points: Vec<BoussinesqPointDiag> },
}

impl DiagField {
    pub fn grid(&self) -> &GridSpec {
        match self {
            DiagField::Euler { grid, .. } | DiagField::Boussinesq { grid, .. } => grid,
        }
    }

    pub fn len(&self) -> usize {
        self.grid().npoints()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn map(&self, f: impl Fn(&Directions<3>) -> f64 + Sync, g: impl Fn(&Directions<2>) -> f64 + Sync) -> Vec<f64> {
        match self {
            DiagField::Euler { points, .. } => points.par_iter().map(|d| f(&d.dirs)).collect(),
            DiagField::Boussinesq { points, .. } => points.par_iter().map(|d| g(&d.dirs)).collect(),
        }
    }

    pub fn alpha(&self) -> Vec<f64> {
        self.map(|d| d.alpha, |d| d.alpha)
    }

    pub fn rho(&self) -> Vec<f64> {
        self.map(|d| d.rho, |d| d.rho)
    }

    pub fn align(&self) -> Vec<f64> {
        self.map(|d| d.align, |d| d.align)
    }

    pub fn stretch_balance(&self) -> Vec<f64> {
        self.map(|d| d.stretch_balance, |d| d.stretch_balance)
    }

    /// `[zeta.P xi]_-` per point.
    pub fn align_minus(&self) -> Vec<f64> {
        self.map(|d| sharp_bracket(d.align, Sign::Minus), |d| sharp_bracket(d.align, Sign::Minus))
    }

    /// `[|M xi|^2 - 2 alpha^2 - rho]_+` per point.
    pub fn stretch_plus(&self) -> Vec<f64> {
        self.map(
            |d| sharp_bracket(d.stretch_balance, Sign::Plus),
            |d| sharp_bracket(d.stretch_balance, Sign::Plus),
        )
    }

    /// `|omega|` (Euler) or `|grad^perp theta|` (Boussinesq).
    pub fn vector_magnitude(&self) -> Vec<f64> {
        match self {
            DiagField::Euler { points, .. } => points.par_iter().map(|d| d.vorticity.norm()).collect(),
            DiagField::Boussinesq { points, .. } => points.par_iter().map(|d| d.perp_grad.norm()).collect(),
        }
    }

    /// `|P xi|` per point (0 where degenerate).
    pub fn pressure_along_xi(&self) -> Vec<f64> {
        match self {
            DiagField::Euler { points, .. } => {
                points.par_iter().map(|d| (d.pressure_hessian * d.dirs.xi).norm()).collect()
            }
            DiagField::Boussinesq { points, .. } => {
                points.par_iter().map(|d| (d.pressure_hessian * d.dirs.xi).norm()).collect()
            }
        }
    }

    /// `|M v|`: `|S omega|` or `|U grad^perp theta|`.
    pub fn stretched_magnitude(&self) -> Vec<f64> {
        match self {
            DiagField::Euler { points, .. } => points.par_iter().map(|d| (d.strain * d.vorticity).norm()).collect(),
            DiagField::Boussinesq { points, .. } => {
                points.par_iter().map(|d| (d.velocity_gradient * d.perp_grad).norm()).collect()
            }
        }
    }
}

/// Per-point diagnostics over the grid. 3D grids give Euler diagnostics and
/// must not carry `theta`; 2D grids give Boussinesq diagnostics with
/// `theta = 0` when absent. `eps_factor` scales the max `|v|` into the
/// degeneracy threshold.
pub fn diag_field(
    u: &VectorField,
    p: &ScalarField,
    theta: Option<&ScalarField>,
    eps_factor: f64,
) -> Result<DiagField> {
    let g = *u.grid();
    g.check_same(p.grid())?;
    let gradu = u.gradient()?;
    let ph = hessian(p)?;
    match g.dim {
        3 => {
            if theta.is_some() {
                return Err(Error::UnsupportedDimension { expected: 2, got: 3 });
            }
            let omega: Vec<Vector3<f64>> = (0..g.npoints())
                .into_par_iter()
                .map(|idx| {
                    let t = Matrix3::from_fn(|i, j| gradu.component(i, j)[idx]);
                    let (_, r) = strain_rotation_split(&t);
                    Vector3::new(r[(1, 2)] - r[(2, 1)], r[(2, 0)] - r[(0, 2)], r[(0, 1)] - r[(1, 0)])
                })
                .collect();
            let vmax = omega.iter().fold(0.0_f64, |m, w| m.max(w.norm()));
            let eps = eps_factor * vmax;
            let points = (0..g.npoints())
                .into_par_iter()
                .map(|idx| {
                    let t = Matrix3::from_fn(|i, j| gradu.component(i, j)[idx]);
                    let pm = Matrix3::from_fn(|i, j| ph.component(i, j)[idx]);
                    euler_from_gradient(&t, &pm, eps)
                })
                .collect();
            Ok(DiagField::Euler { grid: g, points })
        }
        _ => {
            let gp = match theta {
                Some(th) => {
                    g.check_same(th.grid())?;
                    perp_gradient(th)?
                }
                None => VectorField::zeros(g),
            };
            let eps = eps_factor * gp.max_magnitude();
            let points = (0..g.npoints())
                .into_par_iter()
                .map(|idx| {
                    // U_ij = d_j u_i = T_ji
                    let um = Matrix2::from_fn(|i, j| gradu.component(j, i)[idx]);
                    let pm = Matrix2::from_fn(|i, j| ph.component(i, j)[idx]);
                    let gv = Vector2::new(gp.component(0)[idx], gp.component(1)[idx]);
                    boussinesq_directions(&gv, &um, &pm, eps)
                })
                .collect();
            Ok(DiagField::Boussinesq { grid: g, points })
        }
    }
}
