//! Spectral differentiation, pressure inversion and region norms.
//!
//! Conventions: the velocity gradient tensor is `T_ij = d_i u_j`. Odd
//! derivatives zero the Nyquist mode along the differentiated axis. First
//! derivatives are truncated by the grid's dealiasing mask; the Poisson
//! inversion and the Hessian act on every mode so that
//! `tr(hessian(p))` reproduces the pressure source exactly.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::Transform;
use crate::field::{Field, ScalarField, TensorField, VectorField};
use crate::grid::GridSpec;

/// Absolute divergence tolerance accepted by [`solve_pressure`], scaled by
/// `max(1, max|u|)`.
pub const DIVERGENCE_TOLERANCE: f64 = 1e-8;

/// `i k_axis f` with the dealias mask applied.
pub(crate) fn derivative_spectrum(grid: &GridSpec, spec: &[Complex64], axis: usize) -> Vec<Complex64> {
    let k0 = grid.k0();
    spec.par_iter()
        .enumerate()
        .map(|(idx, &z)| {
            let m = grid.unravel(idx);
            let k = grid.int_wavevector(idx);
            if grid.is_nyquist(m[axis]) || !grid.keeps(k) {
                Complex64::default()
            } else {
                z * Complex64::new(0.0, k0 * k[axis] as f64)
            }
        })
        .collect()
}

/// `d_a d_b f` on every mode (Nyquist zeroed only for mixed derivatives).
fn second_derivative_spectrum(grid: &GridSpec, spec: &[Complex64], a: usize, b: usize) -> Vec<Complex64> {
    let k0 = grid.k0();
    spec.par_iter()
        .enumerate()
        .map(|(idx, &z)| {
            let m = grid.unravel(idx);
            if a != b && (grid.is_nyquist(m[a]) || grid.is_nyquist(m[b])) {
                return Complex64::default();
            }
            let k = grid.int_wavevector(idx);
            z * (-(k0 * k[a] as f64) * (k0 * k[b] as f64))
        })
        .collect()
}

/// Fields that have a spectral gradient.
pub trait Differentiable: Field {
    type Gradient;

    fn gradient(&self) -> Result<Self::Gradient>;
}

impl Differentiable for ScalarField {
    type Gradient = VectorField;

    fn gradient(&self) -> Result<VectorField> {
        self.data().check_finite("scalar field")?;
        let g = *self.grid();
        let spectra = (0..g.dim)
            .map(|a| derivative_spectrum(&g, self.spectrum(), a))
            .collect();
        Ok(VectorField::from_spectra(g, spectra))
    }
}

impl Differentiable for VectorField {
    type Gradient = TensorField;

    /// `T_ij = d_i u_j`.
    fn gradient(&self) -> Result<TensorField> {
        self.data().check_finite("vector field")?;
        let g = *self.grid();
        let t = Transform::new(&g);
        let mut comps = Vec::with_capacity(g.dim * g.dim);
        for i in 0..g.dim {
            for j in 0..g.dim {
                comps.push(t.inverse_real(&derivative_spectrum(&g, self.spectrum(j), i)));
            }
        }
        TensorField::new(g, comps)
    }
}

pub fn gradient<F: Differentiable>(f: &F) -> Result<F::Gradient> {
    f.gradient()
}

/// Spectral divergence of a vector field.
pub fn divergence(u: &VectorField) -> Result<ScalarField> {
    u.data().check_finite("velocity")?;
    let g = *u.grid();
    let k0 = g.k0();
    let mut acc = vec![Complex64::default(); g.npoints()];
    for a in 0..g.dim {
        let s = u.spectrum(a);
        acc.par_iter_mut().enumerate().for_each(|(idx, z)| {
            let m = g.unravel(idx);
            if !g.is_nyquist(m[a]) {
                let k = g.int_wavenumber(m[a]);
                *z += s[idx] * Complex64::new(0.0, k0 * k as f64);
            }
        });
    }
    Ok(ScalarField::from_spectrum(g, acc))
}

/// Pressure source `-d_i u_j d_j u_i` (plus `d_2 theta` with buoyancy),
/// sampled on the grid.
pub fn pressure_source(u: &VectorField, theta: Option<&ScalarField>) -> Result<ScalarField> {
    let g = *u.grid();
    let grad = u.gradient()?;
    let np = g.npoints();
    let mut src: Vec<f64> = (0..np)
        .into_par_iter()
        .map(|idx| {
            let mut s = 0.0;
            for i in 0..g.dim {
                for j in 0..g.dim {
                    s -= grad.component(i, j)[idx] * grad.component(j, i)[idx];
                }
            }
            s
        })
        .collect();
    if let Some(theta) = theta {
        g.check_same(theta.grid())?;
        if g.dim != 2 {
            return Err(Error::UnsupportedDimension { expected: 2, got: g.dim });
        }
        let d2 = Transform::new(&g).inverse_real(&derivative_spectrum(&g, theta.spectrum(), 1));
        for (s, d) in src.iter_mut().zip(d2) {
            *s += d;
        }
    }
    ScalarField::new(g, src)
}

/// Mean-zero pressure with `lap p = -d_i u_j d_j u_i (+ d_2 theta)`.
pub fn solve_pressure(u: &VectorField, theta: Option<&ScalarField>) -> Result<ScalarField> {
    let g = *u.grid();
    let div = divergence(u)?;
    let (index, max) = div
        .values()
        .iter()
        .enumerate()
        .fold((0, 0.0_f64), |(bi, bm), (i, v)| if v.abs() > bm { (i, v.abs()) } else { (bi, bm) });
    let tolerance = DIVERGENCE_TOLERANCE * u.max_magnitude().max(1.0);
    if max > tolerance {
        return Err(Error::Divergence {
            max,
            index,
            position: g.position(index)[..g.dim].to_vec(),
            tolerance,
        });
    }
    let source = pressure_source(u, theta)?;
    Ok(invert_laplacian(&g, source.spectrum()))
}

/// Mean-zero solution of `lap p = s` given the spectrum of `s`.
pub fn invert_laplacian(grid: &GridSpec, source: &[Complex64]) -> ScalarField {
    let k0 = grid.k0();
    let spec = source
        .par_iter()
        .enumerate()
        .map(|(idx, &z)| {
            let k = grid.int_wavevector(idx);
            let k2: f64 = k.iter().map(|&kk| (k0 * kk as f64).powi(2)).sum();
            if k2 == 0.0 {
                Complex64::default()
            } else {
                -z / k2
            }
        })
        .collect();
    ScalarField::from_spectrum(*grid, spec)
}

/// `P_ij = d_i d_j p`, assembled once per unordered pair.
pub fn hessian(p: &ScalarField) -> Result<TensorField> {
    p.data().check_finite("pressure")?;
    let g = *p.grid();
    let t = Transform::new(&g);
    let d = g.dim;
    let mut comps = vec![Vec::new(); d * d];
    for i in 0..d {
        for j in i..d {
            let c = t.inverse_real(&second_derivative_spectrum(&g, p.spectrum(), i, j));
            if i != j {
                comps[j * d + i] = c.clone();
            }
            comps[i * d + j] = c;
        }
    }
    TensorField::new(g, comps)
}

/// `(-d_2 theta, d_1 theta)`; 2D only.
pub fn perp_gradient(theta: &ScalarField) -> Result<VectorField> {
    let g = *theta.grid();
    if g.dim != 2 {
        return Err(Error::UnsupportedDimension { expected: 2, got: g.dim });
    }
    let grad = theta.gradient()?;
    let perp = vec![grad.component(1).iter().map(|v| -v).collect(), grad.component(0).to_vec()];
    VectorField::new(g, perp)
}

/// A spatial region for localized norms. Balls wrap periodically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Region {
    Global,
    Ball { center: Vec<f64>, radius: f64 },
}

impl Region {
    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        match self {
            Region::Global => Ok(()),
            Region::Ball { center, radius } => {
                if center.len() != grid.dim {
                    return Err(Error::Config(format!(
                        "ball center has {} coordinates, grid dim is {}",
                        center.len(),
                        grid.dim
                    )));
                }
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(Error::Config(format!("ball radius must be positive, got {radius}")));
                }
                Ok(())
            }
        }
    }

    /// Grid points inside the region.
    pub fn indices(&self, grid: &GridSpec) -> Result<Vec<usize>> {
        self.validate(grid)?;
        match self {
            Region::Global => Ok((0..grid.npoints()).collect()),
            Region::Ball { center, radius } => {
                if *radius >= grid.length / 2.0 {
                    return Ok((0..grid.npoints()).collect());
                }
                let r2 = radius * radius;
                let inside: Vec<usize> = (0..grid.npoints())
                    .filter(|&idx| {
                        let d = grid.periodic_delta(center, &grid.position(idx));
                        d.iter().map(|v| v * v).sum::<f64>() <= r2
                    })
                    .collect();
                if inside.is_empty() {
                    return Err(Error::EmptyRegion {
                        radius: *radius,
                        spacing: grid.spacing(),
                    });
                }
                Ok(inside)
            }
        }
    }
}

/// Max pointwise magnitude over the grid points of a (periodic) ball. A
/// radius of at least half the period covers the whole box.
pub fn region_sup_norm<F: Field>(f: &F, center: &[f64], radius: f64) -> Result<f64> {
    let region = Region::Ball {
        center: center.to_vec(),
        radius,
    };
    let data = f.data();
    sup_over(data.grid(), &region, |idx| data.magnitude_at(idx))
}

/// Max of `value(idx)` over the grid points of `region`.
pub fn sup_over(grid: &GridSpec, region: &Region, value: impl Fn(usize) -> f64 + Sync) -> Result<f64> {
    let idx = region.indices(grid)?;
    Ok(idx.par_iter().map(|&i| value(i)).reduce(|| 0.0, f64::max))
}

/// How much of the spectrum lives in the outer third of the retained band.
///
/// Returns `sum |f_k|^2` over retained modes with `max_a |k_a| > 2/3 kmax`,
/// divided by the total over retained modes (0 for a zero field).
pub fn spectral_tail_fraction(grid: &GridSpec, spectra: &[&[Complex64]]) -> f64 {
    let kmax = grid.max_kept_wavenumber() as f64;
    let edge = 2.0 / 3.0 * kmax;
    let mut tail = 0.0;
    let mut total = 0.0;
    for s in spectra {
        for (idx, z) in s.iter().enumerate() {
            let k = grid.int_wavevector(idx);
            if idx == 0 || !grid.keeps(k) {
                continue;
            }
            let e = z.norm_sqr();
            total += e;
            if k[..grid.dim].iter().any(|&kk| kk.abs() as f64 > edge) {
                tail += e;
            }
        }
    }
    if total == 0.0 {
        0.0
    } else {
        tail / total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn g2(n: usize) -> GridSpec {
        GridSpec::new(2, n).unwrap()
    }
    fn g3(n: usize) -> GridSpec {
        GridSpec::new(3, n).unwrap()
    }

    #[test]
    fn constant_has_zero_gradient() {
        let f = ScalarField::from_fn(g3(16), |_| 4.2);
        let grad = f.gradient().unwrap();
        assert!(grad.values().iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn sine_derivative_is_cosine() {
        let grid = g3(16);
        let f = ScalarField::from_fn(grid, |x| x[0].sin());
        let grad = f.gradient().unwrap();
        for idx in 0..grid.npoints() {
            let x = grid.position(idx);
            assert!((grad.component(0)[idx] - x[0].cos()).abs() <= 1e-12);
            assert!(grad.component(1)[idx].abs() <= 1e-12);
            assert!(grad.component(2)[idx].abs() <= 1e-12);
        }
    }

    #[test]
    fn velocity_gradient_index_convention() {
        let grid = g3(16);
        let u = VectorField::from_fn(grid, |x| [-x[1].sin(), x[0].sin(), 0.0]);
        let t = u.gradient().unwrap();
        for idx in 0..grid.npoints() {
            let x = grid.position(idx);
            // (grad u)_{21} = d_2 u_1, (grad u)_{12} = d_1 u_2
            assert!((t.component(1, 0)[idx] + x[1].cos()).abs() <= 1e-12);
            assert!((t.component(0, 1)[idx] - x[0].cos()).abs() <= 1e-12);
            assert!(t.component(0, 0)[idx].abs() <= 1e-12);
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut f = ScalarField::zeros(g2(8));
        f.values_mut()[5] = f64::NAN;
        assert!(matches!(f.gradient(), Err(Error::NonFinite { index: 5, .. })));
    }

    #[test]
    fn zero_velocity_zero_pressure() {
        let p = solve_pressure(&VectorField::zeros(g3(8)), None).unwrap();
        assert!(p.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn shear_flow_has_zero_pressure() {
        let u = VectorField::from_fn(g3(16), |x| [x[1].sin(), 0.0, 0.0]);
        let p = solve_pressure(&u, None).unwrap();
        assert!(p.max_abs() < 1e-14);
    }

    #[test]
    fn taylor_green_pressure_and_hessian() {
        let grid = g2(64);
        let u = VectorField::from_fn(grid, |x| [x[0].cos() * x[1].sin(), -x[0].sin() * x[1].cos(), 0.0]);
        let p = solve_pressure(&u, None).unwrap();
        let hp = hessian(&p).unwrap();
        for idx in 0..grid.npoints() {
            let x = grid.position(idx);
            let exact = -((2.0 * x[0]).cos() + (2.0 * x[1]).cos()) / 4.0;
            assert!((p.values()[idx] - exact).abs() <= 1e-10);
            assert!((hp.component(0, 0)[idx] - (2.0 * x[0]).cos()).abs() <= 1e-10);
            assert!((hp.component(1, 1)[idx] - (2.0 * x[1]).cos()).abs() <= 1e-10);
            assert!(hp.component(0, 1)[idx].abs() <= 1e-10);
        }
    }

    #[test]
    fn divergent_velocity_rejected_with_location() {
        let u = VectorField::from_fn(g2(16), |x| [x[0].sin(), 0.0, 0.0]);
        match solve_pressure(&u, None) {
            Err(Error::Divergence { max, position, .. }) => {
                assert!((max - 1.0).abs() < 1e-12);
                assert!(position[0].abs() < 1e-12 || (position[0] - 2.0 * PI).abs() < 1e-12);
            }
            other => panic!("expected divergence error, got {other:?}"),
        }
    }

    #[test]
    fn hessian_of_cosine() {
        let grid = g3(16);
        let p = ScalarField::from_fn(grid, |x| x[0].cos());
        let h = hessian(&p).unwrap();
        for idx in 0..grid.npoints() {
            let x = grid.position(idx);
            assert!((h.component(0, 0)[idx] + x[0].cos()).abs() <= 1e-12);
            for (i, j) in [(0, 1), (0, 2), (1, 1), (1, 2), (2, 2), (2, 1)] {
                assert!(h.component(i, j)[idx].abs() <= 1e-12);
            }
        }
        assert!(hessian(&ScalarField::zeros(grid)).unwrap().values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn hessian_is_exactly_symmetric() {
        let grid = g3(8);
        let p = ScalarField::from_fn(grid, |x| (x[0] + 2.0 * x[1]).sin() * (x[2] - x[0]).cos());
        let h = hessian(&p).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(h.component(i, j), h.component(j, i));
            }
        }
    }

    #[test]
    fn perp_gradient_cases() {
        let grid = g2(16);
        let zero = perp_gradient(&ScalarField::from_fn(grid, |_| 2.0)).unwrap();
        assert!(zero.values().iter().all(|v| v.abs() < 1e-14));
        let a = perp_gradient(&ScalarField::from_fn(grid, |x| x[0].sin())).unwrap();
        let b = perp_gradient(&ScalarField::from_fn(grid, |x| x[1].sin())).unwrap();
        for idx in 0..grid.npoints() {
            let x = grid.position(idx);
            assert!(a.component(0)[idx].abs() <= 1e-12);
            assert!((a.component(1)[idx] - x[0].cos()).abs() <= 1e-12);
            assert!((b.component(0)[idx] + x[1].cos()).abs() <= 1e-12);
            assert!(b.component(1)[idx].abs() <= 1e-12);
        }
        assert!(matches!(
            perp_gradient(&ScalarField::zeros(g3(8))),
            Err(Error::UnsupportedDimension { .. })
        ));
    }

    #[test]
    fn region_norms() {
        let grid = g2(32);
        let zero = ScalarField::zeros(grid);
        assert_eq!(region_sup_norm(&zero, &[1.0, 1.0], 0.5).unwrap(), 0.0);
        let f = ScalarField::from_fn(grid, |x| x[0].cos());
        assert_eq!(region_sup_norm(&f, &[1.0, 2.0], PI).unwrap(), 1.0);

        // brute-force scan oracle with an independent distance computation
        let (c, r) = ([PI, PI], 0.5);
        let mut expected: f64 = 0.0;
        let h = grid.spacing();
        for i in 0..32 {
            for j in 0..32 {
                let (x, y) = (i as f64 * h, j as f64 * h);
                if (x - c[0]).powi(2) + (y - c[1]).powi(2) <= r * r {
                    expected = expected.max(x.cos().abs());
                }
            }
        }
        assert_eq!(region_sup_norm(&f, &c, r).unwrap(), expected);
        assert!(matches!(
            region_sup_norm(&f, &[0.1, 0.1], 0.01),
            Err(Error::EmptyRegion { .. })
        ));
    }

    #[test]
    fn tail_fraction_detects_high_modes() {
        let grid = g2(32);
        let smooth = ScalarField::from_fn(grid, |x| x[0].sin());
        assert!(spectral_tail_fraction(&grid, &[smooth.spectrum()]) < 1e-25);
        let rough = ScalarField::from_fn(grid, |x| x[0].sin() + (10.0 * x[1]).cos());
        assert!(spectral_tail_fraction(&grid, &[rough.spectrum()]) > 0.4);
    }
}
