//! Off-grid evaluation of trigonometric interpolants.
//!
//! Sums the Fourier series directly at a point, which is exact for
//! band-limited fields and yields derivatives consistent with the grid
//! operators in [`crate::engine`].

use rustfft::num_complex::Complex64;

use crate::grid::GridSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Order {
    Value,
    Gradient,
    Hessian,
}

/// Value, gradient and Hessian of one scalar at one point. Entries beyond
/// the requested [`Order`] stay zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: [f64; 3],
    pub hess: [[f64; 3]; 3],
}

#[derive(Clone, Debug)]
struct Mode {
    idx: [usize; 3],
    k: [f64; 3],
    nyquist: [bool; 3],
}

#[derive(Clone, Debug)]
pub struct PointEvaluator {
    grid: GridSpec,
    modes: Vec<Mode>,
    // coefficient per (field, mode), already divided by npoints
    coefs: Vec<Vec<Complex64>>,
    orders: Vec<Order>,
}

impl PointEvaluator {
    /// Builds an evaluator over several spectra of real fields sharing one
    /// grid. Each conjugate pair of modes is summed once with weight 2;
    /// modes whose coefficients vanish in every spectrum are skipped.
    pub fn new(grid: &GridSpec, spectra: &[(&[Complex64], Order)]) -> Self {
        let np = grid.npoints();
        let k0 = grid.k0();
        let mut modes = Vec::new();
        let mut coefs = vec![Vec::new(); spectra.len()];
        for idx in 0..np {
            let m = grid.unravel(idx);
            let mut neg = [0; 3];
            for a in 0..grid.dim {
                neg[a] = (grid.n - m[a]) % grid.n;
            }
            let partner = grid.ravel(neg);
            if partner < idx {
                continue;
            }
            if spectra
                .iter()
                .all(|(s, _)| s[idx] == Complex64::default() && s[partner] == Complex64::default())
            {
                continue;
            }
            let scale = if partner == idx { 1.0 } else { 2.0 } / np as f64;
            let ki = grid.int_wavevector(idx);
            let mut k = [0.0; 3];
            let mut nyquist = [false; 3];
            for a in 0..grid.dim {
                k[a] = k0 * ki[a] as f64;
                nyquist[a] = grid.is_nyquist(m[a]);
            }
            modes.push(Mode { idx: m, k, nyquist });
            for (c, (s, _)) in spectra.iter().enumerate() {
                coefs[c].push(s[idx] * scale);
            }
        }
        PointEvaluator {
            grid: *grid,
            modes,
            coefs,
            orders: spectra.iter().map(|(_, o)| *o).collect(),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn active_modes(&self) -> usize {
        self.modes.len()
    }

    fn phase_tables(&self, x: &[f64]) -> Vec<Vec<Complex64>> {
        let g = &self.grid;
        (0..g.dim)
            .map(|a| {
                (0..g.n)
                    .map(|j| Complex64::from_polar(1.0, g.k0() * g.int_wavenumber(j) as f64 * x[a]))
                    .collect()
            })
            .collect()
    }

    pub fn evaluate(&self, x: &[f64]) -> Vec<Jet> {
        let tables = self.phase_tables(x);
        let dim = self.grid.dim;
        let mut out = vec![Jet::default(); self.coefs.len()];
        for (mi, mode) in self.modes.iter().enumerate() {
            let mut phase = tables[0][mode.idx[0]] * tables[1][mode.idx[1]];
            if dim == 3 {
                phase *= tables[2][mode.idx[2]];
            }
            for (c, jet) in out.iter_mut().enumerate() {
                let z = self.coefs[c][mi] * phase;
                jet.value += z.re;
                let order = self.orders[c];
                if order == Order::Value {
                    continue;
                }
                for a in 0..dim {
                    if !mode.nyquist[a] {
                        jet.grad[a] -= mode.k[a] * z.im;
                    }
                }
                if order == Order::Hessian {
                    for a in 0..dim {
                        for b in a..dim {
                            if a != b && (mode.nyquist[a] || mode.nyquist[b]) {
                                continue;
                            }
                            jet.hess[a][b] -= mode.k[a] * mode.k[b] * z.re;
                        }
                    }
                }
            }
        }
        for jet in &mut out {
            for a in 0..dim {
                for b in 0..a {
                    jet.hess[a][b] = jet.hess[b][a];
                }
            }
        }
        out
    }

    /// Values only (ignores requested orders).
    pub fn values(&self, x: &[f64]) -> Vec<f64> {
        let tables = self.phase_tables(x);
        let dim = self.grid.dim;
        let mut out = vec![0.0; self.coefs.len()];
        for (mi, mode) in self.modes.iter().enumerate() {
            let mut phase = tables[0][mode.idx[0]] * tables[1][mode.idx[1]];
            if dim == 3 {
                phase *= tables[2][mode.idx[2]];
            }
            for (c, v) in out.iter_mut().enumerate() {
                let z = self.coefs[c][mi];
                *v += z.re * phase.re - z.im * phase.im;
            }
        }
        out
    }
}
