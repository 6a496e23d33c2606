//! Uniform periodic grids on the torus `[0, L)^d`.
//!
//! Samples are stored row-major with axis 0 (the `x1` direction) slowest:
//! flat index `(i0 * n + i1) * n + i2` in 3D and `i0 * n + i1` in 2D.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DEALIAS: f64 = 2.0 / 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub n: usize,
    pub length: f64,
    pub dealias: f64,
}

impl GridSpec {
    /// A `[0, 2pi)^dim` grid with 2/3 dealiasing.
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        Self::with_options(dim, n, 2.0 * PI, DEFAULT_DEALIAS)
    }

    pub fn with_options(dim: usize, n: usize, length: f64, dealias: f64) -> Result<Self> {
        let grid = GridSpec {
            dim,
            n,
            length,
            dealias,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim != 2 && self.dim != 3 {
            return Err(Error::InvalidGrid(format!("dim must be 2 or 3, got {}", self.dim)));
        }
        if self.n < 8 {
            return Err(Error::InvalidGrid(format!("n must be >= 8, got {}", self.n)));
        }
        if !(self.length.is_finite() && self.length > 0.0) {
            return Err(Error::InvalidGrid(format!("length must be positive, got {}", self.length)));
        }
        if !(self.dealias > 0.0 && self.dealias <= 1.0) {
            return Err(Error::InvalidGrid(format!(
                "dealias fraction must lie in (0, 1], got {}",
                self.dealias
            )));
        }
        Ok(())
    }

    pub fn npoints(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.n as f64
    }

    /// Volume of the periodic box.
    pub fn volume(&self) -> f64 {
        self.length.powi(self.dim as i32)
    }

    /// `2 pi / L`, the fundamental wavenumber.
    pub fn k0(&self) -> f64 {
        2.0 * PI / self.length
    }

    /// Signed integer wavenumber for FFT index `j` (Nyquist maps to `-n/2`).
    #[inline]
    pub fn int_wavenumber(&self, j: usize) -> i64 {
        let n = self.n as i64;
        let j = j as i64;
        if j < (n + 1) / 2 {
            j
        } else {
            j - n
        }
    }

    #[inline]
    pub fn is_nyquist(&self, j: usize) -> bool {
        self.n % 2 == 0 && j == self.n / 2
    }

    /// Whether an integer wavevector survives the dealiasing truncation.
    #[inline]
    pub fn keeps(&self, k: [i64; 3]) -> bool {
        if self.dealias >= 1.0 {
            return true;
        }
        let cutoff = self.dealias * self.n as f64 / 2.0;
        k[..self.dim].iter().all(|&kk| (kk.abs() as f64) < cutoff)
    }

    /// Largest retained integer wavenumber along one axis.
    pub fn max_kept_wavenumber(&self) -> i64 {
        (0..self.n)
            .map(|j| self.int_wavenumber(j))
            .filter(|&k| self.keeps([k, 0, 0]))
            .map(i64::abs)
            .max()
            .unwrap_or(0)
    }

    /// Multi-index of a flat index; unused axes are zero.
    #[inline]
    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let n = self.n;
        match self.dim {
            2 => [idx / n, idx % n, 0],
            _ => [idx / (n * n), (idx / n) % n, idx % n],
        }
    }

    #[inline]
    pub fn ravel(&self, m: [usize; 3]) -> usize {
        let n = self.n;
        match self.dim {
            2 => m[0] * n + m[1],
            _ => (m[0] * n + m[1]) * n + m[2],
        }
    }

    /// Physical coordinates of a grid point (unused axes are zero).
    #[inline]
    pub fn position(&self, idx: usize) -> [f64; 3] {
        let m = self.unravel(idx);
        let h = self.spacing();
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = m[a] as f64 * h;
        }
        x
    }

    /// Integer wavevector of a flat spectral index.
    #[inline]
    pub fn int_wavevector(&self, idx: usize) -> [i64; 3] {
        let m = self.unravel(idx);
        let mut k = [0i64; 3];
        for a in 0..self.dim {
            k[a] = self.int_wavenumber(m[a]);
        }
        k
    }

    /// Wraps a point into `[0, L)` along every active axis.
    pub fn wrap(&self, x: &mut [f64; 3]) {
        for v in x.iter_mut().take(self.dim) {
            *v = v.rem_euclid(self.length);
            if *v >= self.length {
                *v = 0.0;
            }
        }
    }

    /// Shortest periodic displacement from `a` to `b` along each axis.
    pub fn periodic_delta(&self, a: &[f64], b: &[f64]) -> [f64; 3] {
        let mut d = [0.0; 3];
        let l = self.length;
        for ax in 0..self.dim {
            let mut v = (b[ax] - a[ax]).rem_euclid(l);
            if v > l / 2.0 {
                v -= l;
            }
            d[ax] = v;
        }
        d
    }

    pub fn same_shape(&self, other: &GridSpec) -> bool {
        self.dim == other.dim && self.n == other.n && self.length == other.length
    }

    pub(crate) fn check_same(&self, other: &GridSpec) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "dim/n/length ({}, {}, {}) vs ({}, {}, {})",
                self.dim, self.n, self.length, other.dim, other.n, other.length
            )))
        }
    }
}
