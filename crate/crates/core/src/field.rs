//! Scalar, vector and 2-tensor fields sampled on a periodic grid.
//!
//! Components are stored contiguously (component-major). The spectral
//! mirror is computed lazily on first use and dropped on mutation.

use std::sync::OnceLock;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::Transform;
use crate::grid::GridSpec;

#[derive(Clone, Debug)]
pub struct FieldData {
    grid: GridSpec,
    comps: usize,
    values: Vec<f64>,
    spectral: OnceLock<Vec<Vec<Complex64>>>,
}

impl FieldData {
    fn new(grid: GridSpec, comps: usize, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        let expected = comps * grid.npoints();
        if values.len() != expected {
            return Err(Error::GridMismatch(format!(
                "expected {expected} samples ({comps} components), got {}",
                values.len()
            )));
        }
        Ok(FieldData {
            grid,
            comps,
            values,
            spectral: OnceLock::new(),
        })
    }

    fn from_spectra(grid: GridSpec, spectra: Vec<Vec<Complex64>>) -> Self {
        let t = Transform::new(&grid);
        let comps = spectra.len();
        let mut values = Vec::with_capacity(comps * grid.npoints());
        for s in &spectra {
            values.extend(t.inverse_real(s));
        }
        let spectral = OnceLock::new();
        let _ = spectral.set(spectra);
        FieldData {
            grid,
            comps,
            values,
            spectral,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.comps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        self.spectral = OnceLock::new();
        &mut self.values
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let np = self.grid.npoints();
        &self.values[c * np..(c + 1) * np]
    }

    /// Spectral mirror of component `c`.
    pub fn spectrum(&self, c: usize) -> &[Complex64] {
        &self.spectra()[c]
    }

    pub fn spectra(&self) -> &[Vec<Complex64>] {
        self.spectral.get_or_init(|| {
            let t = Transform::new(&self.grid);
            (0..self.comps).map(|c| t.forward_real(self.component(c))).collect()
        })
    }

    pub fn has_spectral_mirror(&self) -> bool {
        self.spectral.get().is_some()
    }

    /// Rejects NaN/inf samples.
    pub fn check_finite(&self, name: &str) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite {
                field: name.to_string(),
                index: i % self.grid.npoints(),
            }),
            None => Ok(()),
        }
    }

    /// Euclidean (Frobenius for tensors) norm of the sample at one grid point.
    pub fn magnitude_at(&self, idx: usize) -> f64 {
        let np = self.grid.npoints();
        (0..self.comps)
            .map(|c| self.values[c * np + idx].powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_magnitude(&self) -> f64 {
        (0..self.grid.npoints())
            .into_par_iter()
            .map(|i| self.magnitude_at(i))
            .reduce(|| 0.0, f64::max)
    }
}

/// Shared access used by the grid-generic operations.
pub trait Field {
    fn data(&self) -> &FieldData;

    fn grid(&self) -> &GridSpec {
        self.data().grid()
    }
}

macro_rules! field_newtype {
    ($name:ident) => {
        #[derive(Clone, Debug)]
        pub struct $name(FieldData);

        impl Field for $name {
            fn data(&self) -> &FieldData {
                &self.0
            }
        }

        impl $name {
            pub fn values(&self) -> &[f64] {
                self.0.values()
            }

            pub fn values_mut(&mut self) -> &mut [f64] {
                self.0.values_mut()
            }

            pub fn into_data(self) -> FieldData {
                self.0
            }
        }
    };
}

field_newtype!(ScalarField);
field_newtype!(VectorField);
field_newtype!(TensorField);

impl ScalarField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        FieldData::new(grid, 1, values).map(ScalarField)
    }

    pub fn zeros(grid: GridSpec) -> Self {
        ScalarField(FieldData::new(grid, 1, vec![0.0; grid.npoints()]).expect("valid grid"))
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn([f64; 3]) -> f64 + Sync) -> Self {
        let values = (0..grid.npoints()).into_par_iter().map(|i| f(grid.position(i))).collect();
        ScalarField(FieldData::new(grid, 1, values).expect("valid grid"))
    }

    pub fn from_spectrum(grid: GridSpec, spectrum: Vec<Complex64>) -> Self {
        ScalarField(FieldData::from_spectra(grid, vec![spectrum]))
    }

    pub fn spectrum(&self) -> &[Complex64] {
        self.0.spectrum(0)
    }

    pub fn max_abs(&self) -> f64 {
        self.values().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Domain integral of the field (exact for trigonometric polynomials).
    pub fn integral(&self) -> f64 {
        let g = self.grid();
        self.values().iter().sum::<f64>() * g.volume() / g.npoints() as f64
    }

    pub fn mean(&self) -> f64 {
        self.values().iter().sum::<f64>() / self.values().len() as f64
    }
}

impl VectorField {
    pub fn new(grid: GridSpec, components: Vec<Vec<f64>>) -> Result<Self> {
        if components.len() != grid.dim {
            return Err(Error::GridMismatch(format!(
                "vector field needs {} components, got {}",
                grid.dim,
                components.len()
            )));
        }
        FieldData::new(grid, grid.dim, components.concat()).map(VectorField)
    }

    pub fn zeros(grid: GridSpec) -> Self {
        VectorField(FieldData::new(grid, grid.dim, vec![0.0; grid.dim * grid.npoints()]).expect("valid grid"))
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn([f64; 3]) -> [f64; 3] + Sync) -> Self {
        let np = grid.npoints();
        let samples: Vec<[f64; 3]> = (0..np).into_par_iter().map(|i| f(grid.position(i))).collect();
        let mut values = vec![0.0; grid.dim * np];
        for (i, s) in samples.iter().enumerate() {
            for c in 0..grid.dim {
                values[c * np + i] = s[c];
            }
        }
        VectorField(FieldData::new(grid, grid.dim, values).expect("valid grid"))
    }

    pub fn from_spectra(grid: GridSpec, spectra: Vec<Vec<Complex64>>) -> Self {
        assert_eq!(spectra.len(), grid.dim);
        VectorField(FieldData::from_spectra(grid, spectra))
    }

    pub fn component(&self, c: usize) -> &[f64] {
        self.0.component(c)
    }

    pub fn spectrum(&self, c: usize) -> &[Complex64] {
        self.0.spectrum(c)
    }

    pub fn at(&self, idx: usize) -> [f64; 3] {
        let mut v = [0.0; 3];
        for (c, slot) in v.iter_mut().enumerate().take(self.grid().dim) {
            *slot = self.component(c)[idx];
        }
        v
    }

    pub fn max_magnitude(&self) -> f64 {
        self.0.max_magnitude()
    }

    /// `int |u|^2 / 2` over the box.
    pub fn kinetic_energy(&self) -> f64 {
        let g = self.grid();
        let sum: f64 = self.values().iter().map(|v| v * v).sum();
        0.5 * sum * g.volume() / g.npoints() as f64
    }
}

impl TensorField {
    /// Components in row-major `(i, j)` order.
    pub fn new(grid: GridSpec, components: Vec<Vec<f64>>) -> Result<Self> {
        if components.len() != grid.dim * grid.dim {
            return Err(Error::GridMismatch(format!(
                "tensor field needs {} components, got {}",
                grid.dim * grid.dim,
                components.len()
            )));
        }
        FieldData::new(grid, grid.dim * grid.dim, components.concat()).map(TensorField)
    }

    pub fn component(&self, i: usize, j: usize) -> &[f64] {
        self.0.component(i * self.grid().dim + j)
    }

    pub fn at(&self, idx: usize) -> [[f64; 3]; 3] {
        let d = self.grid().dim;
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate().take(d) {
            for (j, slot) in row.iter_mut().enumerate().take(d) {
                *slot = self.component(i, j)[idx];
            }
        }
        m
    }

    /// Sum of the diagonal at every grid point.
    pub fn trace(&self) -> ScalarField {
        let g = *self.grid();
        let np = g.npoints();
        let values = (0..np)
            .map(|idx| (0..g.dim).map(|i| self.component(i, i)[idx]).sum())
            .collect();
        ScalarField::new(g, values).expect("sizes match")
    }
}
