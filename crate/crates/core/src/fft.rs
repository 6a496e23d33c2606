//! Multi-dimensional complex FFTs over [`GridSpec`] layouts.

use std::collections::HashMap;
use std::sync::{Arc, LazyLock, Mutex};

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::GridSpec;

#[derive(Clone)]
struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

static PLANS: LazyLock<Mutex<HashMap<usize, Plans>>> = LazyLock::new(|| Mutex::new(HashMap::new()));

fn plans(n: usize) -> Plans {
    let mut cache = PLANS.lock().expect("fft plan cache poisoned");
    cache
        .entry(n)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            Plans {
                forward: planner.plan_fft_forward(n),
                inverse: planner.plan_fft_inverse(n),
            }
        })
        .clone()
}

/// Forward/inverse transforms for one grid. The inverse is normalized so that
/// `inverse(forward(x)) == x`.
#[derive(Clone)]
pub struct Transform {
    grid: GridSpec,
    plans: Plans,
}

impl std::fmt::Debug for Transform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Transform").field("grid", &self.grid).finish_non_exhaustive()
    }
}

impl Transform {
    pub fn new(grid: &GridSpec) -> Self {
        Transform {
            grid: *grid,
            plans: plans(grid.n),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.apply(data, &self.plans.forward);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.apply(data, &self.plans.inverse);
        let scale = 1.0 / self.grid.npoints() as f64;
        data.par_iter_mut().for_each(|z| *z *= scale);
    }

    /// Spectrum of real samples.
    pub fn forward_real(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }

    /// Real part of the inverse transform.
    pub fn inverse_real(&self, spectrum: &[Complex64]) -> Vec<f64> {
        let mut buf = spectrum.to_vec();
        self.inverse(&mut buf);
        buf.into_iter().map(|z| z.re).collect()
    }

    fn apply(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let n = self.grid.n;
        let dim = self.grid.dim;
        assert_eq!(data.len(), self.grid.npoints(), "spectral buffer size mismatch");
        for axis in 0..dim {
            let stride = n.pow((dim - 1 - axis) as u32);
            if stride == 1 {
                data.par_chunks_mut(n * 64).for_each(|chunk| {
                    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
                    fft.process_with_scratch(chunk, &mut scratch);
                });
                continue;
            }
            // View as [outer][n][stride]; transpose each outer block to
            // [stride][n], transform the contiguous lines, transpose back.
            let block = n * stride;
            let transform_block = |blk: &[Complex64], cols: std::ops::Range<usize>| {
                let width = cols.len();
                let mut lines = vec![Complex64::default(); width * n];
                for i in 0..n {
                    for (c, s) in cols.clone().enumerate() {
                        lines[c * n + i] = blk[i * stride + s];
                    }
                }
                let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
                fft.process_with_scratch(&mut lines, &mut scratch);
                lines
            };
            let outer = data.len() / block;
            if outer > 1 {
                data.par_chunks_mut(block).for_each(|blk| {
                    let lines = transform_block(blk, 0..stride);
                    for i in 0..n {
                        for s in 0..stride {
                            blk[i * stride + s] = lines[s * n + i];
                        }
                    }
                });
            } else {
                // Single block (axis 0): split the columns across threads.
                let tile = stride.div_ceil(rayon::current_num_threads().max(1)).max(16);
                let ranges: Vec<_> = (0..stride).step_by(tile).map(|s| s..(s + tile).min(stride)).collect();
                let results: Vec<_> = ranges
                    .par_iter()
                    .map(|r| (r.clone(), transform_block(data, r.clone())))
                    .collect();
                for (r, lines) in results {
                    for i in 0..n {
                        for (c, s) in r.clone().enumerate() {
                            data[i * stride + s] = lines[c * n + i];
                        }
                    }
                }
            }
        }
    }
}
