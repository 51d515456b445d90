//! Periodic 3D transforms and the two elliptic solves used throughout:
//! the screened operator `(sigma - Delta_h)` and the zero-mean Poisson
//! operator `-Delta_h`, both diagonalized by the FFT.
//!
//! `Delta_h` is the 7-point finite-difference Laplacian, whose symbol is
//! `-(4/h^2) sum_d sin^2(pi m_d / n)`. Its inverse is a nonnegative operator,
//! so positive sources give positive potentials without Gibbs ringing.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::field::{Grid, ScalarField};

/// Forward/inverse FFT plans for an `n^3` grid.
pub struct Fft3 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft3").field("n", &self.n).finish()
    }
}

impl Fft3 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let n = self.n;
        assert_eq!(data.len(), n * n * n);
        let plan = if inverse { &self.inverse } else { &self.forward };
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        // Axis 2 is contiguous.
        for line in data.chunks_exact_mut(n) {
            plan.process_with_scratch(line, &mut scratch);
        }
        let mut buf = vec![Complex64::default(); n];
        // Axis 1: stride n.
        for i in 0..n {
            for k in 0..n {
                let base = i * n * n + k;
                for j in 0..n {
                    buf[j] = data[base + j * n];
                }
                plan.process_with_scratch(&mut buf, &mut scratch);
                for j in 0..n {
                    data[base + j * n] = buf[j];
                }
            }
        }
        // Axis 0: stride n^2.
        for j in 0..n {
            for k in 0..n {
                let base = j * n + k;
                for i in 0..n {
                    buf[i] = data[base + i * n * n];
                }
                plan.process_with_scratch(&mut buf, &mut scratch);
                for i in 0..n {
                    data[base + i * n * n] = buf[i];
                }
            }
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, false);
    }

    /// Unnormalized inverse; divide by `n^3` to undo [`Fft3::forward`].
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, true);
    }
}

/// Finite-difference eigenvalues `(4/h^2) sin^2(pi m / n)` of `-d^2/dx^2`.
fn axis_symbol(n: usize, h: f64) -> Vec<f64> {
    (0..n)
        .map(|m| {
            let s = (std::f64::consts::PI * m as f64 / n as f64).sin();
            4.0 * s * s / (h * h)
        })
        .collect()
}

/// Spectral solver bound to one grid.
#[derive(Debug)]
pub struct EllipticSolver {
    grid: Grid,
    fft: Fft3,
    lambda: Vec<f64>,
}

impl EllipticSolver {
    pub fn new(grid: Grid) -> Self {
        Self {
            grid,
            fft: Fft3::new(grid.n),
            lambda: axis_symbol(grid.n, grid.spacing()),
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    fn check(&self, rhs: &ScalarField) -> Result<()> {
        if rhs.grid != self.grid {
            return Err(Error::InvalidParameter("field grid does not match solver grid".into()));
        }
        Ok(())
    }

    fn apply_inverse_symbol(&self, rhs: &ScalarField, symbol: impl Fn(f64) -> Option<f64>) -> ScalarField {
        let n = self.grid.n;
        let mut data: Vec<Complex64> = rhs.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft.forward(&mut data);
        let norm = 1.0 / (n * n * n) as f64;
        for i in 0..n {
            for j in 0..n {
                let lij = self.lambda[i] + self.lambda[j];
                let row = (i * n + j) * n;
                for k in 0..n {
                    let scale = symbol(lij + self.lambda[k]).map_or(0.0, |s| norm / s);
                    data[row + k] *= scale;
                }
            }
        }
        self.fft.inverse(&mut data);
        ScalarField {
            grid: self.grid,
            values: data.into_iter().map(|c| c.re).collect(),
        }
    }

    /// Solves `(sigma - Delta_h) u = rhs`.
    pub fn solve_screened(&self, sigma: f64, rhs: &ScalarField) -> Result<ScalarField> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
        }
        self.check(rhs)?;
        Ok(self.apply_inverse_symbol(rhs, |l| Some(sigma + l)))
    }

    /// Solves `-Delta_h u = rhs - mean(rhs)` with `mean(u) = 0`; returns the
    /// solution and the subtracted mean.
    pub fn solve_poisson_zero_mean(&self, rhs: &ScalarField) -> Result<(ScalarField, f64)> {
        self.check(rhs)?;
        let mean = rhs.mean();
        Ok((self.apply_inverse_symbol(rhs, |l| (l > 0.0).then_some(l)), mean))
    }
}
