//! Linear solves and eigensolves used by the fine and multiscale solvers.

mod banded;
mod cg;
mod dense;

use std::fmt;

pub use banded::{BandMatrix, BandedCholesky, PIVOT_RTOL};
pub use cg::{solve_lowrank_corrected, solve_spd, CgOptions, LinearOperator, LowRankCorrected};
pub use dense::{dense_cholesky, generalized_eigs_smallest, EigenPair};

/// Default relative residual for iterative solves.
pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveMethod {
    ConjugateGradient,
    BandedCholesky,
    DenseCholesky,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// Relative residual `‖Ax − b‖ / ‖b‖`.
    pub residual: f64,
    pub method: SolveMethod,
}

impl fmt::Display for SolveReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?} after {} iterations, relative residual {:.3e}",
            self.method, self.iterations, self.residual
        )
    }
}

/// Dot product with independent partial sums so the loop vectorizes.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
