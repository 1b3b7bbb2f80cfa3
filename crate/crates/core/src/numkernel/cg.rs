use nalgebra::DMatrix;

use super::{dot, norm2, SolveMethod, SolveReport};
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Symmetric operator `x ↦ A x`.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    /// Diagonal used for Jacobi preconditioning.
    fn diagonal(&self) -> Vec<f64>;
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.n_rows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.mul_vec_into(x, y)
    }

    fn diagonal(&self) -> Vec<f64> {
        CsrMatrix::diagonal(self)
    }
}

/// `A + Q Qᵀ` applied without forming the dense correction.
pub struct LowRankCorrected<'a> {
    pub a: &'a CsrMatrix,
    pub q: &'a DMatrix<f64>,
}

impl LinearOperator for LowRankCorrected<'_> {
    fn dim(&self) -> usize {
        self.a.n_rows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.a.mul_vec_into(x, y);
        for c in 0..self.q.ncols() {
            let col = self.q.column(c);
            let t: f64 = col.iter().zip(x).map(|(q, x)| q * x).sum();
            if t != 0.0 {
                for (yi, q) in y.iter_mut().zip(col.iter()) {
                    *yi += q * t;
                }
            }
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        let mut d = self.a.diagonal();
        for c in 0..self.q.ncols() {
            for (di, q) in d.iter_mut().zip(self.q.column(c).iter()) {
                *di += q * q;
            }
        }
        d
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CgOptions {
    pub tol: f64,
    /// Iteration cap; `None` means `max(1000, 10 n)`.
    pub max_iter: Option<usize>,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            tol: super::DEFAULT_TOL,
            max_iter: None,
        }
    }
}

/// Jacobi-preconditioned conjugate gradients on an SPD operator.
pub fn solve_spd<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[f64],
    opts: CgOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    let n = a.dim();
    assert_eq!(b.len(), n, "right-hand side length");
    if !(opts.tol > 0.0 && opts.tol < 1.0) {
        return Err(Error::config(format!("solver tolerance {} outside (0, 1)", opts.tol)));
    }
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((
            x,
            SolveReport {
                iterations: 0,
                residual: 0.0,
                method: SolveMethod::ConjugateGradient,
            },
        ));
    }
    let max_iter = opts.max_iter.unwrap_or((10 * n).max(1000));
    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut rel = 1.0;
    for it in 1..=max_iter {
        a.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rel = norm2(&r) / bnorm;
        if rel <= opts.tol {
            // confirm against the true residual to avoid drift
            let mut ax = vec![0.0; n];
            a.apply(&x, &mut ax);
            let true_rel = ax.iter().zip(b).map(|(y, b)| (b - y).powi(2)).sum::<f64>().sqrt() / bnorm;
            if true_rel <= opts.tol {
                return Ok((
                    x,
                    SolveReport {
                        iterations: it,
                        residual: true_rel,
                        method: SolveMethod::ConjugateGradient,
                    },
                ));
            }
            r = b.iter().zip(&ax).map(|(b, y)| b - y).collect();
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverFailure {
        report: SolveReport {
            iterations: max_iter,
            residual: rel,
            method: SolveMethod::ConjugateGradient,
        },
    })
}

/// Solves `(A + Q Qᵀ) x = b` by conjugate gradients, applying the
/// correction as two thin matrix-vector products per iteration.
pub fn solve_lowrank_corrected(
    a: &CsrMatrix,
    q: &DMatrix<f64>,
    b: &[f64],
    opts: CgOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    assert_eq!(q.nrows(), a.n_rows(), "correction factor rows");
    solve_spd(&LowRankCorrected { a, q }, b, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &m * m.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn identity_returns_rhs() {
        let a = CsrMatrix::identity(5);
        let b = [1.0, -2.0, 3.0, 0.5, 7.0];
        let (x, rep) = solve_spd(&a, &b, CgOptions::default()).unwrap();
        for (x, b) in x.iter().zip(b) {
            assert!((x - b).abs() < 1e-12);
        }
        assert!(rep.residual <= 1e-10);
    }

    #[test]
    fn zero_rhs_takes_no_iterations() {
        let a = CsrMatrix::identity(3);
        let (x, rep) = solve_spd(&a, &[0.0; 3], CgOptions::default()).unwrap();
        assert_eq!(x, vec![0.0; 3]);
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn laplacian_1d() {
        let a = CsrMatrix::from_triplets(
            3,
            3,
            vec![
                (0, 0, 2.0),
                (0, 1, -1.0),
                (1, 0, -1.0),
                (1, 1, 2.0),
                (1, 2, -1.0),
                (2, 1, -1.0),
                (2, 2, 2.0),
            ],
        );
        let (x, _) = solve_spd(&a, &[0.0, 1.0, 0.0], CgOptions::default()).unwrap();
        for (x, w) in x.iter().zip([0.5, 1.0, 0.5]) {
            assert!((x - w).abs() < 1e-10);
        }
    }

    #[test]
    fn random_spd_matches_dense_factorization() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = DMatrix::from_fn(50, 50, |_, _| rng.random_range(-1.0..1.0));
        let d = &m * m.transpose() / 50.0 + DMatrix::identity(50, 50);
        let b: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tol = 1e-10;
        let (x, _) = solve_spd(&CsrMatrix::from_dense(&d), &b, CgOptions { tol, max_iter: None }).unwrap();
        let want = d.cholesky().unwrap().solve(&DVector::from_vec(b));
        let err = (DVector::from_vec(x) - &want).norm() / want.norm();
        assert!(err <= 10.0 * tol, "err {err}");
    }

    #[test]
    fn iteration_cap_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = random_spd(30, &mut rng);
        let b = vec![1.0; 30];
        let err = solve_spd(&CsrMatrix::from_dense(&d), &b, CgOptions { tol: 1e-12, max_iter: Some(2) }).unwrap_err();
        assert!(matches!(err, Error::SolverFailure { report } if report.iterations == 2));
    }

    #[test]
    fn lowrank_zero_correction_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = CsrMatrix::from_dense(&random_spd(20, &mut rng));
        let b: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let q = DMatrix::zeros(20, 2);
        let (x1, _) = solve_lowrank_corrected(&a, &q, &b, CgOptions::default()).unwrap();
        let (x2, _) = solve_spd(&a, &b, CgOptions::default()).unwrap();
        assert_eq!(x1, x2);
    }

    #[test]
    fn lowrank_identity_plus_e1() {
        let a = CsrMatrix::identity(4);
        let mut q = DMatrix::zeros(4, 1);
        q[(0, 0)] = 1.0;
        let (x, _) = solve_lowrank_corrected(&a, &q, &[1.0, 0.0, 0.0, 0.0], CgOptions::default()).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-12);
        assert!(x[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn lowrank_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let d = random_spd(30, &mut rng);
        let q = DMatrix::from_fn(30, 3, |_, _| rng.random_range(-1.0..1.0));
        let b: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (x, _) = solve_lowrank_corrected(
            &CsrMatrix::from_dense(&d),
            &q,
            &b,
            CgOptions { tol: 1e-14, max_iter: None },
        )
        .unwrap();
        let full = &d + &q * q.transpose();
        let want = full.cholesky().unwrap().solve(&DVector::from_vec(b));
        for i in 0..30 {
            assert!((x[i] - want[i]).abs() < 1e-8);
        }
    }
}
