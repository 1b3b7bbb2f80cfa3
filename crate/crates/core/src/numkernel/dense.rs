use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Lower Cholesky factor; the error names the first non-positive pivot.
pub fn dense_cholesky(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = s.nrows();
    assert_eq!(n, s.ncols());
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = s[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j, value: d });
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut v = s[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / d;
        }
    }
    Ok(l)
}

#[derive(Clone, Debug)]
pub struct EigenPair {
    pub value: f64,
    /// S-normalized eigenvector.
    pub vector: DVector<f64>,
}

/// The `count` algebraically smallest eigenpairs of `A φ = λ S φ`, in
/// ascending order and S-orthonormal.
///
/// Reduces to a standard symmetric problem through the Cholesky factor of
/// `S`. Repeated eigenvalues yield an arbitrary S-orthonormal basis of the
/// eigenspace.
pub fn generalized_eigs_smallest(a: &DMatrix<f64>, s: &DMatrix<f64>, count: usize) -> Result<Vec<EigenPair>> {
    let n = a.nrows();
    if count > n {
        return Err(Error::config(format!("requested {count} eigenpairs of a {n}-dimensional pencil")));
    }
    let l = dense_cholesky(s)?;
    // C = L⁻¹ A L⁻ᵀ
    let linv_a = l
        .solve_lower_triangular(a)
        .expect("Cholesky factor has a positive diagonal");
    let c = l
        .solve_lower_triangular(&linv_a.transpose())
        .expect("Cholesky factor has a positive diagonal");
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let lt = l.transpose();
    order
        .into_iter()
        .take(count)
        .map(|k| {
            let y = eig.eigenvectors.column(k).into_owned();
            let phi = lt
                .solve_upper_triangular(&y)
                .expect("Cholesky factor has a positive diagonal");
            Ok(EigenPair {
                value: eig.eigenvalues[k],
                vector: phi,
            })
        })
        .collect()
}
