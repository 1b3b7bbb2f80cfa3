//! Symmetric banded Cholesky factorization.

use crate::error::{Error, Result};

/// A pivot below this fraction of the original diagonal entry is treated as
/// loss of positive definiteness.
pub const PIVOT_RTOL: f64 = 1e-12;

/// Lower band of a symmetric matrix. Row `i` stores columns
/// `i - bw ..= i` contiguously.
#[derive(Clone, Debug)]
pub struct BandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw, "({i}, {j}) outside band {}", self.bw);
        i * (self.bw + 1) + self.bw - (i - j)
    }

    /// Adds `v` to entry `(i, j)`; either triangle may be addressed.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let o = self.offset(i, j);
        self.data[o] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.offset(i, j)]
        }
    }

    /// In-place Cholesky factorization `A = L Lᵀ`.
    pub fn factor(mut self) -> Result<BandedCholesky> {
        let n = self.n;
        let bw = self.bw;
        let w = bw + 1;
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let (row_i, row_j) = if j < i {
                    let (head, tail) = self.data.split_at(i * w);
                    (&tail[..w], &head[j * w..(j + 1) * w])
                } else {
                    let row = &self.data[i * w..(i + 1) * w];
                    (row, row)
                };
                // entries k in lo..j of both rows
                let ki = bw - (i - lo);
                let kj = bw - (j - lo);
                let len = j - lo;
                let dot = super::dot(&row_i[ki..ki + len], &row_j[kj..kj + len]);
                let oij = i * w + bw - (i - j);
                let a_ij = self.data[oij];
                let s = a_ij - dot;
                if i == j {
                    if !(s > PIVOT_RTOL * a_ij.abs()) || !s.is_finite() {
                        return Err(Error::NotPositiveDefinite { pivot: i, value: s });
                    }
                    self.data[oij] = s.sqrt();
                } else {
                    let djj = self.data[j * w + bw];
                    self.data[oij] = s / djj;
                }
            }
        }
        Ok(BandedCholesky {
            n,
            bw,
            l: self.data,
        })
    }
}

/// Banded Cholesky factor.
#[derive(Clone, Debug)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandedCholesky {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        assert_eq!(b.len(), n);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let row = &self.l[i * w..(i + 1) * w];
            let k0 = bw - (i - lo);
            let dot = super::dot(&row[k0..bw], &b[lo..i]);
            b[i] = (b[i] - dot) / row[bw];
        }
        for i in (0..n).rev() {
            let lo = i.saturating_sub(bw);
            let row = &self.l[i * w..(i + 1) * w];
            b[i] /= row[bw];
            let xi = b[i];
            let k0 = bw - (i - lo);
            for (bk, a) in b[lo..i].iter_mut().zip(&row[k0..bw]) {
                *bk -= a * xi;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
