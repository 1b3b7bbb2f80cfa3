//! Auxiliary space from local spectral problems and the projection `π`.
//!
//! Each coarse element `K_i` carries the smallest eigenpairs of the pure
//! Neumann pencil `a_i φ = λ s_i φ`. Functions in the auxiliary space are
//! discontinuous across coarse edges, so they are stored per element as
//! [`BrokenField`]s over the element's `(r+1)²` nodes.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::assembly::{coarse_local_matrix, UNIT_MASS, UNIT_STIFFNESS};
use crate::error::{Error, Result, ResultExt};
use crate::grid::GridHierarchy;
use crate::medium::{PermeabilityField, WeightField};
use crate::numkernel::generalized_eigs_smallest;

/// Local stiffness `a_i` on the nodes of coarse element `i`.
pub fn local_stiffness(g: &GridHierarchy, kappa: &PermeabilityField, i: usize) -> DMatrix<f64> {
    coarse_local_matrix(g, i, |e| kappa.get(e), &UNIT_STIFFNESS)
}

/// Local weighted mass `s_i` on the nodes of coarse element `i`.
pub fn local_weighted_mass(g: &GridHierarchy, weight: &WeightField, i: usize) -> DMatrix<f64> {
    let h2 = g.h() * g.h();
    coarse_local_matrix(g, i, |e| weight.get(e) * h2, &UNIT_MASS)
}

#[derive(Clone, Debug)]
pub struct LocalSpectrum {
    /// Retained eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    /// First discarded eigenvalue; infinite when every mode is retained.
    pub next_eigenvalue: f64,
    /// s-orthonormal eigenvectors as columns.
    pub phi: DMatrix<f64>,
    /// `s_i φ`, the functionals defining `π_i`.
    pub q: DMatrix<f64>,
}

/// Per-coarse-element nodal vectors; values at shared nodes may differ.
#[derive(Clone, Debug, PartialEq)]
pub struct BrokenField {
    pub parts: Vec<DVector<f64>>,
}

impl BrokenField {
    /// Restriction of a continuous fine-node vector to each coarse element.
    pub fn restrict(g: &GridHierarchy, v: &[f64]) -> Self {
        let parts = (0..g.n_coarse())
            .map(|i| {
                let rect = g.coarse_node_rect(i);
                DVector::from_iterator(rect.len(), rect.iter().map(|(ix, iy)| v[g.node(ix, iy)]))
            })
            .collect();
        Self { parts }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            parts: self.parts.iter().map(|p| DVector::zeros(p.len())).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AuxiliarySpace {
    l: usize,
    elements: Vec<LocalSpectrum>,
}

impl AuxiliarySpace {
    /// Solves the local spectral problem on every coarse element and keeps
    /// `l` eigenpairs each, plus the next eigenvalue when it exists.
    pub fn build(g: &GridHierarchy, kappa: &PermeabilityField, weight: &WeightField, l: usize) -> Result<Self> {
        let local_dim = (g.ratio() + 1) * (g.ratio() + 1);
        if l == 0 || l > local_dim {
            return Err(Error::config(format!(
                "eigenvector count {l} must lie in 1..={local_dim} (local dimension)"
            )));
        }
        kappa.check_grid(g)?;
        let elements = (0..g.n_coarse())
            .into_par_iter()
            .map(|i| {
                let a = local_stiffness(g, kappa, i);
                let s = local_weighted_mass(g, weight, i);
                let count = (l + 1).min(local_dim);
                let pairs = generalized_eigs_smallest(&a, &s, count)
                    .context_with(|| format!("local spectral problem on coarse element {i}"))?;
                let phi = DMatrix::from_columns(&pairs[..l].iter().map(|p| p.vector.clone()).collect::<Vec<_>>());
                let q = &s * &phi;
                Ok(LocalSpectrum {
                    eigenvalues: pairs[..l].iter().map(|p| p.value).collect(),
                    next_eigenvalue: pairs.get(l).map_or(f64::INFINITY, |p| p.value),
                    phi,
                    q,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { l, elements })
    }

    pub fn eigvecs(&self) -> usize {
        self.l
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    /// `dim V^aux`.
    pub fn dim(&self) -> usize {
        self.l * self.elements.len()
    }

    pub fn local(&self, i: usize) -> &LocalSpectrum {
        &self.elements[i]
    }

    /// `Λ = min_i λ_i^{l_i + 1}`.
    pub fn lambda_report(&self) -> f64 {
        self.elements.iter().map(|e| e.next_eigenvalue).fold(f64::INFINITY, f64::min)
    }

    /// `π v = Σ_i Σ_j s_i(φ_i^j, v) φ_i^j`, element by element.
    pub fn project_broken(&self, v: &BrokenField) -> BrokenField {
        let parts = self
            .elements
            .iter()
            .zip(&v.parts)
            .map(|(e, vi)| &e.phi * (e.q.transpose() * vi))
            .collect();
        BrokenField { parts }
    }

    pub fn project(&self, g: &GridHierarchy, v: &[f64]) -> BrokenField {
        self.project_broken(&BrokenField::restrict(g, v))
    }

    /// `φ_i^j` as a broken field, zero on the other elements.
    pub fn eigenfunction(&self, i: usize, j: usize) -> BrokenField {
        let mut parts: Vec<DVector<f64>> = self.elements.iter().map(|e| DVector::zeros(e.phi.nrows())).collect();
        parts[i] = self.elements[i].phi.column(j).into_owned();
        BrokenField { parts }
    }
}

/// `s(u, v)` for broken fields, evaluated element by element.
pub fn s_inner(g: &GridHierarchy, weight: &WeightField, u: &BrokenField, v: &BrokenField) -> f64 {
    (0..g.n_coarse())
        .map(|i| u.parts[i].dot(&(local_weighted_mass(g, weight, i) * &v.parts[i])))
        .sum()
}
