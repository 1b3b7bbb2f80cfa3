//! Projected Gauss-Seidel reference solver for the bound-constrained
//! quadratic program `min ½ uᵀAu − bᵀu` subject to `u_i ≤ 0` on a node set.

use nalgebra::DMatrix;

use crate::contact::{compute_multiplier, ConstrainedFactor, ContactProblem};
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Largest fine grid (per axis) the oracle accepts from the command line.
pub const MAX_ORACLE_GRID: usize = 64;

#[derive(Clone, Debug)]
pub struct QpInstance {
    pub matrix: CsrMatrix,
    pub load: Vec<f64>,
    /// Nodes with the bound `u_i ≤ 0`.
    pub constrained: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
pub struct PgsOptions {
    /// Bound on the max-norm change of one sweep, relative to `‖u‖_∞`.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for PgsOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_sweeps: 1_000_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PgsResult {
    pub u: Vec<f64>,
    pub sweeps: usize,
    /// `½ uᵀAu − bᵀu` after each sweep.
    pub energy: Vec<f64>,
}

pub fn energy(a: &CsrMatrix, b: &[f64], u: &[f64]) -> f64 {
    0.5 * a.quadratic_form(u) - b.iter().zip(u).map(|(b, u)| b * u).sum::<f64>()
}

pub fn solve_projected_gs(inst: &QpInstance, opts: PgsOptions) -> Result<PgsResult> {
    let a = &inst.matrix;
    let n = a.n_rows();
    let mut bounded = vec![false; n];
    for &i in &inst.constrained {
        bounded[i] = true;
    }
    let diag = a.diagonal();
    if let Some(i) = diag.iter().position(|&d| d <= 0.0) {
        return Err(Error::NotPositiveDefinite { pivot: i, value: diag[i] });
    }
    let mut u = vec![0.0; n];
    let mut history = Vec::new();
    let mut change = f64::INFINITY;
    for sweep in 1..=opts.max_sweeps {
        change = 0.0;
        for i in 0..n {
            let off: f64 = a.row(i).filter(|&(j, _)| j != i).map(|(j, v)| v * u[j]).sum();
            let mut v = (inst.load[i] - off) / diag[i];
            if bounded[i] {
                v = v.min(0.0);
            }
            change = f64::max(change, (v - u[i]).abs());
            u[i] = v;
        }
        history.push(energy(a, &inst.load, &u));
        let scale = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if change <= opts.tol * scale || change == 0.0 {
            return Ok(PgsResult {
                u,
                sweeps: sweep,
                energy: history,
            });
        }
    }
    Err(Error::OracleNonConvergence {
        sweeps: opts.max_sweeps,
        last_change: change,
    })
}

#[derive(Clone, Debug)]
pub struct OracleSolution {
    pub u: Vec<f64>,
    /// `b − A u` on the contact nodes.
    pub lambda: Vec<f64>,
    /// `u_i = 0` and `λ_i > 0`, indexed like the contact nodes.
    pub active: Vec<bool>,
    pub sweeps: usize,
    /// Energies of the condensed problem per sweep.
    pub energy: Vec<f64>,
}

/// Contact problem by projected Gauss-Seidel on the Schur complement onto the
/// contact nodes; the remaining free nodes are recovered by a direct solve.
/// Multipliers below `1e-10 ‖λ‖_∞` count as zero.
pub fn solve_contact(problem: &ContactProblem, opts: PgsOptions) -> Result<OracleSolution> {
    let g = &problem.grid;
    let a = &problem.stiffness;
    let contact = problem.contact_nodes();
    let nc = contact.len();
    let mut fixed = vec![false; g.n_nodes()];
    for &n in problem.boundary.dirichlet_nodes.iter().chain(contact) {
        fixed[n] = true;
    }
    let interior = ConstrainedFactor::new(a, &fixed)?;

    // discrete harmonic extension of each contact unit vector
    let mut shapes = Vec::with_capacity(nc);
    for &c in contact {
        let mut col = vec![0.0; g.n_nodes()];
        for (j, v) in a.row(c) {
            if !fixed[j] {
                col[j] = -v;
            }
        }
        let mut z = interior.solve(&col);
        z[c] = 1.0;
        shapes.push(z);
    }
    let base = interior.solve(&problem.load);
    let row_dot = |i: usize, x: &[f64]| a.row(i).map(|(j, v)| v * x[j]).sum::<f64>();
    let mut schur = DMatrix::zeros(nc, nc);
    let mut rhs = vec![0.0; nc];
    for (p, &cp) in contact.iter().enumerate() {
        rhs[p] = problem.load[cp] - row_dot(cp, &base);
        for q in 0..nc {
            schur[(p, q)] = row_dot(cp, &shapes[q]);
        }
    }
    let schur = (&schur + schur.transpose()) * 0.5;
    let inst = QpInstance {
        matrix: CsrMatrix::from_dense(&schur),
        load: rhs,
        constrained: (0..nc).collect(),
    };
    let pgs = solve_projected_gs(&inst, opts)?;

    let mut u = base;
    for (q, &uc) in pgs.u.iter().enumerate() {
        for (ui, z) in u.iter_mut().zip(&shapes[q]) {
            *ui += uc * z;
        }
        u[contact[q]] = uc;
    }
    let lambda = compute_multiplier(a, &problem.load, &u, contact);
    let lmax = lambda.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let active = contact
        .iter()
        .zip(&lambda)
        .map(|(&n, &l)| u[n] == 0.0 && l > 1e-10 * lmax)
        .collect();
    Ok(OracleSolution {
        u,
        lambda,
        active,
        sweeps: pgs.sweeps,
        energy: pgs.energy,
    })
}
