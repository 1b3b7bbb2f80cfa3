//! Primal-dual active set iteration for the discrete Signorini problem
//! `u ≤ 0, λ ≥ 0, λ u = 0` on the contact nodes.

use crate::assembly::{assemble_load, assemble_stiffness};
use crate::cembasis::{CemBuilder, MultiscaleSpace};
use crate::error::{Error, Result, ResultExt};
use crate::grid::{BoundaryDecomposition, GridHierarchy};
use crate::medium::PermeabilityField;
use crate::numkernel::{BandMatrix, BandedCholesky};
use crate::source::ScalarFunction;
use crate::sparse::CsrMatrix;

/// Assembled fine-scale problem.
#[derive(Clone, Debug)]
pub struct ContactProblem {
    pub grid: GridHierarchy,
    pub boundary: BoundaryDecomposition,
    pub stiffness: CsrMatrix,
    pub load: Vec<f64>,
}

impl ContactProblem {
    pub fn new(
        g: &GridHierarchy,
        kappa: &PermeabilityField,
        bd: &BoundaryDecomposition,
        f: &ScalarFunction,
        p: &ScalarFunction,
    ) -> Result<Self> {
        kappa.check_grid(g)?;
        Ok(Self {
            grid: g.clone(),
            boundary: bd.clone(),
            stiffness: assemble_stiffness(g, kappa),
            load: assemble_load(g, f, p, bd),
        })
    }

    pub fn contact_nodes(&self) -> &[usize] {
        &self.boundary.contact_nodes
    }
}

/// Cholesky factor of `A` with the rows and columns of fixed nodes removed.
pub struct ConstrainedFactor {
    n: usize,
    free: Vec<usize>,
    factor: BandedCholesky,
}

impl ConstrainedFactor {
    pub fn new(a: &CsrMatrix, fixed: &[bool]) -> Result<Self> {
        let n = a.n_rows();
        let mut index = vec![usize::MAX; n];
        let mut free = Vec::new();
        for i in 0..n {
            if !fixed[i] {
                index[i] = free.len();
                free.push(i);
            }
        }
        let mut bw = 0;
        for (fi, &i) in free.iter().enumerate() {
            for (j, _) in a.row(i) {
                let fj = index[j];
                if fj != usize::MAX && fj < fi {
                    bw = bw.max(fi - fj);
                }
            }
        }
        let mut band = BandMatrix::zeros(free.len(), bw);
        for (fi, &i) in free.iter().enumerate() {
            for (j, v) in a.row(i) {
                let fj = index[j];
                if fj != usize::MAX && fj <= fi {
                    band.add(fi, fj, v);
                }
            }
        }
        Ok(Self {
            n,
            free,
            factor: band.factor()?,
        })
    }

    /// Solution on the free nodes, zero on the fixed ones.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = self.free.iter().map(|&i| b[i]).collect();
        self.factor.solve_in_place(&mut x);
        let mut u = vec![0.0; self.n];
        for (k, &i) in self.free.iter().enumerate() {
            u[i] = x[k];
        }
        u
    }
}

/// Solves `A u = b` with `u = 0` on the `fixed` nodes by eliminating their rows
/// and columns.
pub fn solve_constrained(a: &CsrMatrix, b: &[f64], fixed: &[bool]) -> Result<Vec<f64>> {
    Ok(ConstrainedFactor::new(a, fixed)?.solve(b))
}

/// Inner linear solve with homogeneous Dirichlet data on `Γ_D ∪ active`.
pub trait InnerSolver {
    fn name(&self) -> &'static str;

    /// Fine-node solution for the given active contact nodes.
    fn solve(&mut self, active: &[usize]) -> Result<Vec<f64>>;
}

pub struct FineSolver<'a> {
    problem: &'a ContactProblem,
}

impl<'a> FineSolver<'a> {
    pub fn new(problem: &'a ContactProblem) -> Self {
        Self { problem }
    }
}

impl InnerSolver for FineSolver<'_> {
    fn name(&self) -> &'static str {
        "fine"
    }

    fn solve(&mut self, active: &[usize]) -> Result<Vec<f64>> {
        let p = self.problem;
        let mut fixed = vec![false; p.grid.n_nodes()];
        for &n in p.boundary.dirichlet_nodes.iter().chain(active) {
            fixed[n] = true;
        }
        solve_constrained(&p.stiffness, &p.load, &fixed)
    }
}

/// Multiscale inner solver. With `incremental` set, each active-set change
/// refreshes only the affected oversampled domains; otherwise every solve
/// rebuilds the full space.
pub struct CemSolver<'a> {
    problem: &'a ContactProblem,
    builder: &'a CemBuilder,
    incremental: bool,
    space: Option<MultiscaleSpace>,
    /// Number of rebuilt domains per solve.
    pub rebuilds: Vec<usize>,
}

impl<'a> CemSolver<'a> {
    pub fn new(problem: &'a ContactProblem, builder: &'a CemBuilder, incremental: bool) -> Self {
        Self {
            problem,
            builder,
            incremental,
            space: None,
            rebuilds: Vec::new(),
        }
    }

    pub fn space(&self) -> Option<&MultiscaleSpace> {
        self.space.as_ref()
    }
}

impl InnerSolver for CemSolver<'_> {
    fn name(&self) -> &'static str {
        "cem"
    }

    fn solve(&mut self, active: &[usize]) -> Result<Vec<f64>> {
        let space = match (&self.space, self.incremental) {
            (Some(old), true) => self.builder.refresh(old, active)?,
            (Some(old), false) => {
                let mut s = self.builder.build(active)?;
                s.version = old.version + 1;
                s
            }
            (None, _) => self.builder.build(active)?,
        };
        self.rebuilds.push(space.rebuilt.len());
        let sol = self.builder.solve(&space, &self.problem.stiffness, &self.problem.load)?;
        self.space = Some(space);
        Ok(sol.u)
    }
}

/// Iterate `(u_k, λ_k, A_k)`. `lambda` and `active` are indexed like the
/// problem's contact nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct ContactState {
    pub k: usize,
    pub u: Vec<f64>,
    pub lambda: Vec<f64>,
    pub active: Vec<bool>,
}

impl ContactState {
    pub fn active_nodes(&self, problem: &ContactProblem) -> Vec<usize> {
        problem
            .contact_nodes()
            .iter()
            .zip(&self.active)
            .filter(|(_, &a)| a)
            .map(|(&n, _)| n)
            .collect()
    }

    pub fn n_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Contact-node values of `u`.
    pub fn contact_u(&self, problem: &ContactProblem) -> Vec<f64> {
        problem.contact_nodes().iter().map(|&n| self.u[n]).collect()
    }
}

/// `λ_i = (b − A u)_i` at the contact nodes.
pub fn compute_multiplier(a: &CsrMatrix, b: &[f64], u: &[f64], contact: &[usize]) -> Vec<f64> {
    contact
        .iter()
        .map(|&i| b[i] - a.row(i).map(|(j, v)| v * u[j]).sum::<f64>())
        .collect()
}

/// `{i : λ_i + c u_i > 0}`; ties are inactive.
pub fn classify(problem: &ContactProblem, lambda: &[f64], u: &[f64], c: f64) -> Vec<bool> {
    problem
        .contact_nodes()
        .iter()
        .zip(lambda)
        .map(|(&n, &l)| l + c * u[n] > 0.0)
        .collect()
}

pub fn initial_state(problem: &ContactProblem, solver: &mut dyn InnerSolver) -> Result<ContactState> {
    let u = solver
        .solve(&[])
        .context_with(|| format!("{} solver, initial unconstrained solve", solver.name()))?;
    let n = problem.contact_nodes().len();
    Ok(ContactState {
        k: 0,
        u,
        lambda: vec![0.0; n],
        active: vec![false; n],
    })
}

pub fn step(problem: &ContactProblem, solver: &mut dyn InnerSolver, state: &ContactState, c: f64) -> Result<ContactState> {
    let active = classify(problem, &state.lambda, &state.u, c);
    let k = state.k + 1;
    let nodes: Vec<usize> = problem
        .contact_nodes()
        .iter()
        .zip(&active)
        .filter(|(_, &a)| a)
        .map(|(&n, _)| n)
        .collect();
    let u = solver
        .solve(&nodes)
        .context_with(|| format!("{} solver, active-set iteration {k}", solver.name()))?;
    let mut lambda = compute_multiplier(&problem.stiffness, &problem.load, &u, problem.contact_nodes());
    for (l, &a) in lambda.iter_mut().zip(&active) {
        if !a {
            *l = 0.0;
        }
    }
    Ok(ContactState { k, u, lambda, active })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PdasOptions {
    pub c: f64,
    pub max_iter: usize,
}

impl Default for PdasOptions {
    fn default() -> Self {
        Self { c: 10.0, max_iter: 20 }
    }
}

/// All iterates `u_0, …, u_{k₀}`; the last one is the terminal state.
#[derive(Clone, Debug)]
pub struct ContactRun {
    pub history: Vec<ContactState>,
    pub c: f64,
}

impl ContactRun {
    pub fn terminal(&self) -> &ContactState {
        self.history.last().expect("history is never empty")
    }

    pub fn iterations(&self) -> usize {
        self.terminal().k
    }
}

/// Iterates until `A_{k+1} = A_k`: the run stops at the first iterate whose
/// own classification reproduces the active set it was solved with, so the
/// terminal iterate is a fixpoint and no redundant solve is made. At least
/// one step is taken.
pub fn run(problem: &ContactProblem, solver: &mut dyn InnerSolver, opts: PdasOptions) -> Result<ContactRun> {
    if opts.max_iter == 0 {
        return Err(Error::config("max_iter must be at least 1"));
    }
    if !(opts.c > 0.0 && opts.c.is_finite()) {
        return Err(Error::config(format!("c = {} must be positive", opts.c)));
    }
    let mut history = vec![initial_state(problem, solver)?];
    let mut pending = Vec::new();
    for _ in 0..opts.max_iter {
        let next = step(problem, solver, history.last().unwrap(), opts.c)?;
        let upcoming = classify(problem, &next.lambda, &next.u, opts.c);
        let done = upcoming == next.active;
        history.push(next);
        if done {
            return Ok(ContactRun { history, c: opts.c });
        }
        pending = upcoming;
    }
    let last = history.last().unwrap();
    let oscillating = problem
        .contact_nodes()
        .iter()
        .enumerate()
        .filter(|&(i, _)| last.active[i] != pending[i])
        .map(|(_, &node)| node)
        .collect();
    Err(Error::NonTermination {
        iterations: opts.max_iter,
        oscillating,
    })
}

/// Complementarity and semismooth residuals, each relative to the scales
/// used by the termination checks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KktReport {
    /// `max(−λ_i) / ‖λ‖_∞`
    pub dual: f64,
    /// `max(u_i) / ‖u‖_∞`
    pub primal: f64,
    /// `max |λ_i u_i| / (‖λ‖_∞ ‖u‖_∞)`
    pub complementarity: f64,
    /// `‖λ − max(0, λ + c u)‖_∞ / max(‖λ‖_∞, c ‖u‖_∞)`
    pub semismooth: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.dual.max(self.primal).max(self.complementarity).max(self.semismooth)
    }
}

/// Residuals on the contact nodes; norms of `u` are taken over all nodes.
pub fn kkt_report(problem: &ContactProblem, state: &ContactState, c: f64) -> KktReport {
    let rel = |x: f64, s: f64| if s > 0.0 { x / s } else { 0.0 };
    let lmax = state.lambda.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let umax = state.u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cu = problem.contact_nodes().iter().map(|&n| state.u[n]);
    let (mut dual, mut primal, mut comp, mut semi) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (&l, u) in state.lambda.iter().zip(cu) {
        dual = dual.max(-l);
        primal = primal.max(u);
        comp = comp.max((l * u).abs());
        semi = semi.max((l - (l + c * u).max(0.0)).abs());
    }
    KktReport {
        dual: rel(dual, lmax),
        primal: rel(primal, umax),
        complementarity: rel(comp, lmax * umax),
        semismooth: rel(semi, lmax.max(c * umax)),
    }
}
