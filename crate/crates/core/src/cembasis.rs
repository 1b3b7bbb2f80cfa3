//! Constraint energy minimizing basis functions on oversampled domains.
//!
//! For each coarse element `K_i` and eigenfunction `φ_i^j` the basis function
//! `ψ_i^j` solves `(A + Q Qᵀ) ψ = s_i φ_i^j` on the free nodes of `K_i^m`, where
//! `Q Qᵀ` realizes `s(πψ, πv)` and is block diagonal over coarse elements.
//! Each local system is solved by condensing the element interiors onto the
//! coarse skeleton (all constrained nodes lie on it) and factoring the
//! skeleton system with a banded Cholesky.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, Dyn};
use rayon::prelude::*;

use crate::assembly::{edge_load, UNIT_STIFFNESS};
use crate::auxspace::{local_stiffness, AuxiliarySpace};
use crate::error::{Error, Result, ResultExt};
use crate::grid::{BoundaryDecomposition, BoundaryLabel, GridHierarchy, NodeRect, OversampleDomain};
use crate::medium::PermeabilityField;
use crate::numkernel::{
    dot, solve_spd, BandMatrix, BandedCholesky, CgOptions, LinearOperator, SolveMethod, SolveReport, DEFAULT_TOL,
};
use crate::source::ScalarFunction;
use crate::sparse::CsrMatrix;

const NONE: usize = usize::MAX;

/// Static condensation of `E_K = A_K + Q_K Q_Kᵀ` onto the element boundary.
struct ElementCondensation {
    interior: Vec<usize>,
    boundary: Vec<usize>,
    chol: Option<Cholesky<f64, Dyn>>,
    /// `E_II⁻¹ E_IB`
    x: DMatrix<f64>,
    /// `E_BB − E_BI E_II⁻¹ E_IB`
    schur: DMatrix<f64>,
}

impl ElementCondensation {
    fn new(g: &GridHierarchy, kappa: &PermeabilityField, aux: &AuxiliarySpace, i: usize) -> Result<Self> {
        let r = g.ratio();
        let q = &aux.local(i).q;
        let e = local_stiffness(g, kappa, i) + q * q.transpose();
        let side = r + 1;
        let (mut interior, mut boundary) = (Vec::new(), Vec::new());
        for ly in 0..side {
            for lx in 0..side {
                let k = ly * side + lx;
                if lx == 0 || ly == 0 || lx == r || ly == r {
                    boundary.push(k);
                } else {
                    interior.push(k);
                }
            }
        }
        let e_bb = e.select_rows(&boundary).select_columns(&boundary);
        if interior.is_empty() {
            return Ok(Self {
                interior,
                boundary,
                chol: None,
                x: DMatrix::zeros(0, e_bb.ncols()),
                schur: e_bb,
            });
        }
        let e_ii = e.select_rows(&interior).select_columns(&interior);
        let e_ib = e.select_rows(&interior).select_columns(&boundary);
        let chol = Cholesky::new(e_ii).ok_or(Error::NotPositiveDefinite {
            pivot: 0,
            value: f64::NAN,
        })?;
        let x = chol.solve(&e_ib);
        let schur = &e_bb - e_ib.transpose() * &x;
        let schur = (&schur + schur.transpose()) * 0.5;
        Ok(Self {
            interior,
            boundary,
            chol: Some(chol),
            x,
            schur,
        })
    }
}

/// Constraint set of active-set version `k`: Dirichlet nodes plus the active
/// contact nodes. Cut nodes are added per oversampled domain.
#[derive(Clone, Debug)]
pub struct DofRestriction {
    pub version: usize,
    /// Active contact nodes, sorted.
    pub active: Vec<usize>,
    constrained: Vec<bool>,
}

impl DofRestriction {
    pub fn new(g: &GridHierarchy, bd: &BoundaryDecomposition, active: &[usize], version: usize) -> Self {
        let mut constrained = vec![false; g.n_nodes()];
        for &n in &bd.dirichlet_nodes {
            constrained[n] = true;
        }
        for &n in active {
            debug_assert_eq!(bd.label(n), Some(BoundaryLabel::Contact));
            constrained[n] = true;
        }
        let mut active = active.to_vec();
        active.sort_unstable();
        active.dedup();
        Self {
            version,
            active,
            constrained,
        }
    }

    pub fn is_constrained(&self, g: &GridHierarchy, dom: &OversampleDomain, ix: usize, iy: usize) -> bool {
        dom.is_interior_cut(ix, iy) || self.constrained[g.node(ix, iy)]
    }

    /// Free nodes of `V_k(K_i^m)`.
    pub fn free_nodes(&self, g: &GridHierarchy, dom: &OversampleDomain) -> Vec<usize> {
        dom.nodes
            .iter()
            .filter(|&(ix, iy)| !self.is_constrained(g, dom, ix, iy))
            .map(|(ix, iy)| g.node(ix, iy))
            .collect()
    }

    /// Active nodes that constrain the domain beyond its cut.
    fn domain_key(&self, g: &GridHierarchy, dom: &OversampleDomain) -> Vec<usize> {
        self.active
            .iter()
            .copied()
            .filter(|&n| {
                let (ix, iy) = g.node_ij(n);
                dom.nodes.contains(ix, iy) && !dom.is_interior_cut(ix, iy)
            })
            .collect()
    }
}

/// Condensed local system of one oversampled domain.
struct DomainSystem<'a> {
    rect: NodeRect,
    /// Rectangle index to free skeleton index.
    skel: Vec<usize>,
    /// Member coarse elements with the rectangle index of their lower-left node.
    elems: Vec<(usize, usize)>,
    cond: &'a [ElementCondensation],
    factor: Option<BandedCholesky>,
    n_skel: usize,
    side: usize,
}

impl<'a> DomainSystem<'a> {
    fn new(b: &'a CemBuilder, dom: &OversampleDomain, res: &DofRestriction) -> Result<Self> {
        let g = &b.g;
        let r = g.ratio();
        let rect = dom.nodes;
        let mut skel = vec![NONE; rect.len()];
        let mut n_skel = 0;
        for (ix, iy) in rect.iter() {
            if g.on_skeleton(ix, iy) && !res.is_constrained(g, dom, ix, iy) {
                skel[rect.local(ix, iy)] = n_skel;
                n_skel += 1;
            }
        }
        let elems: Vec<(usize, usize)> = dom
            .coarse_elements()
            .into_iter()
            .map(|k| {
                let (cx, cy) = g.coarse_ij(k);
                (k, rect.local(cx * r, cy * r))
            })
            .collect();
        let side = r + 1;
        let w = rect.width();
        let at = |base: usize, loc: usize| base + (loc / side) * w + loc % side;

        let mut bw = 0;
        for &(k, base) in &elems {
            let ids: Vec<usize> = b.cond[k]
                .boundary
                .iter()
                .map(|&l| skel[at(base, l)])
                .filter(|&s| s != NONE)
                .collect();
            if let (Some(lo), Some(hi)) = (ids.iter().min(), ids.iter().max()) {
                bw = bw.max(hi - lo);
            }
        }
        let factor = if n_skel == 0 {
            None
        } else {
            let mut band = BandMatrix::zeros(n_skel, bw);
            for &(k, base) in &elems {
                let c = &b.cond[k];
                let ids: Vec<usize> = c.boundary.iter().map(|&l| skel[at(base, l)]).collect();
                for (p, &sp) in ids.iter().enumerate() {
                    if sp == NONE {
                        continue;
                    }
                    for (q, &sq) in ids.iter().enumerate() {
                        if sq != NONE && sq <= sp {
                            band.add(sp, sq, c.schur[(p, q)]);
                        }
                    }
                }
            }
            Some(band.factor()?)
        };
        Ok(Self {
            rect,
            skel,
            elems,
            cond: &b.cond,
            factor,
            n_skel,
            side,
        })
    }

    #[inline]
    fn at(&self, base: usize, loc: usize) -> usize {
        base + (loc / self.side) * self.rect.width() + loc % self.side
    }

    /// Solves for every column of `rhs` (rectangle nodes × columns).
    /// Constrained rows of `rhs` are ignored and the result vanishes there.
    fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let nc = rhs.ncols();
        let mut out = DMatrix::zeros(self.rect.len(), nc);
        let mut g = DMatrix::zeros(self.n_skel, nc);
        for (idx, &s) in self.skel.iter().enumerate() {
            if s != NONE {
                for c in 0..nc {
                    g[(s, c)] = rhs[(idx, c)];
                }
            }
        }
        let mut ys = Vec::with_capacity(self.elems.len());
        for &(k, base) in &self.elems {
            let c = &self.cond[k];
            let Some(chol) = &c.chol else {
                ys.push(DMatrix::zeros(0, nc));
                continue;
            };
            let r_i = DMatrix::from_fn(c.interior.len(), nc, |p, col| rhs[(self.at(base, c.interior[p]), col)]);
            let contrib = c.x.transpose() * &r_i;
            for (p, &l) in c.boundary.iter().enumerate() {
                let s = self.skel[self.at(base, l)];
                if s != NONE {
                    for col in 0..nc {
                        g[(s, col)] -= contrib[(p, col)];
                    }
                }
            }
            ys.push(chol.solve(&r_i));
        }
        if let Some(f) = &self.factor {
            for col in 0..nc {
                f.solve_in_place(g.column_mut(col).as_mut_slice());
            }
        }
        for (idx, &s) in self.skel.iter().enumerate() {
            if s != NONE {
                for col in 0..nc {
                    out[(idx, col)] = g[(s, col)];
                }
            }
        }
        for (&(k, base), y) in self.elems.iter().zip(ys) {
            let c = &self.cond[k];
            if c.chol.is_none() {
                continue;
            }
            let x_b = DMatrix::from_fn(c.boundary.len(), nc, |p, col| out[(self.at(base, c.boundary[p]), col)]);
            let x_i = y - &c.x * x_b;
            for (p, &l) in c.interior.iter().enumerate() {
                let idx = self.at(base, l);
                for col in 0..nc {
                    out[(idx, col)] = x_i[(p, col)];
                }
            }
        }
        out
    }
}

/// Basis functions and corrector of one oversampled domain `K_i^m`, stored
/// over the domain's node rectangle.
#[derive(Clone, Debug)]
pub struct DomainBasis {
    pub domain: OversampleDomain,
    /// Columns `ψ_i^j`, rectangle nodes × `l`.
    pub psi: DMatrix<f64>,
    /// `N_i p`, absent when `∂K_i ∩ Γ_N` carries no data.
    pub corrector: Option<Vec<f64>>,
    key: Vec<usize>,
}

/// Symmetric block matrix `Ψᵀ A Ψ` with `l × l` blocks between coarse
/// elements whose oversampled domains overlap.
#[derive(Clone, Debug)]
pub struct CoarseMatrix {
    l: usize,
    /// Row `P` holds `(Q, block)` sorted by `Q`; blocks are row-major.
    rows: Vec<Vec<(usize, Vec<f64>)>>,
}

/// Band storage budget for the direct coarse solve, in matrix entries.
const COARSE_BAND_LIMIT: usize = 40_000_000;

impl CoarseMatrix {
    pub fn dim(&self) -> usize {
        self.rows.len() * self.l
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        let (p, i) = (a / self.l, a % self.l);
        let (q, j) = (b / self.l, b % self.l);
        match self.rows[p].binary_search_by_key(&q, |e| e.0) {
            Ok(k) => self.rows[p][k].1[i * self.l + j],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |a, b| self.get(a, b))
    }

    /// Lower half-bandwidth in coarse unknowns.
    pub fn bandwidth(&self) -> usize {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(p, row)| row.iter().map(move |(q, _)| p.abs_diff(*q)))
            .max()
            .unwrap_or(0)
            * self.l
            + self.l
            - 1
    }

    /// Solves `G w = rhs` directly when the band fits the budget, otherwise
    /// by conjugate gradients. A vanishing pivot (rank-deficient but
    /// semidefinite `G`) also falls back to conjugate gradients, which
    /// converges on consistent systems; a clearly negative pivot is an error.
    pub fn solve(&self, rhs: &[f64]) -> Result<(Vec<f64>, SolveReport)> {
        let n = self.dim();
        let bw = self.bandwidth().min(n.saturating_sub(1));
        if n * (bw + 1) <= COARSE_BAND_LIMIT {
            let mut band = BandMatrix::zeros(n, bw);
            for (p, row) in self.rows.iter().enumerate() {
                for (q, blk) in row {
                    if *q > p {
                        continue;
                    }
                    for i in 0..self.l {
                        for j in 0..self.l {
                            let (a, b) = (p * self.l + i, q * self.l + j);
                            if b <= a {
                                band.add(a, b, blk[i * self.l + j]);
                            }
                        }
                    }
                }
            }
            let max_diag = (0..n).map(|a| band.get(a, a).abs()).fold(0.0, f64::max);
            match band.factor() {
                Ok(f) => {
                    let x = f.solve(rhs);
                    let res = self.relative_residual(&x, rhs);
                    return Ok((
                        x,
                        SolveReport {
                            iterations: 1,
                            residual: res,
                            method: SolveMethod::BandedCholesky,
                        },
                    ));
                }
                Err(Error::NotPositiveDefinite { value, .. }) if value < -1e-8 * max_diag => {
                    return Err(Error::IndefiniteCoarse { value });
                }
                Err(Error::NotPositiveDefinite { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        solve_spd(
            self,
            rhs,
            CgOptions {
                tol: DEFAULT_TOL,
                max_iter: None,
            },
        )
    }

    fn relative_residual(&self, x: &[f64], b: &[f64]) -> f64 {
        let mut y = vec![0.0; x.len()];
        self.apply(x, &mut y);
        let bn = dot(b, b).sqrt();
        if bn == 0.0 {
            return 0.0;
        }
        y.iter().zip(b).map(|(y, b)| (y - b).powi(2)).sum::<f64>().sqrt() / bn
    }

    /// Largest `|G_ab − G_ba|`.
    pub fn asymmetry(&self) -> f64 {
        let n = self.dim();
        let mut m: f64 = 0.0;
        for a in 0..n {
            for b in 0..a {
                m = m.max((self.get(a, b) - self.get(b, a)).abs());
            }
        }
        m
    }
}

impl LinearOperator for CoarseMatrix {
    fn dim(&self) -> usize {
        CoarseMatrix::dim(self)
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let l = self.l;
        for (p, row) in self.rows.iter().enumerate() {
            for i in 0..l {
                let mut s = 0.0;
                for (q, blk) in row {
                    s += dot(&blk[i * l..(i + 1) * l], &x[q * l..(q + 1) * l]);
                }
                y[p * l + i] = s;
            }
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|a| self.get(a, a)).collect()
    }
}

/// Multiscale space `V_{k,ms}^m` with its correctors for one active set.
/// Domains are shared between versions when their constraints are unchanged.
#[derive(Clone, Debug)]
pub struct MultiscaleSpace {
    pub version: usize,
    /// Active contact nodes the space conforms to.
    pub active: Vec<usize>,
    domains: Vec<Arc<DomainBasis>>,
    coarse: CoarseMatrix,
    /// `N^m p` on all fine nodes.
    corrector: Vec<f64>,
    /// Coarse elements whose domain was (re)built for this version.
    pub rebuilt: Vec<usize>,
}

impl MultiscaleSpace {
    pub fn n_columns(&self) -> usize {
        self.coarse.dim()
    }

    pub fn eigvecs(&self) -> usize {
        self.coarse.l
    }

    pub fn domain(&self, i: usize) -> &DomainBasis {
        &self.domains[i]
    }

    pub fn coarse_matrix(&self) -> &CoarseMatrix {
        &self.coarse
    }

    /// `N^m p` on all fine nodes.
    pub fn corrector(&self) -> &[f64] {
        &self.corrector
    }

    /// `ψ_i^j` extended by zero to all fine nodes.
    pub fn column(&self, g: &GridHierarchy, i: usize, j: usize) -> Vec<f64> {
        let d = &self.domains[i];
        let mut v = vec![0.0; g.n_nodes()];
        for (k, (ix, iy)) in d.domain.nodes.iter().enumerate() {
            v[g.node(ix, iy)] = d.psi[(k, j)];
        }
        v
    }

    /// Same domain object (not just equal values) as in `other`.
    pub fn shares_domain(&self, other: &MultiscaleSpace, i: usize) -> bool {
        Arc::ptr_eq(&self.domains[i], &other.domains[i])
    }

    /// `Ψᵀ v` for a fine-node vector.
    pub fn project_coefficients(&self, g: &GridHierarchy, v: &[f64]) -> Vec<f64> {
        let l = self.coarse.l;
        let mut out = vec![0.0; self.n_columns()];
        for (p, d) in self.domains.iter().enumerate() {
            let rect = &d.domain.nodes;
            let w = rect.width();
            for j in 0..l {
                let col = d.psi.column(j);
                let col = col.as_slice();
                out[p * l + j] = (rect.y0..=rect.y1)
                    .map(|iy| {
                        let a = rect.local(rect.x0, iy);
                        let b = g.node(rect.x0, iy);
                        dot(&col[a..a + w], &v[b..b + w])
                    })
                    .sum();
            }
        }
        out
    }

    /// `Ψ w` on all fine nodes.
    pub fn expand(&self, g: &GridHierarchy, w: &[f64]) -> Vec<f64> {
        let l = self.coarse.l;
        let mut u = vec![0.0; g.n_nodes()];
        for (p, d) in self.domains.iter().enumerate() {
            let rect = &d.domain.nodes;
            for j in 0..l {
                let c = w[p * l + j];
                if c == 0.0 {
                    continue;
                }
                for (k, (ix, iy)) in rect.iter().enumerate() {
                    u[g.node(ix, iy)] += c * d.psi[(k, j)];
                }
            }
        }
        u
    }
}

#[derive(Clone, Debug)]
pub struct CoarseSolution {
    /// Coefficients of `Ψ`.
    pub w: Vec<f64>,
    /// `Ψ w + N^m p` on all fine nodes.
    pub u: Vec<f64>,
    pub report: SolveReport,
}

/// Everything needed to build multiscale spaces for varying active sets on a
/// fixed medium, auxiliary space and oversampling depth.
pub struct CemBuilder {
    g: GridHierarchy,
    kappa: PermeabilityField,
    bd: BoundaryDecomposition,
    aux: AuxiliarySpace,
    layers: usize,
    cond: Vec<ElementCondensation>,
    /// Nonzero Neumann functionals on `∂K_i ∩ Γ_N`, per coarse element.
    neumann: Vec<Vec<(usize, f64)>>,
}

impl CemBuilder {
    pub fn new(
        g: &GridHierarchy,
        kappa: &PermeabilityField,
        bd: &BoundaryDecomposition,
        aux: AuxiliarySpace,
        layers: usize,
        p: &ScalarFunction,
    ) -> Result<Self> {
        kappa.check_grid(g)?;
        if aux.n_elements() != g.n_coarse() {
            return Err(Error::config("auxiliary space was built on a different coarse grid"));
        }
        let cond = (0..g.n_coarse())
            .into_par_iter()
            .map(|i| {
                ElementCondensation::new(g, kappa, &aux, i)
                    .context_with(|| format!("condensing coarse element {i}"))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut neumann = vec![Vec::new(); g.n_coarse()];
        if !p.is_zero() {
            for edge in bd.edges_with(BoundaryLabel::Neumann) {
                // the edge's owning coarse element
                let (x0, y0) = g.node_ij(edge.nodes[0]);
                let (x1, y1) = g.node_ij(edge.nodes[1]);
                let ex = x0.min(x1).min(g.nx_fine() - 1);
                let ey = y0.min(y1).min(g.ny_fine() - 1);
                let i = g.coarse_of_element(g.element(ex, ey));
                let v = edge_load(g, edge, p);
                for (n, v) in edge.nodes.into_iter().zip(v) {
                    if v != 0.0 {
                        neumann[i].push((n, v));
                    }
                }
            }
        }
        Ok(Self {
            g: g.clone(),
            kappa: kappa.clone(),
            bd: bd.clone(),
            aux,
            layers,
            cond,
            neumann,
        })
    }

    pub fn grid(&self) -> &GridHierarchy {
        &self.g
    }

    pub fn kappa(&self) -> &PermeabilityField {
        &self.kappa
    }

    pub fn aux(&self) -> &AuxiliarySpace {
        &self.aux
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    /// Changes the oversampling depth; the element condensations are reused.
    /// Depths of at least the coarse grid size give global basis functions.
    pub fn set_layers(&mut self, m: usize) {
        self.layers = m;
    }

    pub fn boundary(&self) -> &BoundaryDecomposition {
        &self.bd
    }

    pub fn restriction(&self, active: &[usize], version: usize) -> DofRestriction {
        DofRestriction::new(&self.g, &self.bd, active, version)
    }

    /// Right-hand side functional of the corrector of `K_i`, summed per node.
    pub fn corrector_functional(&self, i: usize) -> &[(usize, f64)] {
        &self.neumann[i]
    }

    fn build_domain(&self, i: usize, res: &DofRestriction) -> Result<DomainBasis> {
        let g = &self.g;
        let dom = g.oversample(i, self.layers);
        let sys = DomainSystem::new(self, &dom, res)
            .context_with(|| format!("local system of K_{i}^{} (version {})", self.layers, res.version))?;
        let l = self.aux.eigvecs();
        let has_corrector = !self.neumann[i].is_empty();
        let mut rhs = DMatrix::zeros(dom.nodes.len(), l + has_corrector as usize);
        let q = &self.aux.local(i).q;
        let krect = g.coarse_node_rect(i);
        for (loc, (ix, iy)) in krect.iter().enumerate() {
            let idx = dom.nodes.local(ix, iy);
            for j in 0..l {
                rhs[(idx, j)] = q[(loc, j)];
            }
        }
        if has_corrector {
            for &(n, v) in &self.neumann[i] {
                let (ix, iy) = g.node_ij(n);
                rhs[(dom.nodes.local(ix, iy), l)] += v;
            }
        }
        let sol = sys.solve(&rhs);
        let psi = sol.columns(0, l).into_owned();
        let corrector = has_corrector.then(|| sol.column(l).iter().copied().collect());
        Ok(DomainBasis {
            key: res.domain_key(g, &dom),
            domain: dom,
            psi,
            corrector,
        })
    }

    /// `ψ_{i,k}^{j,m}` on all fine nodes.
    pub fn build_basis_column(&self, res: &DofRestriction, i: usize, j: usize) -> Result<Vec<f64>> {
        let d = self
            .build_domain(i, res)
            .context_with(|| format!("basis function (i={i}, j={j}, m={}, k={})", self.layers, res.version))?;
        let mut v = vec![0.0; self.g.n_nodes()];
        for (k, (ix, iy)) in d.domain.nodes.iter().enumerate() {
            v[self.g.node(ix, iy)] = d.psi[(k, j)];
        }
        Ok(v)
    }

    /// `N_{i,k}^m p` on all fine nodes; zero without a solve when `K_i` has
    /// no Neumann data.
    pub fn build_corrector(&self, res: &DofRestriction, i: usize) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.g.n_nodes()];
        if self.neumann[i].is_empty() {
            return Ok(v);
        }
        let d = self
            .build_domain(i, res)
            .context_with(|| format!("corrector (i={i}, m={}, k={})", self.layers, res.version))?;
        if let Some(c) = &d.corrector {
            for (k, (ix, iy)) in d.domain.nodes.iter().enumerate() {
                v[self.g.node(ix, iy)] = c[k];
            }
        }
        Ok(v)
    }

    /// Builds every domain for the given active set.
    pub fn build(&self, active: &[usize]) -> Result<MultiscaleSpace> {
        let res = self.restriction(active, 0);
        let domains = (0..self.g.n_coarse())
            .into_par_iter()
            .map(|i| self.build_domain(i, &res).map(Arc::new))
            .collect::<Result<Vec<_>>>()?;
        let all: Vec<usize> = (0..self.g.n_coarse()).collect();
        Ok(self.assemble(domains, None, all, res))
    }

    /// New version for `active`, rebuilding only the domains whose
    /// constraints changed and reusing the others.
    pub fn refresh(&self, space: &MultiscaleSpace, active: &[usize]) -> Result<MultiscaleSpace> {
        let res = self.restriction(active, space.version + 1);
        let rebuilt: Vec<usize> = (0..self.g.n_coarse())
            .filter(|&i| res.domain_key(&self.g, &space.domains[i].domain) != space.domains[i].key)
            .collect();
        let fresh = rebuilt
            .par_iter()
            .map(|&i| self.build_domain(i, &res).map(Arc::new))
            .collect::<Result<Vec<_>>>()?;
        let mut domains = space.domains.clone();
        for (&i, d) in rebuilt.iter().zip(fresh) {
            domains[i] = d;
        }
        Ok(self.assemble(domains, Some(&space.coarse), rebuilt, res))
    }

    fn assemble(
        &self,
        domains: Vec<Arc<DomainBasis>>,
        old: Option<&CoarseMatrix>,
        rebuilt: Vec<usize>,
        res: DofRestriction,
    ) -> MultiscaleSpace {
        let coarse = self.coarse_matrix(&domains, old, &rebuilt);
        let g = &self.g;
        let mut corrector = vec![0.0; g.n_nodes()];
        for d in &domains {
            if let Some(c) = &d.corrector {
                for (k, (ix, iy)) in d.domain.nodes.iter().enumerate() {
                    corrector[g.node(ix, iy)] += c[k];
                }
            }
        }
        MultiscaleSpace {
            version: res.version,
            active: res.active,
            domains,
            coarse,
            corrector,
            rebuilt,
        }
    }

    /// `A x` restricted to a node rectangle for `x` vanishing on its border.
    fn apply_stiffness_rect(&self, rect: &NodeRect, x: &[f64], y: &mut [f64]) {
        y.fill(0.0);
        let w = rect.width();
        for ey in rect.y0..rect.y1 {
            for ex in rect.x0..rect.x1 {
                let k = self.kappa.get(self.g.element(ex, ey));
                let n0 = rect.local(ex, ey);
                let ids = [n0, n0 + 1, n0 + w + 1, n0 + w];
                let xv = ids.map(|i| x[i]);
                if xv == [0.0; 4] {
                    continue;
                }
                for a in 0..4 {
                    let s: f64 = (0..4).map(|b| UNIT_STIFFNESS[a][b] * xv[b]).sum();
                    y[ids[a]] += k * s;
                }
            }
        }
    }

    fn coarse_matrix(&self, domains: &[Arc<DomainBasis>], old: Option<&CoarseMatrix>, rebuilt: &[usize]) -> CoarseMatrix {
        let l = self.aux.eigvecs();
        let n = domains.len();
        let mut is_rebuilt = vec![old.is_none(); n];
        for &i in rebuilt {
            is_rebuilt[i] = true;
        }
        let reach = 2 * self.layers;
        let nc = self.g.coarse_per_axis();
        let neighbours = |q: usize| {
            let (cx, cy) = self.g.coarse_ij(q);
            let xs = cx.saturating_sub(reach)..=(cx + reach).min(nc - 1);
            let ys = cy.saturating_sub(reach)..=(cy + reach).min(nc - 1);
            ys.flat_map(move |y| xs.clone().map(move |x| y * nc + x))
        };
        // columns Q whose blocks must be computed, with every partner P
        let computed: Vec<Vec<(usize, Vec<f64>)>> = (0..n)
            .into_par_iter()
            .map(|q| {
                if !is_rebuilt[q] {
                    return Vec::new();
                }
                let dq = &domains[q];
                let rq = dq.domain.nodes;
                let mut apsi = DMatrix::zeros(rq.len(), l);
                for j in 0..l {
                    let mut y = vec![0.0; rq.len()];
                    self.apply_stiffness_rect(&rq, dq.psi.column(j).as_slice(), &mut y);
                    apsi.set_column(j, &nalgebra::DVector::from_vec(y));
                }
                neighbours(q)
                    .filter(|&p| !(is_rebuilt[p] && p < q))
                    .filter_map(|p| {
                        let dp = &domains[p];
                        let rp = dp.domain.nodes;
                        let int = rp.intersect(&rq)?;
                        let w = int.width();
                        let mut blk = vec![0.0; l * l];
                        for a in 0..l {
                            let pa = dp.psi.column(a);
                            let pa = pa.as_slice();
                            for b in 0..l {
                                let qb = apsi.column(b);
                                let qb = qb.as_slice();
                                blk[a * l + b] = (int.y0..=int.y1)
                                    .map(|iy| {
                                        let ia = rp.local(int.x0, iy);
                                        let ib = rq.local(int.x0, iy);
                                        dot(&pa[ia..ia + w], &qb[ib..ib + w])
                                    })
                                    .sum();
                            }
                        }
                        Some((p, blk))
                    })
                    .collect()
            })
            .collect();

        let mut rows: Vec<Vec<(usize, Vec<f64>)>> = vec![Vec::new(); n];
        if let Some(old) = old {
            for (p, row) in old.rows.iter().enumerate() {
                if is_rebuilt[p] {
                    continue;
                }
                rows[p] = row.iter().filter(|(q, _)| !is_rebuilt[*q]).cloned().collect();
            }
        }
        let transpose = |blk: &[f64]| {
            let mut t = vec![0.0; l * l];
            for a in 0..l {
                for b in 0..l {
                    t[b * l + a] = blk[a * l + b];
                }
            }
            t
        };
        for (q, col) in computed.into_iter().enumerate() {
            for (p, blk) in col {
                if p != q {
                    rows[q].push((p, transpose(&blk)));
                    rows[p].push((q, blk));
                } else {
                    // exact symmetry of diagonal blocks
                    let t = transpose(&blk);
                    let sym: Vec<f64> = blk.iter().zip(&t).map(|(a, b)| 0.5 * (a + b)).collect();
                    rows[p].push((q, sym));
                }
            }
        }
        for row in &mut rows {
            row.sort_unstable_by_key(|e| e.0);
        }
        CoarseMatrix { l, rows }
    }

    /// Coarse Galerkin solve `Ψᵀ A Ψ w = Ψᵀ (b − A N p)` and downscaling
    /// `u = Ψ w + N p`.
    pub fn solve(&self, space: &MultiscaleSpace, stiffness: &CsrMatrix, load: &[f64]) -> Result<CoarseSolution> {
        let g = &self.g;
        let anp = stiffness.mul_vec(&space.corrector);
        let r: Vec<f64> = load.iter().zip(&anp).map(|(b, a)| b - a).collect();
        let rhs = space.project_coefficients(g, &r);
        let (w, report) = space
            .coarse
            .solve(&rhs)
            .context_with(|| format!("coarse solve (version {})", space.version))?;
        let mut u = space.expand(g, &w);
        for (u, c) in u.iter_mut().zip(&space.corrector) {
            *u += c;
        }
        Ok(CoarseSolution { w, u, report })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_load, assemble_stiffness};
    use crate::grid::BoundarySpec;
    use crate::medium::{compute_weight, MediumStyle, WeightMode};
    use crate::numkernel::BandMatrix;

    struct Fixture {
        g: GridHierarchy,
        kappa: PermeabilityField,
        bd: BoundaryDecomposition,
        a: CsrMatrix,
    }

    fn fixture(nx: usize, nc: usize, kappa: Option<PermeabilityField>) -> Fixture {
        let g = GridHierarchy::new(nx, nc).unwrap();
        let kappa = kappa.unwrap_or_else(|| PermeabilityField::constant(&g, 1.0));
        let bd = BoundaryDecomposition::new(&g, &BoundarySpec::default()).unwrap();
        let a = assemble_stiffness(&g, &kappa);
        Fixture { g, kappa, bd, a }
    }

    fn builder(f: &Fixture, l: usize, m: usize, p: &ScalarFunction) -> CemBuilder {
        let w = compute_weight(&f.g, &f.kappa, WeightMode::Simplified);
        let aux = AuxiliarySpace::build(&f.g, &f.kappa, &w, l).unwrap();
        CemBuilder::new(&f.g, &f.kappa, &f.bd, aux, m, p).unwrap()
    }

    /// Dense oracle: assemble `A + Σ_K Q_K Q_Kᵀ` on the free nodes of the
    /// domain and solve directly.
    fn dense_column(f: &Fixture, b: &CemBuilder, res: &DofRestriction, i: usize, j: usize) -> Vec<f64> {
        let g = &f.g;
        let dom = g.oversample(i, b.layers());
        let free = res.free_nodes(g, &dom);
        let pos = |n: usize| free.iter().position(|&x| x == n);
        let nf = free.len();
        let mut m = DMatrix::<f64>::zeros(nf, nf);
        for e in dom.fine_elements() {
            let nodes = g.element_nodes(e);
            for a in 0..4 {
                for c in 0..4 {
                    if let (Some(pa), Some(pc)) = (pos(nodes[a]), pos(nodes[c])) {
                        m[(pa, pc)] += f.kappa.get(e) * UNIT_STIFFNESS[a][c];
                    }
                }
            }
        }
        for k in dom.coarse_elements() {
            let q = &b.aux().local(k).q;
            let rect = g.coarse_node_rect(k);
            let ids: Vec<Option<usize>> = rect.iter().map(|(ix, iy)| pos(g.node(ix, iy))).collect();
            for (la, pa) in ids.iter().enumerate() {
                for (lc, pc) in ids.iter().enumerate() {
                    if let (Some(pa), Some(pc)) = (pa, pc) {
                        m[(*pa, *pc)] += q.row(la).dot(&q.row(lc));
                    }
                }
            }
        }
        let mut rhs = nalgebra::DVector::zeros(nf);
        let rect = g.coarse_node_rect(i);
        for (loc, (ix, iy)) in rect.iter().enumerate() {
            if let Some(p) = pos(g.node(ix, iy)) {
                rhs[p] = b.aux().local(i).q[(loc, j)];
            }
        }
        let x = m.cholesky().unwrap().solve(&rhs);
        let mut v = vec![0.0; g.n_nodes()];
        for (k, &n) in free.iter().enumerate() {
            v[n] = x[k];
        }
        v
    }

    #[test]
    fn condensed_solve_matches_dense_oracle() {
        let g = GridHierarchy::new(24, 6).unwrap();
        let kappa = PermeabilityField::generate(&g, MediumStyle::Random, 1e4, 1).unwrap();
        let f = fixture(24, 6, Some(kappa));
        let b = builder(&f, 3, 2, &ScalarFunction::zero());
        let active: Vec<usize> = f.bd.contact_nodes.iter().copied().step_by(3).collect();
        let res = b.restriction(&active, 1);
        for (i, j) in [(0, 0), (7, 2), (14, 1), (35, 0), (3, 2)] {
            let got = b.build_basis_column(&res, i, j).unwrap();
            let want = dense_column(&f, &b, &res, i, j);
            let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for n in 0..g.n_nodes() {
                assert!((got[n] - want[n]).abs() <= 1e-9 * scale, "i={i} j={j} node {n}");
            }
        }
    }

    #[test]
    fn columns_are_conforming() {
        let f = fixture(20, 5, None);
        let b = builder(&f, 2, 1, &ScalarFunction::zero());
        let active: Vec<usize> = f.bd.contact_nodes[3..9].to_vec();
        let space = b.build(&active).unwrap();
        for i in 0..f.g.n_coarse() {
            let dom = f.g.oversample(i, 1);
            for j in 0..2 {
                let col = space.column(&f.g, i, j);
                for n in 0..f.g.n_nodes() {
                    let (ix, iy) = f.g.node_ij(n);
                    let outside = !dom.nodes.contains(ix, iy) || dom.is_interior_cut(ix, iy);
                    if outside || f.bd.is_dirichlet(n) || active.contains(&n) {
                        assert_eq!(col[n], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn maximal_oversampling_gives_global_basis() {
        let f = fixture(12, 3, None);
        let b = builder(&f, 2, 3, &ScalarFunction::zero());
        let res = b.restriction(&[], 0);
        let dom = f.g.oversample(4, 3);
        assert!(dom.interior_cut_nodes().is_empty());
        // the same column from a domain clipped at two layers already covers Ω
        let b2 = builder(&f, 2, 2, &ScalarFunction::zero());
        let c3 = b.build_basis_column(&res, 4, 1).unwrap();
        let c2 = b2.build_basis_column(&res, 4, 1).unwrap();
        for (x, y) in c3.iter().zip(&c2) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_vanishes_beyond_the_domain() {
        let f = fixture(16, 4, None);
        let b = builder(&f, 1, 1, &ScalarFunction::zero());
        let res = b.restriction(&[], 0);
        let col = b.build_basis_column(&res, 0, 0).unwrap();
        let pc = b.aux().project(&f.g, &col);
        for k in 0..16 {
            let (cx, cy) = f.g.coarse_ij(k);
            if cx > 1 || cy > 1 {
                assert!(pc.parts[k].amax() < 1e-14);
            }
        }
    }

    #[test]
    fn corrector_functionals_sum_to_neumann_load() {
        let f = fixture(12, 3, None);
        let p = ScalarFunction::Constant(1.0);
        let b = builder(&f, 2, 1, &p);
        let mut total = vec![0.0; f.g.n_nodes()];
        for i in 0..f.g.n_coarse() {
            for &(n, v) in b.corrector_functional(i) {
                total[n] += v;
            }
        }
        let want = assemble_load(&f.g, &ScalarFunction::zero(), &p, &f.bd);
        for (x, y) in total.iter().zip(&want) {
            assert!((x - y).abs() < 1e-15);
        }
        // interior elements carry no data and yield zero correctors
        let res = b.restriction(&[], 0);
        let centre = f.g.coarse_index(1, 1);
        assert!(b.corrector_functional(centre).is_empty());
        assert!(b.build_corrector(&res, centre).unwrap().iter().all(|&v| v == 0.0));
        let side = f.g.coarse_index(0, 1);
        assert!(b.build_corrector(&res, side).unwrap().iter().any(|&v| v != 0.0));
        // zero data gives zero correctors everywhere
        let b0 = builder(&f, 2, 1, &ScalarFunction::zero());
        let s0 = b0.build(&[]).unwrap();
        assert!(s0.corrector().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let f = fixture(12, 3, None);
        let b = builder(&f, 2, 1, &ScalarFunction::zero());
        let space = b.build(&[]).unwrap();
        let sol = b.solve(&space, &f.a, &vec![0.0; f.g.n_nodes()]).unwrap();
        assert!(sol.w.iter().all(|&v| v == 0.0));
        assert!(sol.u.iter().all(|&v| v == 0.0));
        assert!(space.coarse_matrix().asymmetry() <= 1e-10);
    }

    /// Fine solve on the nodes that are not Dirichlet or active.
    fn fine_solve(f: &Fixture, load: &[f64], active: &[usize]) -> Vec<f64> {
        let free: Vec<usize> = (0..f.g.n_nodes())
            .filter(|&n| !f.bd.is_dirichlet(n) && !active.contains(&n))
            .collect();
        let sub = f.a.principal_submatrix(&free);
        let bw = sub.bandwidth();
        let mut band = BandMatrix::zeros(free.len(), bw);
        for i in 0..free.len() {
            for (j, v) in sub.row(i) {
                if j <= i {
                    band.add(i, j, v);
                }
            }
        }
        let rhs: Vec<f64> = free.iter().map(|&n| load[n]).collect();
        let x = band.factor().unwrap().solve(&rhs);
        let mut u = vec![0.0; f.g.n_nodes()];
        for (k, &n) in free.iter().enumerate() {
            u[n] = x[k];
        }
        u
    }

    #[test]
    fn full_span_reproduces_fine_solution() {
        let g = GridHierarchy::new(4, 2).unwrap();
        let kappa = PermeabilityField::generate(&g, MediumStyle::Random, 1e2, 4).unwrap();
        let f = fixture(4, 2, Some(kappa));
        let p: ScalarFunction = "x - y".parse().unwrap();
        let b = builder(&f, 9, 1, &p);
        let load = assemble_load(&f.g, &ScalarFunction::F1, &p, &f.bd);
        let active = vec![f.bd.contact_nodes[2]];
        let space = b.build(&active).unwrap();
        let sol = b.solve(&space, &f.a, &load).unwrap();
        let want = fine_solve(&f, &load, &active);
        let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (x, y) in sol.u.iter().zip(&want) {
            assert!((x - y).abs() <= 1e-8 * scale, "{x} vs {y}");
        }
    }

    #[test]
    fn galerkin_orthogonality_and_coarse_symmetry() {
        let g = GridHierarchy::new(30, 5).unwrap();
        let kappa = PermeabilityField::generate(&g, MediumStyle::A, 1e3, 2).unwrap();
        let f = fixture(30, 5, Some(kappa));
        let p = ScalarFunction::Constant(0.5);
        let b = builder(&f, 3, 2, &p);
        let load = assemble_load(&f.g, &ScalarFunction::F2, &p, &f.bd);
        let active: Vec<usize> = f.bd.contact_nodes[5..20].to_vec();
        let space = b.build(&active).unwrap();
        let sol = b.solve(&space, &f.a, &load).unwrap();
        let au = f.a.mul_vec(&sol.u);
        let r: Vec<f64> = load.iter().zip(&au).map(|(b, a)| b - a).collect();
        let pr = space.project_coefficients(&f.g, &r);
        let pb = space.project_coefficients(&f.g, &load);
        let scale = pb.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(pr.iter().all(|v| v.abs() <= 1e-9 * scale));
        assert!(space.coarse_matrix().asymmetry() <= 1e-10);

        // blocks agree with the congruence Ψᵀ A Ψ on global vectors
        let dense = space.coarse_matrix().to_dense();
        for (pi, pj, qi, qj) in [(0, 0, 0, 0), (6, 1, 7, 2), (12, 0, 24, 1), (3, 2, 3, 1)] {
            let x = space.column(&f.g, pi, pj);
            let y = space.column(&f.g, qi, qj);
            let want = dot(&x, &f.a.mul_vec(&y));
            let got = dense[(pi * 3 + pj, qi * 3 + qj)];
            assert!((got - want).abs() <= 1e-10 * want.abs().max(1e-12), "{got} vs {want}");
        }
    }

    #[test]
    fn refresh_matches_full_rebuild() {
        let g = GridHierarchy::new(25, 5).unwrap();
        let kappa = PermeabilityField::generate(&g, MediumStyle::B, 1e3, 9).unwrap();
        let f = fixture(25, 5, Some(kappa));
        let p = ScalarFunction::Constant(1.0);
        let b = builder(&f, 2, 1, &p);
        let load = assemble_load(&f.g, &ScalarFunction::F1, &p, &f.bd);
        let s0 = b.build(&[]).unwrap();

        let same = b.refresh(&s0, &[]).unwrap();
        assert!(same.rebuilt.is_empty());
        assert_eq!(same.version, 1);

        // one changed node strictly inside the bottom edge of coarse element (2, 0)
        let node = f.g.node(12, 0);
        let s1 = b.refresh(&s0, &[node]).unwrap();
        let mut want: Vec<usize> = (0..f.g.n_coarse())
            .filter(|&i| f.g.oversample(i, 1).contains_coarse(f.g.coarse_index(2, 0)))
            .collect();
        want.sort_unstable();
        assert_eq!(s1.rebuilt, want);
        assert!(want.len() <= 3 * 2);
        for i in 0..f.g.n_coarse() {
            assert_eq!(s1.shares_domain(&s0, i), !want.contains(&i));
        }

        let full = b.build(&[node]).unwrap();
        let u_inc = b.solve(&s1, &f.a, &load).unwrap().u;
        let u_full = b.solve(&full, &f.a, &load).unwrap().u;
        let scale = u_full.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (x, y) in u_inc.iter().zip(&u_full) {
            assert!((x - y).abs() <= 1e-10 * scale);
        }
    }
}
