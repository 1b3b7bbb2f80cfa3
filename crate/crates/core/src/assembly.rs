//! Bilinear finite element operators on the fine grid.

use nalgebra::DMatrix;

use crate::grid::{BoundaryDecomposition, BoundaryEdge, BoundaryLabel, GridHierarchy, NodeRect};
use crate::medium::PermeabilityField;
use crate::source::ScalarFunction;
use crate::sparse::CsrMatrix;

/// Element stiffness of a square bilinear element with unit coefficient.
/// Independent of the element size in two dimensions.
pub const UNIT_STIFFNESS: [[f64; 4]; 4] = [
    [2.0 / 3.0, -1.0 / 6.0, -1.0 / 3.0, -1.0 / 6.0],
    [-1.0 / 6.0, 2.0 / 3.0, -1.0 / 6.0, -1.0 / 3.0],
    [-1.0 / 3.0, -1.0 / 6.0, 2.0 / 3.0, -1.0 / 6.0],
    [-1.0 / 6.0, -1.0 / 3.0, -1.0 / 6.0, 2.0 / 3.0],
];

/// Element mass of the unit square; scale by `h²`.
pub const UNIT_MASS: [[f64; 4]; 4] = [
    [1.0 / 9.0, 1.0 / 18.0, 1.0 / 36.0, 1.0 / 18.0],
    [1.0 / 18.0, 1.0 / 9.0, 1.0 / 18.0, 1.0 / 36.0],
    [1.0 / 36.0, 1.0 / 18.0, 1.0 / 9.0, 1.0 / 18.0],
    [1.0 / 18.0, 1.0 / 36.0, 1.0 / 18.0, 1.0 / 9.0],
];

const GAUSS_2: [f64; 2] = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];

fn assemble_elementwise(g: &GridHierarchy, coef: impl Fn(usize) -> f64, block: &[[f64; 4]; 4]) -> CsrMatrix {
    let mut t = Vec::with_capacity(16 * g.n_elements());
    for e in 0..g.n_elements() {
        let c = coef(e);
        let nodes = g.element_nodes(e);
        for a in 0..4 {
            for b in 0..4 {
                t.push((nodes[a], nodes[b], c * block[a][b]));
            }
        }
    }
    CsrMatrix::from_triplets(g.n_nodes(), g.n_nodes(), t)
}

/// `a(u, v) = ∫ κ ∇u·∇v`.
pub fn assemble_stiffness(g: &GridHierarchy, kappa: &PermeabilityField) -> CsrMatrix {
    assert!(kappa.matches(g), "medium does not match the grid");
    assemble_elementwise(g, |e| kappa.get(e), &UNIT_STIFFNESS)
}

/// `s(u, v) = ∫ w u v` for a per-element weight.
pub fn assemble_weighted_mass(g: &GridHierarchy, weight: &[f64]) -> CsrMatrix {
    assert_eq!(weight.len(), g.n_elements());
    let h2 = g.h() * g.h();
    assemble_elementwise(g, |e| weight[e] * h2, &UNIT_MASS)
}

/// Unweighted `L²` mass matrix.
pub fn assemble_mass(g: &GridHierarchy) -> CsrMatrix {
    let h2 = g.h() * g.h();
    assemble_elementwise(g, |_| h2, &UNIT_MASS)
}

/// Dense element-block operator on the nodes of coarse element `i`, indexed
/// lexicographically within `g.coarse_node_rect(i)`.
pub fn coarse_local_matrix(g: &GridHierarchy, i: usize, coef: impl Fn(usize) -> f64, block: &[[f64; 4]; 4]) -> DMatrix<f64> {
    let rect = g.coarse_node_rect(i);
    let n = rect.len();
    let mut m = DMatrix::zeros(n, n);
    for e in g.coarse_fine_elements(i) {
        let c = coef(e);
        let loc = local_element_nodes(g, &rect, e);
        for a in 0..4 {
            for b in 0..4 {
                m[(loc[a], loc[b])] += c * block[a][b];
            }
        }
    }
    m
}

/// Positions of an element's nodes within a node rectangle.
pub fn local_element_nodes(g: &GridHierarchy, rect: &NodeRect, e: usize) -> [usize; 4] {
    g.element_nodes(e).map(|n| {
        let (ix, iy) = g.node_ij(n);
        rect.local(ix, iy)
    })
}

/// `∫_τ f η_a` for the four nodes of fine element `e` (2×2 Gauss).
pub fn element_load(g: &GridHierarchy, e: usize, f: &ScalarFunction) -> [f64; 4] {
    let h = g.h();
    let (ex, ey) = g.element_ij(e);
    let mut out = [0.0; 4];
    for &qy in &GAUSS_2 {
        for &qx in &GAUSS_2 {
            let v = f.eval((ex as f64 + qx) * h, (ey as f64 + qy) * h) * h * h / 4.0;
            let shape = [(1.0 - qx) * (1.0 - qy), qx * (1.0 - qy), qx * qy, (1.0 - qx) * qy];
            for a in 0..4 {
                out[a] += v * shape[a];
            }
        }
    }
    out
}

/// `∫_edge p η_a` for the two edge nodes (2-point Gauss).
pub fn edge_load(g: &GridHierarchy, edge: &BoundaryEdge, p: &ScalarFunction) -> [f64; 2] {
    let h = g.h();
    let (x0, y0) = g.node_xy(edge.nodes[0]);
    let (x1, y1) = g.node_xy(edge.nodes[1]);
    let mut out = [0.0; 2];
    for &t in &GAUSS_2 {
        let v = p.eval(x0 + t * (x1 - x0), y0 + t * (y1 - y0)) * h / 2.0;
        out[0] += v * (1.0 - t);
        out[1] += v * t;
    }
    out
}

/// `L(v) = ∫ f v + ∫_{Γ_N} p v`.
pub fn assemble_load(g: &GridHierarchy, f: &ScalarFunction, p: &ScalarFunction, bd: &BoundaryDecomposition) -> Vec<f64> {
    let mut b = vec![0.0; g.n_nodes()];
    if !f.is_zero() {
        for e in 0..g.n_elements() {
            let le = element_load(g, e, f);
            for (a, n) in g.element_nodes(e).into_iter().enumerate() {
                b[n] += le[a];
            }
        }
    }
    if !p.is_zero() {
        for edge in bd.edges_with(BoundaryLabel::Neumann) {
            let le = edge_load(g, edge, p);
            b[edge.nodes[0]] += le[0];
            b[edge.nodes[1]] += le[1];
        }
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundarySpec;
    use crate::medium::MediumStyle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent element integrals: tensor Gauss quadrature (3 points,
    /// exact for the bilinear products) of the shape function gradients.
    fn quadrature_blocks(h: f64) -> ([[f64; 4]; 4], [[f64; 4]; 4]) {
        let pts = [
            (0.5 - 0.5 * (0.6f64).sqrt(), 5.0 / 18.0),
            (0.5, 8.0 / 18.0),
            (0.5 + 0.5 * (0.6f64).sqrt(), 5.0 / 18.0),
        ];
        let shape = |x: f64, y: f64| [(1.0 - x) * (1.0 - y), x * (1.0 - y), x * y, (1.0 - x) * y];
        let grad = |x: f64, y: f64| {
            [
                [-(1.0 - y) / h, -(1.0 - x) / h],
                [(1.0 - y) / h, -x / h],
                [y / h, x / h],
                [-y / h, (1.0 - x) / h],
            ]
        };
        let mut k = [[0.0; 4]; 4];
        let mut m = [[0.0; 4]; 4];
        for &(x, wx) in &pts {
            for &(y, wy) in &pts {
                let w = wx * wy * h * h;
                let s = shape(x, y);
                let gr = grad(x, y);
                for a in 0..4 {
                    for b in 0..4 {
                        k[a][b] += w * (gr[a][0] * gr[b][0] + gr[a][1] * gr[b][1]);
                        m[a][b] += w * s[a] * s[b];
                    }
                }
            }
        }
        (k, m)
    }

    #[test]
    fn element_blocks_match_quadrature() {
        for h in [1.0, 0.25, 0.01] {
            let (k, m) = quadrature_blocks(h);
            for a in 0..4 {
                for b in 0..4 {
                    assert!((k[a][b] - UNIT_STIFFNESS[a][b]).abs() < 1e-13);
                    assert!((m[a][b] - h * h * UNIT_MASS[a][b]).abs() < 1e-13 * h * h);
                }
            }
        }
    }

    #[test]
    fn single_element_blocks() {
        // the corner node of a 2×2 grid touches a single element
        let g = GridHierarchy::new(2, 2).unwrap();
        let a = assemble_stiffness(&g, &PermeabilityField::constant(&g, 1.0));
        let n = g.element_nodes(0);
        assert!((a.get(n[0], n[0]) - 2.0 / 3.0).abs() < 1e-14);
        assert!((a.get(n[0], n[2]) + 1.0 / 3.0).abs() < 1e-14);
        assert!((a.get(n[0], n[1]) + 1.0 / 6.0).abs() < 1e-14);

        let s = assemble_weighted_mass(&g, &[1.0 / (g.h() * g.h()); 4]);
        assert!((s.get(n[0], n[0]) - 1.0 / 9.0).abs() < 1e-14);
        assert!((s.get(n[0], n[1]) - 1.0 / 18.0).abs() < 1e-14);
        assert!((s.get(n[0], n[2]) - 1.0 / 36.0).abs() < 1e-14);
    }

    #[test]
    fn stiffness_kernel_and_symmetry() {
        let g = GridHierarchy::new(6, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vals: Vec<f64> = (0..36).map(|_| rng.random_range(0.1..100.0)).collect();
        let kappa = PermeabilityField::from_values(6, 6, vals).unwrap();
        let a = assemble_stiffness(&g, &kappa);
        let ones = vec![1.0; g.n_nodes()];
        assert!(a.mul_vec(&ones).iter().all(|v| v.abs() < 1e-12));
        assert!(a.asymmetry() == 0.0);
        let scaled = PermeabilityField::from_values(6, 6, kappa.values().iter().map(|v| 4.0 * v).collect()).unwrap();
        let a4 = assemble_stiffness(&g, &scaled);
        for i in 0..g.n_nodes() {
            for (j, v) in a.row(i) {
                assert!((a4.get(i, j) - 4.0 * v).abs() <= 1e-12 * v.abs());
            }
        }
    }

    #[test]
    fn mass_total_and_definiteness() {
        let g = GridHierarchy::new(4, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w: Vec<f64> = (0..16).map(|_| rng.random_range(0.5..5.0)).collect();
        let s = assemble_weighted_mass(&g, &w);
        let ones = vec![1.0; g.n_nodes()];
        let total: f64 = w.iter().sum::<f64>() * g.h() * g.h();
        assert!((s.quadratic_form(&ones) - total).abs() < 1e-13);
        let eig = nalgebra::SymmetricEigen::new(s.to_dense());
        assert!(eig.eigenvalues.min() > 0.0);
    }

    #[test]
    fn load_single_element_and_edge() {
        let g = GridHierarchy::new(2, 2).unwrap();
        let le = element_load(&g, 0, &ScalarFunction::Constant(1.0));
        for v in le {
            assert!((v - g.h() * g.h() / 4.0).abs() < 1e-15);
        }
        let bd = BoundaryDecomposition::new(&g, &BoundarySpec::default()).unwrap();
        let edge = bd.edges_with(BoundaryLabel::Neumann).next().unwrap();
        let le = edge_load(&g, edge, &ScalarFunction::Constant(1.0));
        assert!((le[0] - g.h() / 2.0).abs() < 1e-15 && (le[1] - g.h() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn load_integrates_f1() {
        // ∫(−2x+3y) = 1/2 and ∫ sin(2πx) sin(2πy) = 0 over the unit square
        let g = GridHierarchy::new(64, 8).unwrap();
        let bd = BoundaryDecomposition::new(&g, &BoundarySpec::default()).unwrap();
        let b = assemble_load(&g, &ScalarFunction::F1, &ScalarFunction::zero(), &bd);
        assert!((b.iter().sum::<f64>() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn load_support() {
        let g = GridHierarchy::new(8, 4).unwrap();
        let bd = BoundaryDecomposition::new(&g, &BoundarySpec::default()).unwrap();
        let f: ScalarFunction = "if(x < 0.25, 1.0, 0.0)".parse().unwrap();
        let b = assemble_load(&g, &f, &ScalarFunction::zero(), &bd);
        for n in 0..g.n_nodes() {
            let (ix, _) = g.node_ij(n);
            if ix > 3 {
                assert_eq!(b[n], 0.0);
            }
        }
    }

    #[test]
    fn coarse_local_matches_global_on_interior_block() {
        let g = GridHierarchy::new(8, 2).unwrap();
        let kappa = PermeabilityField::generate(&g, MediumStyle::Random, 100.0, 2).unwrap();
        let a = assemble_stiffness(&g, &kappa);
        let loc = coarse_local_matrix(&g, 0, |e| kappa.get(e), &UNIT_STIFFNESS);
        let rect = g.coarse_node_rect(0);
        // nodes strictly inside the coarse element see only its elements
        for (ix, iy) in rect.iter() {
            if ix == 0 || iy == 0 || ix == rect.x1 || iy == rect.y1 {
                continue;
            }
            let gi = g.node(ix, iy);
            for (jx, jy) in rect.iter() {
                let gj = g.node(jx, jy);
                let want = a.get(gi, gj);
                assert!((loc[(rect.local(ix, iy), rect.local(jx, jy))] - want).abs() < 1e-12);
            }
        }
    }
}
