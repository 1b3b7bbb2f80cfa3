//! Nested structured quadrilateral meshes on the unit square.
//!
//! Fine nodes are numbered lexicographically, `node = iy * (nx + 1) + ix`,
//! fine elements as `ey * nx + ex` and coarse elements as `cy * nc + cx`.
//! Local element node order is counter-clockwise starting at the lower-left
//! corner.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridHierarchy {
    nx: usize,
    nc: usize,
    ratio: usize,
}

/// Inclusive rectangle of fine node coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeRect {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

impl NodeRect {
    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    pub fn len(&self) -> usize {
        self.width() * self.height()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, ix: usize, iy: usize) -> bool {
        ix >= self.x0 && ix <= self.x1 && iy >= self.y0 && iy <= self.y1
    }

    /// Row-major index inside the rectangle.
    pub fn local(&self, ix: usize, iy: usize) -> usize {
        (iy - self.y0) * self.width() + (ix - self.x0)
    }

    pub fn intersect(&self, other: &NodeRect) -> Option<NodeRect> {
        let r = NodeRect {
            x0: self.x0.max(other.x0),
            x1: self.x1.min(other.x1),
            y0: self.y0.max(other.y0),
            y1: self.y1.min(other.y1),
        };
        (r.x0 <= r.x1 && r.y0 <= r.y1).then_some(r)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.y0..=self.y1).flat_map(move |iy| (self.x0..=self.x1).map(move |ix| (ix, iy)))
    }
}

impl GridHierarchy {
    /// Fine `nx_fine x nx_fine` grid nested in a coarse
    /// `n_coarse_per_axis x n_coarse_per_axis` grid.
    pub fn new(nx_fine: usize, n_coarse_per_axis: usize) -> Result<Self> {
        if nx_fine < 2 || n_coarse_per_axis < 2 {
            return Err(Error::config(format!(
                "grid sizes must be at least 2 (nx_fine = {nx_fine}, coarse per axis = {n_coarse_per_axis})"
            )));
        }
        if nx_fine % n_coarse_per_axis != 0 {
            return Err(Error::config(format!(
                "fine size {nx_fine} is not divisible by coarse size {n_coarse_per_axis}"
            )));
        }
        Ok(Self {
            nx: nx_fine,
            nc: n_coarse_per_axis,
            ratio: nx_fine / n_coarse_per_axis,
        })
    }

    pub fn nx_fine(&self) -> usize {
        self.nx
    }

    pub fn ny_fine(&self) -> usize {
        self.nx
    }

    /// Fine mesh size `h`.
    pub fn h(&self) -> f64 {
        1.0 / self.nx as f64
    }

    /// Coarse mesh size `H`.
    pub fn coarse_h(&self) -> f64 {
        1.0 / self.nc as f64
    }

    pub fn ratio(&self) -> usize {
        self.ratio
    }

    pub fn coarse_per_axis(&self) -> usize {
        self.nc
    }

    pub fn n_coarse(&self) -> usize {
        self.nc * self.nc
    }

    pub fn n_nodes(&self) -> usize {
        (self.nx + 1) * (self.nx + 1)
    }

    pub fn n_elements(&self) -> usize {
        self.nx * self.nx
    }

    pub fn node(&self, ix: usize, iy: usize) -> usize {
        iy * (self.nx + 1) + ix
    }

    pub fn node_ij(&self, node: usize) -> (usize, usize) {
        (node % (self.nx + 1), node / (self.nx + 1))
    }

    pub fn node_xy(&self, node: usize) -> (f64, f64) {
        let (ix, iy) = self.node_ij(node);
        (ix as f64 * self.h(), iy as f64 * self.h())
    }

    pub fn element(&self, ex: usize, ey: usize) -> usize {
        ey * self.nx + ex
    }

    pub fn element_ij(&self, e: usize) -> (usize, usize) {
        (e % self.nx, e / self.nx)
    }

    pub fn element_nodes(&self, e: usize) -> [usize; 4] {
        let (ex, ey) = self.element_ij(e);
        [
            self.node(ex, ey),
            self.node(ex + 1, ey),
            self.node(ex + 1, ey + 1),
            self.node(ex, ey + 1),
        ]
    }

    pub fn coarse_ij(&self, i: usize) -> (usize, usize) {
        (i % self.nc, i / self.nc)
    }

    pub fn coarse_index(&self, cx: usize, cy: usize) -> usize {
        cy * self.nc + cx
    }

    /// Coarse element that owns fine element `e`.
    pub fn coarse_of_element(&self, e: usize) -> usize {
        let (ex, ey) = self.element_ij(e);
        self.coarse_index(ex / self.ratio, ey / self.ratio)
    }

    pub fn coarse_node_rect(&self, i: usize) -> NodeRect {
        let (cx, cy) = self.coarse_ij(i);
        NodeRect {
            x0: cx * self.ratio,
            x1: (cx + 1) * self.ratio,
            y0: cy * self.ratio,
            y1: (cy + 1) * self.ratio,
        }
    }

    /// Fine elements of coarse element `i`, row-major.
    pub fn coarse_fine_elements(&self, i: usize) -> Vec<usize> {
        let (cx, cy) = self.coarse_ij(i);
        let r = self.ratio;
        (cy * r..(cy + 1) * r)
            .flat_map(|ey| (cx * r..(cx + 1) * r).map(move |ex| (ex, ey)))
            .map(|(ex, ey)| self.element(ex, ey))
            .collect()
    }

    /// Coarse elements whose closure contains the fine node.
    pub fn coarse_elements_of_node(&self, node: usize) -> Vec<usize> {
        let (ix, iy) = self.node_ij(node);
        let span = |i: usize| -> Vec<usize> {
            let c = i / self.ratio;
            let mut v = Vec::with_capacity(2);
            if i % self.ratio == 0 && c > 0 {
                v.push(c - 1);
            }
            if c < self.nc {
                v.push(c);
            }
            v
        };
        let xs = span(ix);
        let ys = span(iy);
        ys.iter()
            .flat_map(|&cy| xs.iter().map(move |&cx| (cx, cy)))
            .map(|(cx, cy)| self.coarse_index(cx, cy))
            .collect()
    }

    /// True when the fine node lies on a coarse grid line.
    pub fn on_skeleton(&self, ix: usize, iy: usize) -> bool {
        ix % self.ratio == 0 || iy % self.ratio == 0
    }

    pub fn on_outer_boundary(&self, ix: usize, iy: usize) -> bool {
        ix == 0 || iy == 0 || ix == self.nx || iy == self.nx
    }

    /// Oversampled domain `K_i^m`.
    pub fn oversample(&self, i: usize, m: usize) -> OversampleDomain {
        let (cx, cy) = self.coarse_ij(i);
        let cx0 = cx.saturating_sub(m);
        let cy0 = cy.saturating_sub(m);
        let cx1 = (cx + m).min(self.nc - 1);
        let cy1 = (cy + m).min(self.nc - 1);
        OversampleDomain {
            coarse_index: i,
            layers: m,
            cx0,
            cx1,
            cy0,
            cy1,
            nodes: NodeRect {
                x0: cx0 * self.ratio,
                x1: (cx1 + 1) * self.ratio,
                y0: cy0 * self.ratio,
                y1: (cy1 + 1) * self.ratio,
            },
            nx: self.nx,
            nc: self.nc,
            ratio: self.ratio,
        }
    }
}

/// Coarse element `K_i` enlarged by `m` layers of neighbours, clipped to the
/// unit square. Always a rectangle of coarse elements.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OversampleDomain {
    pub coarse_index: usize,
    pub layers: usize,
    pub cx0: usize,
    pub cx1: usize,
    pub cy0: usize,
    pub cy1: usize,
    pub nodes: NodeRect,
    nx: usize,
    nc: usize,
    ratio: usize,
}

impl OversampleDomain {
    pub fn coarse_elements(&self) -> Vec<usize> {
        (self.cy0..=self.cy1)
            .flat_map(|cy| (self.cx0..=self.cx1).map(move |cx| cy * self.nc + cx))
            .collect()
    }

    pub fn contains_coarse(&self, i: usize) -> bool {
        let (cx, cy) = (i % self.nc, i / self.nc);
        cx >= self.cx0 && cx <= self.cx1 && cy >= self.cy0 && cy <= self.cy1
    }

    pub fn fine_elements(&self) -> Vec<usize> {
        let r = self.ratio;
        (self.cy0 * r..(self.cy1 + 1) * r)
            .flat_map(|ey| (self.cx0 * r..(self.cx1 + 1) * r).map(move |ex| ey * self.nx + ex))
            .collect()
    }

    pub fn fine_nodes(&self) -> Vec<usize> {
        self.nodes.iter().map(|(ix, iy)| iy * (self.nx + 1) + ix).collect()
    }

    pub fn contains_node(&self, node: usize) -> bool {
        let (ix, iy) = (node % (self.nx + 1), node / (self.nx + 1));
        self.nodes.contains(ix, iy)
    }

    /// Node of the domain shared with a fine element outside it. These nodes
    /// must carry zero so the zero extension stays continuous; this includes
    /// the endpoints of a cut line that sit on the outer boundary.
    pub fn is_interior_cut(&self, ix: usize, iy: usize) -> bool {
        let r = &self.nodes;
        (ix == r.x0 && r.x0 > 0)
            || (ix == r.x1 && r.x1 < self.nx)
            || (iy == r.y0 && r.y0 > 0)
            || (iy == r.y1 && r.y1 < self.nx)
    }

    pub fn interior_cut_nodes(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|&(ix, iy)| self.is_interior_cut(ix, iy))
            .map(|(ix, iy)| iy * (self.nx + 1) + ix)
            .collect()
    }

    /// Nodes on `∂K_i^m ∩ ∂Ω` that are not cut nodes.
    pub fn outer_boundary_nodes(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|&(ix, iy)| {
                (ix == 0 || iy == 0 || ix == self.nx || iy == self.nx) && !self.is_interior_cut(ix, iy)
            })
            .map(|(ix, iy)| iy * (self.nx + 1) + ix)
            .collect()
    }

    pub fn n_coarse(&self) -> usize {
        (self.cx1 - self.cx0 + 1) * (self.cy1 - self.cy0 + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    #[serde(rename = "bottom")]
    Bottom,
    #[serde(rename = "right")]
    Right,
    #[serde(rename = "top")]
    Top,
    #[serde(rename = "left")]
    Left,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Bottom, Side::Right, Side::Top, Side::Left];

    pub fn outward_normal(self) -> [f64; 2] {
        match self {
            Side::Bottom => [0.0, -1.0],
            Side::Right => [1.0, 0.0],
            Side::Top => [0.0, 1.0],
            Side::Left => [-1.0, 0.0],
        }
    }
}

/// Boundary condition type. The derived order is the corner precedence:
/// Dirichlet beats contact beats Neumann.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BoundaryLabel {
    #[serde(rename = "D")]
    Dirichlet,
    #[serde(rename = "C")]
    Contact,
    #[serde(rename = "N")]
    Neumann,
}

impl fmt::Display for BoundaryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundaryLabel::Dirichlet => "D",
            BoundaryLabel::Contact => "C",
            BoundaryLabel::Neumann => "N",
        })
    }
}

/// Sub-interval `[from, to]` of a side (in the side's coordinate) overriding
/// the side label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub side: Side,
    pub from: f64,
    pub to: f64,
    pub label: BoundaryLabel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySpec {
    pub bottom: BoundaryLabel,
    pub top: BoundaryLabel,
    pub left: BoundaryLabel,
    pub right: BoundaryLabel,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub segments: Vec<Segment>,
}

impl Default for BoundarySpec {
    fn default() -> Self {
        Self {
            bottom: BoundaryLabel::Contact,
            top: BoundaryLabel::Dirichlet,
            left: BoundaryLabel::Neumann,
            right: BoundaryLabel::Neumann,
            segments: Vec::new(),
        }
    }
}

impl BoundarySpec {
    fn side_label(&self, side: Side) -> BoundaryLabel {
        match side {
            Side::Bottom => self.bottom,
            Side::Top => self.top,
            Side::Left => self.left,
            Side::Right => self.right,
        }
    }

    /// Label of the boundary point at coordinate `t` along `side`.
    pub fn label_at(&self, side: Side, t: f64) -> BoundaryLabel {
        self.segments
            .iter()
            .rev()
            .find(|s| s.side == side && t >= s.from && t <= s.to)
            .map(|s| s.label)
            .unwrap_or_else(|| self.side_label(side))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub side: Side,
    pub label: BoundaryLabel,
}

/// Partition of the fine boundary edges into `Γ_D`, `Γ_N` and `Γ_C`, plus
/// derived node sets.
#[derive(Clone, Debug)]
pub struct BoundaryDecomposition {
    pub edges: Vec<BoundaryEdge>,
    node_label: Vec<Option<BoundaryLabel>>,
    node_side: Vec<Option<Side>>,
    /// Contact nodes ordered by `(x, y)`.
    pub contact_nodes: Vec<usize>,
    pub dirichlet_nodes: Vec<usize>,
}

impl BoundaryDecomposition {
    pub fn new(g: &GridHierarchy, spec: &BoundarySpec) -> Result<Self> {
        let nx = g.nx_fine();
        let h = g.h();
        let mut edges = Vec::with_capacity(4 * nx);
        for side in Side::ALL {
            for k in 0..nx {
                let (a, b) = match side {
                    Side::Bottom => (g.node(k, 0), g.node(k + 1, 0)),
                    Side::Top => (g.node(k, nx), g.node(k + 1, nx)),
                    Side::Left => (g.node(0, k), g.node(0, k + 1)),
                    Side::Right => (g.node(nx, k), g.node(nx, k + 1)),
                };
                let mid = (k as f64 + 0.5) * h;
                edges.push(BoundaryEdge {
                    nodes: [a, b],
                    side,
                    label: spec.label_at(side, mid),
                });
            }
        }
        for label in [
            BoundaryLabel::Dirichlet,
            BoundaryLabel::Neumann,
            BoundaryLabel::Contact,
        ] {
            if !edges.iter().any(|e| e.label == label) {
                return Err(Error::config(format!(
                    "boundary parts must be three nonempty disjoint sets; no edge is labelled {label}"
                )));
            }
        }

        let mut node_label: Vec<Option<BoundaryLabel>> = vec![None; g.n_nodes()];
        let mut node_side: Vec<Option<Side>> = vec![None; g.n_nodes()];
        for e in &edges {
            for &n in &e.nodes {
                let win = match node_label[n] {
                    None => true,
                    Some(old) => e.label < old,
                };
                if win {
                    node_label[n] = Some(e.label);
                    node_side[n] = Some(e.side);
                }
            }
        }
        let mut contact_nodes: Vec<usize> = (0..g.n_nodes())
            .filter(|&n| node_label[n] == Some(BoundaryLabel::Contact))
            .collect();
        contact_nodes.sort_by_key(|&n| {
            let (ix, iy) = g.node_ij(n);
            (ix, iy)
        });
        let dirichlet_nodes = (0..g.n_nodes())
            .filter(|&n| node_label[n] == Some(BoundaryLabel::Dirichlet))
            .collect();
        Ok(Self {
            edges,
            node_label,
            node_side,
            contact_nodes,
            dirichlet_nodes,
        })
    }

    pub fn label(&self, node: usize) -> Option<BoundaryLabel> {
        self.node_label[node]
    }

    pub fn is_dirichlet(&self, node: usize) -> bool {
        self.node_label[node] == Some(BoundaryLabel::Dirichlet)
    }

    /// Outward normal of the side that decided the node label.
    pub fn normal(&self, node: usize) -> Option<[f64; 2]> {
        self.node_side[node].map(Side::outward_normal)
    }

    pub fn edges_with(&self, label: BoundaryLabel) -> impl Iterator<Item = &BoundaryEdge> {
        self.edges.iter().filter(move |e| e.label == label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn hierarchy_sizes() {
        let g = GridHierarchy::new(400, 100).unwrap();
        assert_eq!(g.ratio(), 4);
        assert_eq!(g.n_coarse(), 10_000);
        assert!((g.coarse_h() - 0.01).abs() < 1e-15);

        let g = GridHierarchy::new(4, 2).unwrap();
        assert_eq!((g.ratio(), g.n_coarse()), (2, 4));
        assert_eq!(g.coarse_h(), 0.5);

        let g = GridHierarchy::new(40, 20).unwrap();
        assert_eq!((g.ratio(), g.n_coarse()), (2, 400));
        assert!((g.coarse_h() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn non_divisible_sizes_are_rejected() {
        let err = GridHierarchy::new(10, 3).unwrap_err().to_string();
        assert!(err.contains("10") && err.contains('3'), "{err}");
        assert!(GridHierarchy::new(1, 1).is_err());
    }

    #[test]
    fn nesting_map_is_total() {
        let g = GridHierarchy::new(12, 3).unwrap();
        let mut count = vec![0; g.n_coarse()];
        for e in 0..g.n_elements() {
            count[g.coarse_of_element(e)] += 1;
        }
        assert!(count.iter().all(|&c| c == 16));
        for i in 0..g.n_coarse() {
            for e in g.coarse_fine_elements(i) {
                assert_eq!(g.coarse_of_element(e), i);
            }
        }
    }

    #[test]
    fn oversample_counts() {
        let g = GridHierarchy::new(10, 5).unwrap();
        assert_eq!(g.oversample(g.coarse_index(2, 2), 2).coarse_elements().len(), 25);
        assert_eq!(g.oversample(0, 1).coarse_elements().len(), 4);
        for i in 0..g.n_coarse() {
            assert_eq!(g.oversample(i, 0).coarse_elements(), vec![i]);
        }
    }

    #[test]
    fn oversample_node_set_is_union_of_members() {
        for nc in 2..=5 {
            let g = GridHierarchy::new(2 * nc, nc).unwrap();
            for i in 0..g.n_coarse() {
                for m in 0..=nc {
                    let d = g.oversample(i, m);
                    let union: BTreeSet<usize> = d
                        .coarse_elements()
                        .into_iter()
                        .flat_map(|k| {
                            let r = g.coarse_node_rect(k);
                            r.iter().map(|(x, y)| g.node(x, y)).collect::<Vec<_>>()
                        })
                        .collect();
                    let nodes: Vec<usize> = d.fine_nodes();
                    assert_eq!(nodes.len(), union.len());
                    assert_eq!(nodes.into_iter().collect::<BTreeSet<_>>(), union);
                }
            }
        }
    }

    #[test]
    fn oversample_is_monotone_until_saturation() {
        let g = GridHierarchy::new(10, 5).unwrap();
        for i in 0..g.n_coarse() {
            for m in 0..6 {
                let a: BTreeSet<_> = g.oversample(i, m).fine_nodes().into_iter().collect();
                let b: BTreeSet<_> = g.oversample(i, m + 1).fine_nodes().into_iter().collect();
                assert!(a.is_subset(&b));
                if a.len() < g.n_nodes() {
                    assert!(a.len() < b.len());
                }
            }
        }
    }

    #[test]
    fn cut_nodes_touch_outside_elements() {
        let g = GridHierarchy::new(8, 4).unwrap();
        for i in 0..g.n_coarse() {
            for m in 0..3 {
                let d = g.oversample(i, m);
                let inside: BTreeSet<usize> = d.fine_elements().into_iter().collect();
                for n in d.fine_nodes() {
                    let (ix, iy) = g.node_ij(n);
                    let touches_outside = (0..g.n_elements())
                        .filter(|e| !inside.contains(e))
                        .any(|e| g.element_nodes(e).contains(&n));
                    assert_eq!(d.is_interior_cut(ix, iy), touches_outside);
                }
            }
        }
    }

    #[test]
    fn contact_corners_follow_precedence() {
        let g = GridHierarchy::new(4, 2).unwrap();
        let bd = BoundaryDecomposition::new(&g, &BoundarySpec::default()).unwrap();
        assert_eq!(bd.edges_with(BoundaryLabel::Contact).count(), 4);
        assert_eq!(bd.contact_nodes.len(), 5);
        assert_eq!(bd.label(g.node(0, 4)), Some(BoundaryLabel::Dirichlet));
        assert_eq!(bd.label(g.node(0, 0)), Some(BoundaryLabel::Contact));
        assert_eq!(bd.normal(g.node(2, 0)), Some([0.0, -1.0]));
    }

    #[test]
    fn two_contact_sides() {
        let g = GridHierarchy::new(4, 2).unwrap();
        let spec = BoundarySpec {
            bottom: BoundaryLabel::Contact,
            top: BoundaryLabel::Contact,
            left: BoundaryLabel::Dirichlet,
            right: BoundaryLabel::Neumann,
            segments: vec![],
        };
        let bd = BoundaryDecomposition::new(&g, &spec).unwrap();
        let sides: BTreeSet<_> = bd.edges_with(BoundaryLabel::Contact).map(|e| e.side).collect();
        assert_eq!(sides, [Side::Bottom, Side::Top].into_iter().collect());
        // left corners go to Dirichlet, right corners to contact
        assert_eq!(bd.contact_nodes.len(), 8);
    }

    #[test]
    fn missing_label_is_an_error() {
        let g = GridHierarchy::new(4, 2).unwrap();
        let spec = BoundarySpec {
            bottom: BoundaryLabel::Contact,
            top: BoundaryLabel::Neumann,
            left: BoundaryLabel::Neumann,
            right: BoundaryLabel::Neumann,
            segments: vec![],
        };
        assert!(matches!(
            BoundaryDecomposition::new(&g, &spec),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn edges_partition_the_boundary() {
        let g = GridHierarchy::new(6, 3).unwrap();
        let spec = BoundarySpec {
            segments: vec![Segment {
                side: Side::Left,
                from: 0.0,
                to: 0.5,
                label: BoundaryLabel::Dirichlet,
            }],
            ..BoundarySpec::default()
        };
        let bd = BoundaryDecomposition::new(&g, &spec).unwrap();
        let total: usize = [
            BoundaryLabel::Dirichlet,
            BoundaryLabel::Neumann,
            BoundaryLabel::Contact,
        ]
        .iter()
        .map(|&l| bd.edges_with(l).count())
        .sum();
        assert_eq!(total, 4 * 6);
        assert_eq!(bd.edges_with(BoundaryLabel::Dirichlet).count(), 6 + 3);
    }
}
