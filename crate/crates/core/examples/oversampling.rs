//! Coarse grid, oversampled domains and boundary labelling.

use cemcontact::grid::{BoundaryDecomposition, BoundaryLabel, BoundarySpec, GridHierarchy};

fn main() -> cemcontact::Result<()> {
    let g = GridHierarchy::new(40, 10)?;
    println!(
        "fine {}×{} (h = {}), coarse {}×{} (H = {}), {} nodes",
        g.nx_fine(),
        g.ny_fine(),
        g.h(),
        g.coarse_per_axis(),
        g.coarse_per_axis(),
        g.coarse_h(),
        g.n_nodes()
    );
    let i = g.coarse_index(4, 4);
    for m in 0..=5 {
        let d = g.oversample(i, m);
        println!(
            "m = {m}: {:>3} coarse elements, {:>4} fine nodes, {:>3} interior cut nodes",
            d.n_coarse(),
            d.fine_nodes().len(),
            d.interior_cut_nodes().len()
        );
    }
    let bd = BoundaryDecomposition::new(&g, &BoundarySpec::default())?;
    for label in [BoundaryLabel::Dirichlet, BoundaryLabel::Neumann, BoundaryLabel::Contact] {
        println!("{label:?}: {} boundary edges", bd.edges_with(label).count());
    }
    Ok(())
}
