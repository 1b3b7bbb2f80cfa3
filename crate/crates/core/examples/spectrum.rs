//! Local spectral problems of the auxiliary space: the first eigenvalue
//! vanishes and the spectral gap grows with contrast.

use cemcontact::auxspace::AuxiliarySpace;
use cemcontact::grid::GridHierarchy;
use cemcontact::medium::{compute_weight, MediumStyle, PermeabilityField, WeightMode};

fn main() -> cemcontact::Result<()> {
    let g = GridHierarchy::new(80, 8)?;
    for contrast in [1.0, 1e2, 1e4] {
        let k = PermeabilityField::generate(&g, MediumStyle::A, contrast, 1)?;
        let w = compute_weight(&g, &k, WeightMode::default());
        let aux = AuxiliarySpace::build(&g, &k, &w, 4)?;
        let loc = aux.local(g.coarse_index(3, 3));
        let ev: Vec<String> = loc.eigenvalues.iter().map(|v| format!("{v:.3e}")).collect();
        println!(
            "κ_R = {contrast:.0e}: element (3,3) eigenvalues [{}], next {:.3e}; Λ = {:.3e}",
            ev.join(", "),
            loc.next_eigenvalue,
            aux.lambda_report()
        );
    }
    Ok(())
}
