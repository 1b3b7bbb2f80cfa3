//! Fine-scale active-set iteration checked against projected Gauss-Seidel.

use cemcontact::contact::{kkt_report, run, ContactProblem, FineSolver, PdasOptions};
use cemcontact::grid::{BoundaryDecomposition, BoundarySpec, GridHierarchy};
use cemcontact::medium::{MediumStyle, PermeabilityField};
use cemcontact::oracle::{solve_contact, PgsOptions};
use cemcontact::source::ScalarFunction;

fn main() -> cemcontact::Result<()> {
    let g = GridHierarchy::new(32, 4)?;
    let kappa = PermeabilityField::generate(&g, MediumStyle::A, 1e2, 1)?;
    let bd = BoundaryDecomposition::new(&g, &BoundarySpec::default())?;
    let p = ContactProblem::new(&g, &kappa, &bd, &ScalarFunction::F1, &ScalarFunction::zero())?;

    let r = run(&p, &mut FineSolver::new(&p), PdasOptions::default())?;
    for s in &r.history {
        println!("k = {}: {} active contact nodes", s.k, s.n_active());
    }
    let t = r.terminal();
    println!("KKT residual {:.2e}", kkt_report(&p, t, r.c).max());

    let o = solve_contact(&p, PgsOptions::default())?;
    let d: Vec<f64> = t.u.iter().zip(&o.u).map(|(a, b)| a - b).collect();
    let err = (p.stiffness.quadratic_form(&d) / p.stiffness.quadratic_form(&o.u)).sqrt();
    println!(
        "oracle: {} sweeps, energy-norm difference {err:.2e}, same active set: {}",
        o.sweeps,
        o.active == t.active
    );
    Ok(())
}
