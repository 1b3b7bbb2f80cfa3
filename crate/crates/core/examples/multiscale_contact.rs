//! Multiscale active-set iteration with incremental basis refresh, compared
//! with the fine-scale solution iterate by iterate.

use cemcontact::assembly::assemble_mass;
use cemcontact::contact::{run, CemSolver, FineSolver, PdasOptions};
use cemcontact::experiment::{ExperimentConfig, GridConfig, Setup};
use cemcontact::metrics::ErrorReport;

fn main() -> cemcontact::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.grid = GridConfig { nx: 80, coarse: 10 };
    let setup = Setup::new(&cfg)?;
    let p = &setup.problem;
    let fine = run(p, &mut FineSolver::new(p), PdasOptions::default())?;
    let builder = setup.builder(&cfg.multiscale, &cfg.data.neumann)?;
    let mut solver = CemSolver::new(p, &builder, true);
    let cem = run(p, &mut solver, PdasOptions::default())?;
    println!("domains rebuilt per solve: {:?}", solver.rebuilds);

    let hist = |r: &cemcontact::contact::ContactRun| r.history.iter().map(|s| s.u.clone()).collect::<Vec<_>>();
    let report = ErrorReport::new(&hist(&fine), &hist(&cem), &p.stiffness, &assemble_mass(&setup.grid))?;
    print!("{}", report.to_csv());
    println!(
        "terminal active sets agree: {}",
        fine.terminal().active == cem.terminal().active
    );
    Ok(())
}
