//! Energy distance between oversampled and global basis functions.

use cemcontact::experiment::{basis_decay, MultiscaleConfig, Setup};
use cemcontact::experiment::{ExperimentConfig, GridConfig};
use cemcontact::source::ScalarFunction;

fn main() -> cemcontact::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.grid = GridConfig { nx: 40, coarse: 10 };
    let setup = Setup::new(&cfg)?;
    let mut b = setup.builder(&MultiscaleConfig::default(), &ScalarFunction::zero())?;
    let i = setup.grid.coarse_index(4, 4);
    let prof = basis_decay(&mut b, i, 0, &[1, 2, 3, 4, 5], None)?;
    println!("{:>3} {:>12}", "m", "relative");
    for (m, e) in prof.layers.iter().zip(&prof.errors) {
        println!("{m:>3} {:>12.4e}", e / prof.global_norm);
    }
    println!("fitted ratio per layer {:.3}", prof.fitted_ratio());
    Ok(())
}
