//! Terminal multiscale error as a function of the oversampling depth.

use cemcontact::experiment::{sweep, ExperimentConfig, GridConfig, SweepParam, Variant};

fn main() -> cemcontact::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.grid = GridConfig { nx: 80, coarse: 10 };
    cfg.variants = vec![Variant::Fine, Variant::Cem];
    cfg.output = std::env::temp_dir().join("oversampling_sweep");
    println!("{:>3} {:>12} {:>12}", "m", "E_L", "E_a");
    for (m, s) in sweep(&cfg, SweepParam::Layers, &[1, 2, 3, 4])? {
        if let Some((el, ea)) = s.terminal_errors {
            println!("{m:>3} {el:>12.4e} {ea:>12.4e}");
        }
    }
    println!("tables in {}", cfg.output.display());
    Ok(())
}
