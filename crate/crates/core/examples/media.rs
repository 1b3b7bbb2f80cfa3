//! Generated high-contrast media and their coefficient weights.

use cemcontact::grid::GridHierarchy;
use cemcontact::medium::{compute_weight, MediumStyle, PermeabilityField, WeightMode};

fn main() -> cemcontact::Result<()> {
    let g = GridHierarchy::new(100, 10)?;
    for style in [MediumStyle::A, MediumStyle::B, MediumStyle::Random] {
        let k = PermeabilityField::generate(&g, style, 1e4, 7)?;
        let high = k.values().iter().filter(|&&v| v > 1.0).count();
        let w = compute_weight(&g, &k, WeightMode::default());
        let wmax = w.values().iter().fold(0.0f64, |m, v| m.max(*v));
        println!(
            "style {style}: contrast {:.0e}, {:.1}% high-conductivity cells, max weight {wmax:.3e}",
            k.contrast(),
            100.0 * high as f64 / g.n_elements() as f64
        );
    }
    let path = std::env::temp_dir().join("medium_A.txt");
    PermeabilityField::generate(&g, MediumStyle::A, 1e3, 1)?.write(&path)?;
    let back = PermeabilityField::read(&path)?;
    println!("round trip through {}: {}", path.display(), back.matches(&g));
    Ok(())
}
