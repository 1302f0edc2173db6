//! Generates a reduced benchmark suite, saves it and loads it back.

use patchbook::augment::ShapeKind;
use patchbook::suite::{generate, Suite, SuiteConfig};

fn main() -> patchbook::Result<()> {
    let config = SuiteConfig {
        classes: vec![ShapeKind::Sphere, ShapeKind::Gear],
        train_per_class: 3,
        anomalous_per_class: 4,
        clean_per_class: 4,
        points: 1024,
        ..SuiteConfig::default()
    };
    let suite = generate(&config)?;
    let dir = std::env::temp_dir().join("patchbook-suite-example");
    suite.save(&dir)?;
    let back = Suite::load(&dir)?;
    for sample in &back.test {
        let bad = sample.labels.iter().filter(|&&l| l).count();
        println!("{:<22} {:>5} anomalous points", sample.name, bad);
    }
    println!("saved under {}", dir.display());
    Ok(())
}
