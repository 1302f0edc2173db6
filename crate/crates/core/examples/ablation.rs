//! A deliberately tiny ablation sweep over patch strategies and feature
//! modes. Real numbers need the full suite and hours of CPU.

use patchbook::ablation::{ablate, format_table};
use patchbook::augment::ShapeKind;
use patchbook::config::PipelineConfig;
use patchbook::suite::{generate, SuiteConfig};
use patchbook::trainer::TrainConfig;

fn main() -> patchbook::Result<()> {
    let config = PipelineConfig {
        suite: SuiteConfig {
            classes: vec![ShapeKind::Box],
            train_per_class: 2,
            anomalous_per_class: 3,
            clean_per_class: 3,
            points: 1024,
            ..SuiteConfig::default()
        },
        train: TrainConfig {
            epochs: 2,
            steps_per_epoch: 2,
            ..TrainConfig::default()
        },
        ..PipelineConfig::default()
    };
    let suite = generate(&config.suite)?;
    let rows = ablate(&config, &suite, |r| eprintln!("done {}", r.variant))?;
    print!("{}", format_table(&rows));
    Ok(())
}
