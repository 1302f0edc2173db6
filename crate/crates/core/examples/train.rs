//! A few epochs on two small classes, with checkpoints and the loss log
//! written to a temporary directory.

use patchbook::augment::{gen_shape, ShapeKind};
use patchbook::model::{Model, ModelConfig};
use patchbook::patchify::LevelSpec;
use patchbook::trainer::{train, ClassData, TrainConfig, TrainPaths};

fn main() -> patchbook::Result<()> {
    let data: Vec<ClassData> = [ShapeKind::Sphere, ShapeKind::Box]
        .into_iter()
        .map(|kind| {
            let clouds = (0..4).map(|s| gen_shape(kind, 512, s)).collect::<patchbook::Result<_>>()?;
            Ok(ClassData { name: kind.name().into(), clouds })
        })
        .collect::<patchbook::Result<_>>()?;

    let mut config = ModelConfig::default();
    config.patch.levels = vec![
        LevelSpec { count: 48, size: 8 },
        LevelSpec { count: 16, size: 32 },
        LevelSpec { count: 8, size: 64 },
    ];
    let mut model = Model::new(config, 0)?;
    let train_config = TrainConfig {
        epochs: 5,
        steps_per_epoch: 4,
        ..TrainConfig::default()
    };
    let dir = std::env::temp_dir().join("patchbook-train-example");
    let outcome = train(&mut model, &data, &train_config, Some(&dir))?;
    for e in &outcome.log {
        println!("{}", e.csv_row());
    }
    let paths = TrainPaths { dir };
    println!("model at {}", paths.model().display());
    Ok(())
}
