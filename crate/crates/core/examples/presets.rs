//! The three dataset presets as JSON, plus loading a partial config file.

use patchbook::config::{DatasetPreset, PipelineConfig};

fn main() -> patchbook::Result<()> {
    for name in ["shapenet", "real3d", "industrial"] {
        let preset: DatasetPreset = name.parse()?;
        let c = PipelineConfig::preset(preset);
        let levels: Vec<String> = c.model.patch.levels.iter().map(|l| format!("{}x{}", l.count, l.size)).collect();
        println!(
            "{name:<10} levels [{}], {} training clouds per class, rigid shifts {}",
            levels.join(", "),
            c.suite.train_per_class,
            c.train.rigid_shifts
        );
    }

    let path = std::env::temp_dir().join("patchbook-config-example.json");
    std::fs::write(&path, r#"{"train": {"epochs": 20}, "model": {"tau": 0.9}}"#)
        .map_err(|e| patchbook::Error::io(&path, e))?;
    let c = PipelineConfig::load(&path)?.with_seed(7);
    println!("{}", serde_json::to_string_pretty(&c.train)?);
    Ok(())
}
