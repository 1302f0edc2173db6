//! Runs inference on an augmented gear with an untrained model: retrieval,
//! scale selection, fusion and the offset head.

use patchbook::augment::{gen_shape, negative_augment, AugmentConfig, Preset, ShapeKind};
use patchbook::model::{Model, ModelConfig};

fn main() -> patchbook::Result<()> {
    let model = Model::new(ModelConfig::default(), 0)?;
    let normals: Vec<_> = (0..4)
        .map(|s| gen_shape(ShapeKind::Gear, 2048, s))
        .collect::<patchbook::Result<_>>()?;
    let book = model.build_codebook(&normals)?;

    let base = gen_shape(ShapeKind::Gear, 2048, 100)?;
    let sample = negative_augment(&base, &AugmentConfig::new(2, Preset::Large), 5)?;
    let prediction = model.predict(&sample.abnormal, &book)?;
    println!("scale similarities {:?}", prediction.alphas);
    println!("selected level {}", prediction.level + 1);
    let mean = prediction.offsets.iter().map(|o| o.norm()).sum::<f64>() / prediction.offsets.len() as f64;
    println!("mean predicted |o| {mean:.4}, {} points displaced in truth", sample.anomalous_count());
    Ok(())
}
