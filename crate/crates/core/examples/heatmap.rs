//! Scores an anomalous torus and writes a red-to-blue PLY heatmap.
//!
//! cargo run --release --example heatmap -- heat.ply

use std::path::PathBuf;

use patchbook::augment::{gen_shape, negative_augment, AugmentConfig, Preset, ShapeKind};
use patchbook::eval::{auc_roc, export_heatmap, score_sample};
use patchbook::model::{Model, ModelConfig};

fn main() -> patchbook::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "heatmap.ply".into()));
    let model = Model::new(ModelConfig::default(), 0)?;
    let normals: Vec<_> = (0..4)
        .map(|s| gen_shape(ShapeKind::Torus, 2048, s))
        .collect::<patchbook::Result<_>>()?;
    let book = model.build_codebook(&normals)?;
    let base = gen_shape(ShapeKind::Torus, 2048, 50)?;
    let sample = negative_augment(&base, &AugmentConfig::new(1, Preset::Large), 8)?;

    let scores = score_sample(&model, &book, &sample.abnormal)?;
    export_heatmap(&sample.abnormal, &scores.point_scores, &out)?;
    println!("object score {:.4}", scores.object_score);
    println!("{} of {} points above the mask threshold", scores.mask.iter().filter(|&&m| m).count(), scores.mask.len());
    if let Ok(auc) = auc_roc(&scores.point_scores, &sample.mask) {
        println!("point AUC-ROC on this sample {auc:.4}");
    }
    println!("heatmap -> {}", out.display());
    Ok(())
}
