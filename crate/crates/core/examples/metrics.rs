//! Point scores, object score and the two ranking metrics on hand-made data.

use patchbook::eval::{auc_pr, auc_roc, heat_color, object_score, point_scores, MASK_THRESHOLD};
use patchbook::geometry::Vec3;

fn main() -> patchbook::Result<()> {
    let offsets = [
        Vec3::new(0.0, 0.0, 0.01),
        Vec3::new(0.1, 0.0, 0.0),
        Vec3::new(0.0, 0.2, 0.2),
        Vec3::new(0.05, 0.0, 0.0),
    ];
    let probs = [0.9, 0.8, 0.95, 0.2];
    let s = point_scores(&offsets, &probs, MASK_THRESHOLD)?;
    println!("point scores {:?}", s.point_scores);
    println!("object score {}", object_score(&s.point_scores));
    for &x in &s.point_scores {
        println!("  {x:.3} -> rgb {:?}", heat_color(x));
    }

    let scores = [0.1, 0.4, 0.35, 0.8];
    let labels = [false, false, true, true];
    println!("AUC-ROC {}", auc_roc(&scores, &labels)?);
    println!("AUC-PR  {:.4}", auc_pr(&scores, &labels)?);
    Ok(())
}
