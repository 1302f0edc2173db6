//! Sweeps over patchification strategies and patch feature modes, each
//! variant trained and evaluated from scratch on the same suite.

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::encoder::PatchFeatureMode;
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::model::{Model, ModelConfig};
use crate::patchify::{PatchConfig, Strategy};
use crate::suite::Suite;
use crate::trainer::train;

pub const STRATEGIES: [Strategy; 5] = [
    Strategy::MultiScaleSpheres,
    Strategy::FpsSpheres,
    Strategy::FpsVoxels,
    Strategy::Grid3d,
    Strategy::SemanticParts,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Strategy,
    FeatureMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub axis: Axis,
    pub variant: String,
    /// `None` when the variant cannot run here.
    pub point_auc_roc: Option<f64>,
    pub object_auc_roc: Option<f64>,
    pub note: String,
}

/// Single-level strategies use the middle level of the base config.
pub fn strategy_config(base: &ModelConfig, strategy: Strategy) -> ModelConfig {
    let patch = if strategy == Strategy::MultiScaleSpheres {
        base.patch.clone()
    } else {
        let spec = base.patch.levels[base.patch.levels.len() / 2];
        PatchConfig {
            voxel_resolution: base.patch.voxel_resolution,
            ..PatchConfig::single(strategy, spec.count, spec.size, base.patch.seed)
        }
    };
    ModelConfig {
        patch,
        ..base.clone()
    }
}

fn run_variant(config: &PipelineConfig, model: ModelConfig, suite: &Suite) -> Result<(f64, f64)> {
    let mut model = Model::new(model, config.model_seed)?;
    let outcome = train(&mut model, &suite.train, &config.train, None)?;
    let (report, _) = evaluate(&model, &outcome.codebooks, &suite.test)?;
    Ok((report.point.auc_roc, report.object.auc_roc))
}

fn row(axis: Axis, variant: &str, result: Result<(f64, f64)>) -> Result<AblationRow> {
    match result {
        Ok((p, o)) => Ok(AblationRow {
            axis,
            variant: variant.to_string(),
            point_auc_roc: Some(p),
            object_auc_roc: Some(o),
            note: String::new(),
        }),
        Err(e @ Error::Unsupported(_)) => Ok(AblationRow {
            axis,
            variant: variant.to_string(),
            point_auc_roc: None,
            object_auc_roc: None,
            note: e.to_string(),
        }),
        Err(e) => Err(e),
    }
}

/// Every strategy with the base feature mode, then every feature mode
/// with the base strategy. `progress` sees each row as it completes.
pub fn ablate(
    config: &PipelineConfig,
    suite: &Suite,
    mut progress: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for strategy in STRATEGIES {
        let model = strategy_config(&config.model, strategy);
        let result = model.validate().and_then(|_| run_variant(config, model, suite));
        let r = row(Axis::Strategy, strategy.name(), result)?;
        progress(&r);
        rows.push(r);
    }
    for mode in PatchFeatureMode::ALL {
        let model = ModelConfig {
            feature_mode: mode,
            ..config.model.clone()
        };
        let r = row(Axis::FeatureMode, mode.name(), run_variant(config, model, suite))?;
        progress(&r);
        rows.push(r);
    }
    Ok(rows)
}

pub fn format_table(rows: &[AblationRow]) -> String {
    let cell = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
    let mut out = format!("{:<14} {:<22} {:>10} {:>10}  note\n", "axis", "variant", "point_auc", "object_auc");
    for r in rows {
        let axis = match r.axis {
            Axis::Strategy => "strategy",
            Axis::FeatureMode => "feature_mode",
        };
        out += &format!(
            "{axis:<14} {:<22} {:>10} {:>10}  {}\n",
            r.variant,
            cell(r.point_auc_roc),
            cell(r.object_auc_roc),
            r.note
        );
    }
    out
}
