//! Per-point local-statistics encoder and patch feature extraction.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundParams, Linear, ParamStore, RowMixing, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{local_geometry, PointCloud, Vec3};
use crate::patchify::{Patch, PatchSet};

pub const FEATURE_DIM: usize = 32;
pub const INPUT_DIM: usize = 9;
pub const HIDDEN_DIM: usize = 64;
pub const NEIGHBOURHOOD_K: usize = 16;
const RELATIVE_SCALE: f64 = 10.0;
const EIGEN_SCALE: f64 = 100.0;
/// Members blended when querying the feature field at a patch's mean point.
pub const INTERPOLATION_NEIGHBOURS: usize = 3;
const INTERPOLATION_EPS: f64 = 1e-9;

/// Per-point encoder input: relative position to the neighbourhood
/// centroid, covariance eigenvalues and estimated normal (N×9).
pub fn encoder_input(cloud: &PointCloud) -> Result<Tensor<f64>> {
    if cloud.len() < NEIGHBOURHOOD_K {
        return Err(Error::TooFewPoints {
            needed: NEIGHBOURHOOD_K,
            got: cloud.len(),
        });
    }
    // a point is its own neighbour, so k = 16 needs 17 points
    let k = NEIGHBOURHOOD_K.min(cloud.len() - 1);
    let geo = local_geometry(cloud, k)?;
    let mut data = Vec::with_capacity(cloud.len() * INPUT_DIM);
    for i in 0..cloud.len() {
        data.extend(geo.relative[i].iter().map(|v| v * RELATIVE_SCALE));
        data.extend(geo.eigenvalues[i].iter().map(|v| v * EIGEN_SCALE));
        data.extend(geo.normals[i].iter().copied());
    }
    Tensor::new(cloud.len(), INPUT_DIM, data)
}

/// Three-layer MLP 9→64→64→32 with elu+1 hidden activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Encoder {
    pub layers: [Linear; 3],
}

impl Encoder {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        let layers = [
            Linear::new(store, "encoder.0", INPUT_DIM, HIDDEN_DIM, rng),
            Linear::new(store, "encoder.1", HIDDEN_DIM, HIDDEN_DIM, rng),
            Linear::new(store, "encoder.2", HIDDEN_DIM, FEATURE_DIM, rng),
        ];
        for layer in &layers[1..] {
            layer.center_for_unit_offset(store);
        }
        Self { layers }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bound: &BoundParams, input: Var) -> Result<Var> {
        let h = self.layers[0].forward(tape, bound, input)?;
        let h = tape.elu_plus_one(h)?;
        let h = self.layers[1].forward(tape, bound, h)?;
        let h = tape.elu_plus_one(h)?;
        self.layers[2].forward(tape, bound, h)
    }

    /// Features z_i of every point, evaluated in 64-bit precision.
    pub fn encode_points(&self, params: &ParamStore, cloud: &PointCloud) -> Result<Tensor<f64>> {
        let input = encoder_input(cloud)?;
        let mut tape = Tape::<f64>::new();
        let bound = params.bind(&mut tape)?;
        let x = tape.constant(input)?;
        let z = self.forward(&mut tape, &bound, x)?;
        Ok(tape.value(z).clone())
    }
}

/// How a patch's member features collapse into one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchFeatureMode {
    /// Feature field queried at the members' centroid.
    #[default]
    MeanPoint,
    Pooling,
    MeanFeature,
}

impl PatchFeatureMode {
    pub const ALL: [PatchFeatureMode; 3] = [
        PatchFeatureMode::MeanPoint,
        PatchFeatureMode::Pooling,
        PatchFeatureMode::MeanFeature,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PatchFeatureMode::MeanPoint => "mean_point",
            PatchFeatureMode::Pooling => "pooling",
            PatchFeatureMode::MeanFeature => "mean_feature",
        }
    }
}

impl std::str::FromStr for PatchFeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PatchFeatureMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown feature mode {s}")))
    }
}

/// Inverse-distance weights of the nearest members to the members'
/// centroid, normalized to sum to one.
pub fn mean_point_weights(patch: &Patch, cloud: &PointCloud) -> Result<Vec<(usize, f64)>> {
    if patch.members.is_empty() {
        return Err(Error::EmptyPatch);
    }
    let query = patch.member_centroid(cloud);
    let mut by_distance: Vec<(f64, usize)> = patch
        .members
        .iter()
        .map(|&m| ((cloud.points()[m] - query).norm(), m))
        .collect();
    by_distance.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    by_distance.truncate(INTERPOLATION_NEIGHBOURS);
    let raw: Vec<f64> = by_distance
        .iter()
        .map(|(d, _)| 1.0 / (d + INTERPOLATION_EPS))
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(by_distance
        .iter()
        .zip(raw)
        .map(|((_, m), w)| (*m, w / total))
        .collect())
}

/// Precomputed, parameter-independent recipe turning point features into
/// the patch features of one level.
#[derive(Debug, Clone)]
pub enum PatchReducer {
    Mix(Arc<RowMixing>),
    Max(Vec<Vec<usize>>),
}

impl PatchReducer {
    pub fn new(patches: &PatchSet, cloud: &PointCloud, mode: PatchFeatureMode) -> Result<Self> {
        if patches.patches.iter().any(|p| p.members.is_empty()) {
            return Err(Error::EmptyPatch);
        }
        Ok(match mode {
            PatchFeatureMode::MeanPoint => {
                let rows = patches
                    .patches
                    .iter()
                    .map(|p| mean_point_weights(p, cloud))
                    .collect::<Result<_>>()?;
                PatchReducer::Mix(Arc::new(RowMixing { rows }))
            }
            PatchFeatureMode::MeanFeature => {
                let rows = patches
                    .patches
                    .iter()
                    .map(|p| {
                        let w = 1.0 / p.members.len() as f64;
                        let mut members = p.members.clone();
                        members.sort_unstable();
                        members.into_iter().map(|m| (m, w)).collect()
                    })
                    .collect();
                PatchReducer::Mix(Arc::new(RowMixing { rows }))
            }
            PatchFeatureMode::Pooling => {
                PatchReducer::Max(patches.patches.iter().map(|p| p.members.clone()).collect())
            }
        })
    }

    /// Unit-norm patch features (m×32) from point features (N×32).
    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, points: Var) -> Result<Var> {
        let reduced = match self {
            PatchReducer::Mix(mix) => tape.row_mix(points, mix.clone())?,
            PatchReducer::Max(groups) => tape.group_max(points, groups)?,
        };
        tape.l2_normalize_rows(reduced)
    }
}

/// Unit-norm feature of a single patch from precomputed point features.
pub fn patch_feature(
    patch: &Patch,
    cloud: &PointCloud,
    features: &Tensor<f64>,
    mode: PatchFeatureMode,
) -> Result<Vec<f64>> {
    let set = PatchSet {
        level: patch.level,
        patches: vec![patch.clone()],
    };
    let reducer = PatchReducer::new(&set, cloud, mode)?;
    let mut tape = Tape::<f64>::new();
    let z = tape.constant(features.clone())?;
    let p = reducer.apply(&mut tape, z)?;
    Ok(tape.value(p).row(0).to_vec())
}

/// Centroid of a patch's members relative to its sphere center.
pub fn mean_relative_position(patch: &Patch, cloud: &PointCloud) -> Vec3 {
    patch.member_centroid(cloud) - patch.center
}
