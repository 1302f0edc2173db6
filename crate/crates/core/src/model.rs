//! The full detector: encoder, codebook-conditioned fusion and head, with
//! the parameter-independent per-sample preprocessing split out.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundParams, ParamStore, Scalar, Tape, Tensor, Var};
use crate::codebook::{select_scale, Codebook, DEFAULT_TAU};
use crate::encoder::{encoder_input, Encoder, PatchFeatureMode, PatchReducer};
use crate::error::{Error, Result};
use crate::fusion::{CrossAttention, GatedModulation, PredictionHead, RopeConfig};
use crate::geometry::{PointCloud, Vec3};
use crate::patchify::{patchify, PatchConfig, PatchSet};

/// Format tag stored in checkpoint metadata.
pub const MODEL_FORMAT: &str = "patchbook-model";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub patch: PatchConfig,
    #[serde(default)]
    pub feature_mode: PatchFeatureMode,
    /// Divide each level's similarity sum by its patch count before argmax.
    #[serde(default = "default_true")]
    pub normalized_scale: bool,
    #[serde(default)]
    pub rope: RopeConfig,
    #[serde(default = "default_tau")]
    pub tau: f64,
}

fn default_true() -> bool {
    true
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            patch: PatchConfig::default_multiscale(0),
            feature_mode: PatchFeatureMode::default(),
            normalized_scale: true,
            rope: RopeConfig::default(),
            tau: DEFAULT_TAU,
        }
    }
}

impl ModelConfig {
    /// CRC-64 of the canonical JSON form.
    pub fn hash(&self) -> u64 {
        let json = serde_json::to_vec(self).expect("config serializes");
        crc::Crc::<u64>::new(&crc::CRC_64_ECMA_182).checksum(&json)
    }

    pub fn validate(&self) -> Result<()> {
        self.patch.validate()?;
        self.rope.validate()?;
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::InvalidConfig(format!("tau {} outside (0, 1]", self.tau)));
        }
        Ok(())
    }
}

/// Everything about a cloud the forward pass needs that does not depend
/// on parameters.
#[derive(Debug, Clone)]
pub struct SampleGeometry {
    pub input: Tensor<f64>,
    pub levels: Vec<LevelGeometry>,
}

#[derive(Debug, Clone)]
pub struct LevelGeometry {
    pub patches: PatchSet,
    pub reducer: PatchReducer,
    /// Patch index of every point.
    pub assignment: Vec<usize>,
    /// Rotation angles of each point relative to its patch (N×d/2).
    pub query_angles: Tensor<f64>,
    /// Rotation angles of each patch center relative to the object (m×d/2).
    pub key_angles: Tensor<f64>,
}

impl SampleGeometry {
    pub fn new(cloud: &PointCloud, config: &ModelConfig) -> Result<Self> {
        let input = encoder_input(cloud)?;
        let centroid = cloud.centroid();
        let levels = patchify(cloud, &config.patch)?
            .into_iter()
            .map(|patches| {
                let reducer = PatchReducer::new(&patches, cloud, config.feature_mode)?;
                let assignment = patches.assignment(cloud);
                let anchors: Vec<Vec3> = patches
                    .patches
                    .iter()
                    .map(|p| p.member_centroid(cloud))
                    .collect();
                let relpos: Vec<Vec3> = cloud
                    .points()
                    .iter()
                    .zip(&assignment)
                    .map(|(x, &a)| x - anchors[a])
                    .collect();
                let centers: Vec<Vec3> = patches.patches.iter().map(|p| p.center - centroid).collect();
                Ok(LevelGeometry {
                    query_angles: config.rope.angles(&relpos),
                    key_angles: config.rope.angles(&centers),
                    reducer,
                    assignment,
                    patches,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { input, levels })
    }

    pub fn len(&self) -> usize {
        self.input.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.input.rows() == 0
    }
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// N×4: offset (3) then mask logit.
    pub output: Var,
    /// Zero-based selected level.
    pub level: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub offsets: Vec<Vec3>,
    pub mask_probs: Vec<f64>,
    pub level: usize,
    pub alphas: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub encoder: Encoder,
    pub attention: CrossAttention,
    pub modulation: GatedModulation,
    pub head: PredictionHead,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = Encoder::new(&mut params, &mut rng);
        let attention = CrossAttention::new(&mut params, config.rope, &mut rng);
        let modulation = GatedModulation::new(&mut params, &mut rng);
        let head = PredictionHead::new(&mut params, &mut rng);
        Ok(Self {
            config,
            params,
            encoder,
            attention,
            modulation,
            head,
        })
    }

    pub fn geometry(&self, cloud: &PointCloud) -> Result<SampleGeometry> {
        SampleGeometry::new(cloud, &self.config)
    }

    /// Similarity sum of every level and the chosen level, given patch
    /// features already on the tape.
    fn select<T: Scalar>(
        &self,
        tape: &Tape<T>,
        patch_features: &[Var],
        codebook: &Codebook,
    ) -> Result<(Vec<f64>, Vec<Tensor<f64>>, usize)> {
        let mut alphas = Vec::with_capacity(patch_features.len());
        let mut templates = Vec::with_capacity(patch_features.len());
        let mut counts = Vec::with_capacity(patch_features.len());
        for (li, &p) in patch_features.iter().enumerate() {
            let queries: Tensor<f64> = tape.value(p).cast();
            let (t, sims) = codebook.templates(li + 1, &queries)?;
            alphas.push(sims.iter().sum());
            counts.push(queries.rows());
            templates.push(t);
        }
        let level = select_scale(&alphas, &counts, self.config.normalized_scale);
        Ok((alphas, templates, level))
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundParams,
        geometry: &SampleGeometry,
        codebook: &Codebook,
    ) -> Result<ForwardOutput> {
        self.forward_full(tape, bound, geometry, codebook)
            .map(|(out, _)| out)
    }

    fn forward_full<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundParams,
        geometry: &SampleGeometry,
        codebook: &Codebook,
    ) -> Result<(ForwardOutput, Vec<f64>)> {
        let x = tape.constant(geometry.input.cast())?;
        let z = self.encoder.forward(tape, bound, x)?;
        let patch_features = geometry
            .levels
            .iter()
            .map(|l| l.reducer.apply(tape, z))
            .collect::<Result<Vec<_>>>()?;
        let (alphas, mut templates, level) = self.select(tape, &patch_features, codebook)?;
        let chosen = &geometry.levels[level];
        let t = tape.constant(templates.swap_remove(level).cast())?;
        let dot = tape.row_dot(patch_features[level], t)?;
        let delta = tape.affine(dot, -1.0, 1.0)?;
        let delta = tape.gather_rows(delta, &chosen.assignment)?;
        let attended =
            self.attention
                .forward(tape, bound, z, t, &chosen.query_angles, &chosen.key_angles)?;
        let modulated = self.modulation.forward(tape, bound, attended, delta)?;
        let output = self.head.forward(tape, bound, modulated, attended)?;
        Ok((ForwardOutput { output, level }, alphas))
    }

    pub fn predict_geometry(&self, geometry: &SampleGeometry, codebook: &Codebook) -> Result<Prediction> {
        let mut tape = Tape::<f64>::new();
        let bound = self.params.bind(&mut tape)?;
        let (out, alphas) = self.forward_full(&mut tape, &bound, geometry, codebook)?;
        let v = tape.value(out.output);
        let offsets = (0..v.rows())
            .map(|r| Vec3::new(v.get(r, 0), v.get(r, 1), v.get(r, 2)))
            .collect();
        let mask_probs = (0..v.rows())
            .map(|r| crate::autodiff::sigmoid(v.get(r, 3)))
            .collect();
        Ok(Prediction {
            offsets,
            mask_probs,
            level: out.level,
            alphas,
        })
    }

    pub fn predict(&self, cloud: &PointCloud, codebook: &Codebook) -> Result<Prediction> {
        self.predict_geometry(&self.geometry(cloud)?, codebook)
    }

    pub fn build_codebook(&self, clouds: &[PointCloud]) -> Result<Codebook> {
        crate::codebook::build_codebook(
            clouds,
            &self.config.patch,
            &self.encoder,
            &self.params,
            self.config.feature_mode,
            self.config.tau,
        )
    }

    pub fn metadata(&self, extra: serde_json::Value) -> serde_json::Value {
        serde_json::json!({
            "format": MODEL_FORMAT,
            "config": self.config,
            "extra": extra,
        })
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        self.params.save(path, &self.metadata(extra))
    }

    /// Checkpoint and its free-form `extra` metadata.
    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let (params, meta) = ParamStore::load(path)?;
        Self::from_parts(params, meta)
    }

    pub fn from_parts(params: ParamStore, meta: serde_json::Value) -> Result<(Self, serde_json::Value)> {
        if meta.get("format").and_then(|f| f.as_str()) != Some(MODEL_FORMAT) {
            return Err(Error::CorruptFile("checkpoint is not a model".into()));
        }
        let config: ModelConfig = serde_json::from_value(meta["config"].clone())?;
        let mut model = Self::new(config, 0)?;
        let layout: Vec<(&str, (usize, usize))> =
            model.params.iter().map(|(n, t)| (n, t.shape())).collect();
        let found: Vec<(&str, (usize, usize))> = params.iter().map(|(n, t)| (n, t.shape())).collect();
        if layout != found {
            return Err(Error::CorruptFile("checkpoint parameter layout differs".into()));
        }
        model.params = params;
        Ok((model, meta["extra"].clone()))
    }
}
