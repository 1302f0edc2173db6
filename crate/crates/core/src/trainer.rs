//! Offset, direction and mask losses and the online training loop.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{negative_augment, AugmentConfig, AugmentedSample, Preset};
use crate::autodiff::{sigmoid, Adam, AdamConfig, Scalar, Tape, Tensor, Var};
use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Vec3};
use crate::model::{Model, SampleGeometry};

pub const COSINE_EPS: f64 = 1e-6;
pub const PROB_CLAMP: f64 = 1e-7;
const ENCODER_PREFIX: &str = "encoder.";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub sim: f64,
    pub bce: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { sim: 0.5, bce: 0.5 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.sim.is_finite() && self.sim >= 0.0 && self.bce.is_finite() && self.bce >= 0.0) {
            return Err(Error::InvalidConfig(format!("bad loss weights {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub dist: f64,
    pub sim: f64,
    pub bce: f64,
}

impl LossComponents {
    pub fn total(&self, weights: &LossWeights) -> f64 {
        loss_total(self, weights)
    }
}

/// Neumaier-compensated sum.
fn accurate_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

fn check_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!("{what}: {a} predictions for {b} targets")));
    }
    Ok(())
}

/// Mean over points of the L1 distance between offsets.
pub fn loss_dist(pred: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    check_len("loss_dist", pred.len(), gt.len())?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let total = accurate_sum(pred.iter().zip(gt).flat_map(|(p, g)| { let d = (p - g).abs(); [d.x, d.y, d.z] }));
    Ok(total / pred.len() as f64)
}

fn cosine(p: &Vec3, t: &Vec3) -> f64 {
    p.dot(t) / (p.norm() * t.norm() + COSINE_EPS)
}

/// −mean ½(1 + cos) over points whose target offset is nonzero.
pub fn loss_sim(pred: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    check_len("loss_sim", pred.len(), gt.len())?;
    let active = gt.iter().filter(|g| g.norm() > 0.0).count();
    let total = accurate_sum(
        pred.iter()
            .zip(gt)
            .filter(|(_, g)| g.norm() > 0.0)
            .map(|(p, g)| 0.5 * (1.0 + cosine(p, g))),
    );
    if active == 0 {
        return Ok(0.0);
    }
    Ok(-total / active as f64)
}

/// Mean binary cross-entropy on probabilities clamped to [1e-7, 1 − 1e-7].
pub fn loss_bce(probs: &[f64], mask: &[bool]) -> Result<f64> {
    check_len("loss_bce", probs.len(), mask.len())?;
    if probs.is_empty() {
        return Ok(0.0);
    }
    let total = accurate_sum(probs.iter().zip(mask).map(|(&p, &m)| {
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        if m {
            -p.ln()
        } else {
            -(1.0 - p).ln()
        }
    }));
    Ok(total / probs.len() as f64)
}

pub fn loss_total(c: &LossComponents, w: &LossWeights) -> f64 {
    c.dist + w.sim * c.sim + w.bce * c.bce
}

/// Ground truth for one sample, as the loss consumes it.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub offsets: Vec<Vec3>,
    pub mask: Vec<bool>,
}

impl Targets {
    pub fn from_sample(sample: &AugmentedSample) -> Self {
        Self {
            offsets: sample.offsets.clone(),
            mask: sample.mask.clone(),
        }
    }
}

/// Total loss of an N×4 head output as a tape scalar, with its parts.
pub fn tape_loss<T: Scalar>(
    tape: &mut Tape<T>,
    output: Var,
    targets: &Targets,
    weights: &LossWeights,
) -> Result<(Var, LossComponents)> {
    let n = tape.shape(output).0;
    check_len("loss", n, targets.offsets.len())?;
    check_len("loss", n, targets.mask.len())?;
    let values: Tensor<f64> = tape.value(output).cast();
    let offsets = tape.slice_cols(output, 0, 3)?;
    let logits = tape.slice_cols(output, 3, 1)?;
    let pred: Vec<Vec3> = (0..n)
        .map(|r| Vec3::new(values.get(r, 0), values.get(r, 1), values.get(r, 2)))
        .collect();
    let inv_n = 1.0 / n.max(1) as f64;

    let dist = loss_dist(&pred, &targets.offsets)?;
    let mut g_dist = Tensor::<f64>::zeros(n, 3);
    for (r, (p, g)) in pred.iter().zip(&targets.offsets).enumerate() {
        for c in 0..3 {
            let d = p[c] - g[c];
            let s = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            g_dist.set(r, c, s * inv_n);
        }
    }

    let sim = loss_sim(&pred, &targets.offsets)?;
    let active = targets.offsets.iter().filter(|g| g.norm() > 0.0).count();
    let mut g_sim = Tensor::<f64>::zeros(n, 3);
    if active > 0 {
        let scale = -0.5 / active as f64;
        for (r, (p, t)) in pred.iter().zip(&targets.offsets).enumerate() {
            let tn = t.norm();
            if tn == 0.0 {
                continue;
            }
            let pn = p.norm();
            let den = pn * tn + COSINE_EPS;
            let mut d = t / den;
            if pn > 0.0 {
                d -= p * (p.dot(t) * tn / (pn * den * den));
            }
            for c in 0..3 {
                g_sim.set(r, c, scale * d[c]);
            }
        }
    }

    let probs: Vec<f64> = (0..n).map(|r| sigmoid(values.get(r, 3))).collect();
    let bce = loss_bce(&probs, &targets.mask)?;
    let mut g_bce = Tensor::<f64>::zeros(n, 1);
    for (r, (&p, &m)) in probs.iter().zip(&targets.mask).enumerate() {
        if (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
            g_bce.set(r, 0, (p - if m { 1.0 } else { 0.0 }) * inv_n);
        }
    }

    let l_dist = tape.fused(offsets, dist, g_dist.cast())?;
    let l_sim = tape.fused(offsets, sim, g_sim.cast())?;
    let l_bce = tape.fused(logits, bce, g_bce.cast())?;
    let total = tape.weighted_sum(&[(l_dist, 1.0), (l_sim, weights.sim), (l_bce, weights.bce)])?;
    Ok((total, LossComponents { dist, sim, bce }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub adam: AdamConfig,
    /// Clouds per optimizer step.
    pub batch_size: usize,
    /// Inclusive range of anomalies composed onto each training sample.
    pub anomalies: (usize, usize),
    pub presets: Vec<Preset>,
    /// Enable planar and angular rigid shifts.
    pub rigid_shifts: bool,
    pub seed: u64,
    pub weights: LossWeights,
    /// Epochs between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Epochs between codebook rebuilds from the current encoder.
    pub codebook_refresh: usize,
    pub precision: Precision,
    /// Keep the point encoder at its initial parameters, as a stand-in for
    /// a pretrained backbone. Codebooks are then built once.
    pub freeze_encoder: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            steps_per_epoch: 10,
            adam: AdamConfig::default(),
            batch_size: 1,
            anomalies: (1, 3),
            presets: vec![Preset::Small, Preset::Large],
            rigid_shifts: false,
            seed: 0,
            weights: LossWeights::default(),
            checkpoint_every: 0,
            codebook_refresh: 25,
            precision: Precision::F64,
            freeze_encoder: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.steps_per_epoch == 0 || self.batch_size == 0 {
            return bad("steps per epoch and batch size must be positive".into());
        }
        if !(self.adam.lr > 0.0) {
            return bad(format!("learning rate {} must be positive", self.adam.lr));
        }
        if self.anomalies.0 == 0 || self.anomalies.0 > self.anomalies.1 {
            return bad(format!("bad anomaly range {:?}", self.anomalies));
        }
        if self.presets.is_empty() {
            return bad("no amplitude presets".into());
        }
        if self.codebook_refresh == 0 {
            return bad("codebook refresh must be positive".into());
        }
        self.weights.validate()
    }

    fn augment_config(&self, n: usize, preset: Preset) -> AugmentConfig {
        if self.rigid_shifts {
            AugmentConfig::industrial(n, preset)
        } else {
            AugmentConfig::new(n, preset)
        }
    }
}

/// Normal training clouds of one object class.
#[derive(Debug, Clone)]
pub struct ClassData {
    pub name: String,
    pub clouds: Vec<PointCloud>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_dist: f64,
    pub loss_sim: f64,
    pub loss_bce: f64,
    pub wall_ms: u128,
}

pub const LOG_HEADER: &str = "epoch,loss_total,loss_dist,loss_sim,loss_bce,wall_ms";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.loss_total, self.loss_dist, self.loss_sim, self.loss_bce, self.wall_ms
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    /// Codebook per class, built with the final encoder.
    pub codebooks: Vec<(String, Codebook)>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> f64 {
        self.log.last().map_or(f64::NAN, |e| e.loss_total)
    }
}

pub fn build_class_codebooks(model: &Model, data: &[ClassData]) -> Result<Vec<(String, Codebook)>> {
    data.iter()
        .map(|c| {
            let mut book = model.build_codebook(&c.clouds)?;
            book.meta.class = c.name.clone();
            book.meta.sources = (0..c.clouds.len()).map(|i| format!("{}/{i}", c.name)).collect();
            book.meta.config_hash = model.config.hash();
            Ok((c.name.clone(), book))
        })
        .collect()
}

/// Loss and gradient of one augmented sample, in the chosen precision.
fn sample_step<T: Scalar>(
    model: &Model,
    geometry: &SampleGeometry,
    codebook: &Codebook,
    targets: &Targets,
    weights: &LossWeights,
) -> Result<(LossComponents, f64, Vec<Tensor<f64>>)> {
    let mut tape = Tape::<T>::new();
    let bound = model.params.bind(&mut tape)?;
    let out = model.forward(&mut tape, &bound, geometry, codebook)?;
    let (loss, parts) = tape_loss(&mut tape, out.output, targets, weights)?;
    let total = tape.value(loss).item().as_f64();
    tape.backward(loss)?;
    Ok((parts, total, model.params.grads(&tape, &bound)))
}

/// Loss and gradient of one augmented sample.
pub fn sample_gradient(
    model: &Model,
    sample: &AugmentedSample,
    codebook: &Codebook,
    weights: &LossWeights,
    precision: Precision,
) -> Result<(LossComponents, f64, Vec<Tensor<f64>>)> {
    let geometry = model.geometry(&sample.abnormal)?;
    let targets = Targets::from_sample(sample);
    match precision {
        Precision::F32 => sample_step::<f32>(model, &geometry, codebook, &targets, weights),
        Precision::F64 => sample_step::<f64>(model, &geometry, codebook, &targets, weights),
    }
}

/// Files written by a training run inside its output directory.
pub struct TrainPaths {
    pub dir: PathBuf,
}

impl TrainPaths {
    pub fn log(&self) -> PathBuf {
        self.dir.join("train_log.csv")
    }

    pub fn model(&self) -> PathBuf {
        self.dir.join("model.bin")
    }

    pub fn checkpoint(&self, epoch: usize) -> PathBuf {
        self.dir.join(format!("checkpoint_{epoch:05}.bin"))
    }

    pub fn codebook(&self, class: &str) -> PathBuf {
        self.dir.join(format!("codebook_{class}.bin"))
    }

    pub fn failure(&self) -> PathBuf {
        self.dir.join("nan_dump.json")
    }
}

fn dump_failure(paths: Option<&TrainPaths>, step: usize, seed: u64, class: &str, detail: &str) {
    if let Some(p) = paths {
        let dump = serde_json::json!({
            "step": step,
            "sample_seed": seed,
            "class": class,
            "detail": detail,
        });
        // best effort: the NaNLoss error carries the same fields
        let _ = fs::write(p.failure(), dump.to_string());
    }
}

/// Train `model` on online-augmented copies of the normal clouds.
///
/// With `out` set, writes the CSV log, periodic checkpoints, the final
/// model and one codebook per class into that directory.
pub fn train(
    model: &mut Model,
    data: &[ClassData],
    config: &TrainConfig,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() || data.iter().any(|c| c.clouds.is_empty()) {
        return Err(Error::EmptyInput);
    }
    let paths = out.map(|d| TrainPaths { dir: d.to_path_buf() });
    let mut log_file = match &paths {
        Some(p) => {
            fs::create_dir_all(&p.dir).map_err(|e| Error::io(&p.dir, e))?;
            let mut f = fs::File::create(p.log()).map_err(|e| Error::io(&p.log(), e))?;
            writeln!(f, "{LOG_HEADER}").map_err(|e| Error::io(&p.log(), e))?;
            Some(f)
        }
        None => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(&model.params, config.adam);
    let mut codebooks = build_class_codebooks(model, data)?;
    let mut log = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    let start = Instant::now();

    for epoch in 1..=config.epochs {
        // a frozen encoder reproduces the same codebooks
        if !config.freeze_encoder && epoch > 1 && (epoch - 1) % config.codebook_refresh == 0 {
            codebooks = build_class_codebooks(model, data)?;
        }
        let mut sums = LossComponents::default();
        let mut total_sum = 0.0;
        let mut count = 0usize;
        for _ in 0..config.steps_per_epoch {
            step += 1;
            let mut grads: Option<Vec<Tensor<f64>>> = None;
            for _ in 0..config.batch_size {
                let class = rng.gen_range(0..data.len());
                let cloud = data[class].clouds.choose(&mut rng).expect("non-empty");
                let n = rng.gen_range(config.anomalies.0..=config.anomalies.1);
                let preset = *config.presets.choose(&mut rng).expect("non-empty");
                let sample_seed = rng.gen::<u64>();
                let name = &data[class].name;
                let sample = negative_augment(cloud, &config.augment_config(n, preset), sample_seed)?;
                let result = sample_gradient(
                    model,
                    &sample,
                    &codebooks[class].1,
                    &config.weights,
                    config.precision,
                );
                let (parts, total, g) = match result {
                    Ok(r) if r.1.is_finite() => r,
                    Ok(r) => {
                        dump_failure(paths.as_ref(), step, sample_seed, name, &format!("loss {}", r.1));
                        return Err(Error::NaNLoss { step, sample_seed });
                    }
                    Err(Error::NonFinite(detail)) => {
                        dump_failure(paths.as_ref(), step, sample_seed, name, &detail);
                        return Err(Error::NaNLoss { step, sample_seed });
                    }
                    Err(e) => return Err(e),
                };
                sums.dist += parts.dist;
                sums.sim += parts.sim;
                sums.bce += parts.bce;
                total_sum += total;
                count += 1;
                grads = Some(match grads {
                    None => g,
                    Some(mut acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                                *x += y;
                            }
                        }
                        acc
                    }
                });
            }
            let mut grads = grads.expect("batch size ≥ 1");
            if config.batch_size > 1 {
                let scale = 1.0 / config.batch_size as f64;
                for g in &mut grads {
                    g.data_mut().iter_mut().for_each(|v| *v *= scale);
                }
            }
            if config.freeze_encoder {
                for (g, (name, _)) in grads.iter_mut().zip(model.params.iter()) {
                    if name.starts_with(ENCODER_PREFIX) {
                        g.data_mut().iter_mut().for_each(|v| *v = 0.0);
                    }
                }
            }
            adam.step(&mut model.params, &grads)?;
        }
        let c = count as f64;
        let entry = EpochLog {
            epoch,
            loss_total: total_sum / c,
            loss_dist: sums.dist / c,
            loss_sim: sums.sim / c,
            loss_bce: sums.bce / c,
            wall_ms: start.elapsed().as_millis(),
        };
        if let (Some(f), Some(p)) = (&mut log_file, &paths) {
            writeln!(f, "{}", entry.csv_row()).map_err(|e| Error::io(&p.log(), e))?;
        }
        log.push(entry);
        if let Some(p) = &paths {
            if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 {
                model.save(&p.checkpoint(epoch), serde_json::json!({ "epoch": epoch }))?;
            }
        }
    }

    if !config.freeze_encoder {
        codebooks = build_class_codebooks(model, data)?;
    }
    if let Some(p) = &paths {
        model.save(
            &p.model(),
            serde_json::json!({
                "epoch": config.epochs,
                "train": config,
                "classes": data.iter().map(|c| c.name.clone()).collect::<Vec<_>>(),
            }),
        )?;
        for (name, book) in &codebooks {
            book.save(&p.codebook(name))?;
        }
    }
    Ok(TrainOutcome { log, codebooks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::augment::{gen_shape, ShapeKind};
    use crate::model::ModelConfig;
    use crate::patchify::LevelSpec;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let values = [1.0, 1e-16, 1e-16, -1.0];
        assert_eq!(values.iter().sum::<f64>(), 0.0);
        assert_eq!(accurate_sum(values), 2e-16);
    }

    #[test]
    fn dist_examples() {
        let a = [v(0.1, 0.2, 0.3), v(1.0, 1.0, 1.0)];
        assert_eq!(loss_dist(&a, &a).unwrap(), 0.0);
        assert_eq!(loss_dist(&[v(1.0, 0.0, 0.0)], &[Vec3::zeros()]).unwrap(), 1.0);
        let l = loss_dist(&[v(0.1, 0.2, 0.3), Vec3::zeros()], &[Vec3::zeros(); 2]).unwrap();
        assert!((l - 0.3).abs() < 1e-15);
        assert!(matches!(loss_dist(&a, &a[..1]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn sim_examples() {
        let t = v(1.0, 2.0, -0.5);
        assert!((loss_sim(&[t * 3.0], &[t]).unwrap() + 1.0).abs() < 1e-5);
        assert!(loss_sim(&[-t], &[t]).unwrap().abs() < 1e-5);
        let l = loss_sim(&[v(1.0, 0.0, 0.0)], &[v(0.0, 2.0, 0.0)]).unwrap();
        assert!((l + 0.5).abs() < 1e-12);
        // no active points contributes exactly zero
        assert_eq!(loss_sim(&[t], &[Vec3::zeros()]).unwrap(), 0.0);
    }

    #[test]
    fn bce_examples() {
        assert!((loss_bce(&[0.5; 4], &[true, false, true, false]).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!((loss_bce(&[0.9], &[true]).unwrap() + 0.9f64.ln()).abs() < 1e-12);
        let confident = loss_bce(&[1.0, 0.0], &[true, false]).unwrap();
        assert!(confident > 0.0 && confident < 2e-7);
    }

    #[test]
    fn total_examples() {
        let c = LossComponents { dist: 0.3, sim: -1.0, bce: 0.7 };
        // 0.3 and 0.35 are not representable; the exactly rounded sum of
        // the stored inputs is the double just below 0.15
        let total = loss_total(&c, &LossWeights::default());
        assert_eq!(total, 0.14999999999999997);
        assert_eq!(total.to_bits() + 1, 0.15f64.to_bits());
        let zero = LossWeights { sim: 0.0, bce: 0.0 };
        assert_eq!(loss_total(&c, &zero), 0.3);
        assert_eq!(LossWeights::default(), LossWeights { sim: 0.5, bce: 0.5 });
        assert!(LossWeights { sim: -1.0, bce: 0.0 }.validate().is_err());
    }

    #[test]
    fn tape_loss_matches_plain_losses_and_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 7;
        let mut out = Tensor::<f64>::zeros(n, 4);
        out.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        let offsets: Vec<Vec3> = (0..n)
            .map(|i| if i % 2 == 0 { Vec3::zeros() } else { v(0.3, -0.2, 0.1) * i as f64 })
            .collect();
        let targets = Targets {
            mask: offsets.iter().map(|o| o.norm() > 0.0).collect(),
            offsets,
        };
        let w = LossWeights::default();
        let mut store = crate::autodiff::ParamStore::new();
        store.insert("out", out.clone());
        let report = grad_check(&store, 1e-6, |tape, b| {
            tape_loss(tape, b.var(0), &targets, &w).map(|(l, _)| l)
        })
        .unwrap();
        assert!(report.max_rel_error <= 1e-4, "{report:?}");

        let mut tape = Tape::<f64>::new();
        let x = tape.constant(out.clone()).unwrap();
        let (l, parts) = tape_loss(&mut tape, x, &targets, &w).unwrap();
        let pred: Vec<Vec3> = (0..n).map(|r| v(out.get(r, 0), out.get(r, 1), out.get(r, 2))).collect();
        let probs: Vec<f64> = (0..n).map(|r| sigmoid(out.get(r, 3))).collect();
        let expected = LossComponents {
            dist: loss_dist(&pred, &targets.offsets).unwrap(),
            sim: loss_sim(&pred, &targets.offsets).unwrap(),
            bce: loss_bce(&probs, &targets.mask).unwrap(),
        };
        assert_eq!(parts, expected);
        assert!((tape.value(l).item() - expected.total(&w)).abs() < 1e-12);
    }

    fn toy_model() -> (Model, PointCloud, Codebook, Targets) {
        let mut config = ModelConfig::default();
        config.patch.levels = vec![LevelSpec { count: 4, size: 16 }];
        // untrained patch features are nearly parallel; keep every patch
        // as its own template so attention sees distinct keys
        config.tau = 1.0;
        let mut model = Model::new(config, 11).unwrap();
        // small offsets centred away from zero keep the loss small, which
        // keeps finite-difference roundoff below the checked tolerance
        let w = model.params.tensor_mut(model.head.output.weight);
        for r in 0..w.rows() {
            for c in 0..3 {
                w.set(r, c, w.get(r, c) * 0.01);
            }
        }
        let b = model.params.tensor_mut(model.head.output.bias);
        b.data_mut()[..3].copy_from_slice(&[0.05, -0.05, 0.05]);
        let full = gen_shape(ShapeKind::Torus, 256, 5).unwrap();
        let cloud = crate::geometry::select(&full, &(0..64).collect::<Vec<_>>());
        let reference = crate::geometry::select(&full, &(64..128).collect::<Vec<_>>());
        let book = model.build_codebook(&[reference]).unwrap();
        // targets sit a fixed margin away from the initial prediction so
        // no L1 term is near its kink
        let initial = model.predict(&cloud, &book).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let offsets: Vec<Vec3> = initial
            .offsets
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if i % 3 == 0 {
                    p.map(|c| c + if rng.gen::<bool>() { 0.03 } else { -0.03 })
                } else {
                    Vec3::zeros()
                }
            })
            .collect();
        let targets = Targets {
            mask: offsets.iter().map(|o| o.norm() > 0.0).collect(),
            offsets,
        };
        (model, cloud, book, targets)
    }

    #[test]
    fn full_model_gradient_check() {
        let (model, cloud, book, targets) = toy_model();
        let geometry = model.geometry(&cloud).unwrap();
        assert_eq!(geometry.levels[0].patches.len(), 4);
        assert_eq!(book.len(1), 4);
        for (p, t) in model.predict(&cloud, &book).unwrap().offsets.iter().zip(&targets.offsets) {
            assert!((p - t).abs().min() > 1e-3);
        }
        let w = LossWeights::default();
        let report = grad_check(&model.params, 1e-4, |tape, b| {
            let out = model.forward(tape, b, &geometry, &book)?;
            tape_loss(tape, out.output, &targets, &w).map(|(l, _)| l)
        })
        .unwrap();
        assert_eq!(report.components, model.params.size());
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }

    fn tiny_data() -> Vec<ClassData> {
        vec![ClassData {
            name: "sphere".into(),
            clouds: (0..2).map(|s| gen_shape(ShapeKind::Sphere, 256, s).unwrap()).collect(),
        }]
    }

    fn tiny_config() -> (ModelConfig, TrainConfig) {
        let mut model = ModelConfig::default();
        model.patch.levels = vec![LevelSpec { count: 8, size: 32 }, LevelSpec { count: 4, size: 64 }];
        let train = TrainConfig {
            epochs: 1,
            steps_per_epoch: 2,
            seed: 5,
            ..TrainConfig::default()
        };
        (model, train)
    }

    #[test]
    fn smoke_run_writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let (mc, tc) = tiny_config();
        let mut model = Model::new(mc, 1).unwrap();
        let outcome = train(&mut model, &tiny_data(), &tc, Some(dir.path())).unwrap();
        assert_eq!(outcome.log.len(), 1);
        let paths = TrainPaths { dir: dir.path().to_path_buf() };
        assert!(paths.model().exists());
        assert!(paths.codebook("sphere").exists());
        let log = fs::read_to_string(paths.log()).unwrap();
        let lines: Vec<&str> = log.lines().collect();
        assert_eq!(lines[0], LOG_HEADER);
        assert_eq!(lines.len(), 2);
        let (loaded, _) = Model::load(&paths.model()).unwrap();
        assert_eq!(loaded.config, model.config);
    }

    #[test]
    fn training_is_deterministic() {
        let (mc, tc) = tiny_config();
        let tc = TrainConfig { epochs: 2, ..tc };
        let run = || {
            let mut model = Model::new(mc.clone(), 1).unwrap();
            let outcome = train(&mut model, &tiny_data(), &tc, None).unwrap();
            (outcome.final_loss(), model.params)
        };
        let (a, pa) = run();
        let (b, pb) = run();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(pa, pb);
    }

    #[test]
    fn frozen_encoder_keeps_its_weights() {
        let (mc, tc) = tiny_config();
        let run = |freeze: bool| {
            let mut model = Model::new(mc.clone(), 1).unwrap();
            let before = model.params.clone();
            let tc = TrainConfig { freeze_encoder: freeze, ..tc.clone() };
            train(&mut model, &tiny_data(), &tc, None).unwrap();
            let changed = |name: &str| model.params.get(name) != before.get(name);
            (changed("encoder.0.w"), changed("head.0.w"))
        };
        assert_eq!(run(true), (false, true));
        assert_eq!(run(false), (true, true));
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        assert_eq!(ok.epochs, 300);
        assert!(TrainConfig { epochs: 0, ..ok.clone() }.validate().is_err());
        let mut bad_lr = ok.clone();
        bad_lr.adam.lr = 0.0;
        assert!(bad_lr.validate().is_err());
        assert!(TrainConfig { anomalies: (2, 1), ..ok }.validate().is_err());
    }
}
