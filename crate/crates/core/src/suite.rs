//! The procedural benchmark: one class per synthetic shape, normal
//! training clouds and a labeled test split of augmented and clean clouds.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{gen_shape, negative_augment, AugmentConfig, Preset, ShapeKind};
use crate::error::{Error, Result};
use crate::eval::TestSample;
use crate::geometry::io::{load_pointcloud, write_ply, Format, LoadOptions, PlyEncoding};
use crate::geometry::PointCloud;
use crate::trainer::ClassData;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub classes: Vec<ShapeKind>,
    pub train_per_class: usize,
    pub anomalous_per_class: usize,
    pub clean_per_class: usize,
    pub points: usize,
    /// Anomalous test samples cycle through these presets.
    pub presets: Vec<Preset>,
    /// Inclusive range of deformations per anomalous test sample.
    pub anomalies: (usize, usize),
    pub rigid_shifts: bool,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            classes: ShapeKind::ALL.to_vec(),
            train_per_class: 20,
            anomalous_per_class: 50,
            clean_per_class: 50,
            points: 2048,
            presets: vec![Preset::Small, Preset::Large],
            anomalies: (1, 3),
            rigid_shifts: false,
            seed: 0,
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() || self.train_per_class == 0 {
            return Err(Error::InvalidConfig("suite needs classes and training clouds".into()));
        }
        if self.anomalous_per_class > 0 && self.presets.is_empty() {
            return Err(Error::InvalidConfig("suite has no augmentation presets".into()));
        }
        let (lo, hi) = self.anomalies;
        if lo == 0 || hi < lo {
            return Err(Error::InvalidConfig(format!("bad anomaly range {lo}..{hi}")));
        }
        Ok(())
    }

    fn augment_config(&self, n: usize, preset: Preset) -> AugmentConfig {
        if self.rigid_shifts {
            AugmentConfig::industrial(n, preset)
        } else {
            AugmentConfig::new(n, preset)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Suite {
    pub train: Vec<ClassData>,
    pub test: Vec<TestSample>,
}

fn class_seed(seed: u64, class: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(class as u64 + 1)
}

/// Deterministic in `config.seed`; every class draws from its own stream.
pub fn generate(config: &SuiteConfig) -> Result<Suite> {
    config.validate()?;
    let mut train = Vec::with_capacity(config.classes.len());
    let mut test = Vec::new();
    for (c, &kind) in config.classes.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(class_seed(config.seed, c));
        let name = kind.name().to_string();
        let clouds = (0..config.train_per_class)
            .map(|_| gen_shape(kind, config.points, rng.gen()))
            .collect::<Result<Vec<_>>>()?;
        train.push(ClassData {
            name: name.clone(),
            clouds,
        });
        for i in 0..config.anomalous_per_class {
            let base = gen_shape(kind, config.points, rng.gen())?;
            let n = rng.gen_range(config.anomalies.0..=config.anomalies.1);
            let preset = config.presets[i % config.presets.len()];
            let sample = negative_augment(&base, &config.augment_config(n, preset), rng.gen())?;
            test.push(TestSample {
                class: name.clone(),
                name: format!("{name}_anomalous_{i:03}"),
                cloud: sample.abnormal,
                labels: sample.mask,
            });
        }
        for i in 0..config.clean_per_class {
            let cloud = gen_shape(kind, config.points, rng.gen())?;
            test.push(TestSample {
                class: name.clone(),
                name: format!("{name}_clean_{i:03}"),
                labels: vec![false; cloud.len()],
                cloud,
            });
        }
    }
    Ok(Suite { train, test })
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    classes: Vec<ManifestClass>,
}

#[derive(Serialize, Deserialize)]
struct ManifestClass {
    name: String,
    train: Vec<String>,
    test: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Labels {
    labels: Vec<bool>,
}

pub const MANIFEST: &str = "suite.json";

impl Suite {
    /// Layout: `suite.json`, `train/<class>_NNN.ply`,
    /// `test/<name>.ply` and `test/<name>_labels.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let (train_dir, test_dir) = (dir.join("train"), dir.join("test"));
        for d in [&train_dir, &test_dir] {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        let mut classes = Vec::with_capacity(self.train.len());
        for class in &self.train {
            let mut train = Vec::with_capacity(class.clouds.len());
            for (i, cloud) in class.clouds.iter().enumerate() {
                let name = format!("{}_{i:03}", class.name);
                write_ply(
                    &train_dir.join(format!("{name}.ply")),
                    cloud,
                    None,
                    PlyEncoding::BinaryLittleEndian,
                )?;
                train.push(name);
            }
            classes.push(ManifestClass {
                name: class.name.clone(),
                train,
                test: Vec::new(),
            });
        }
        for sample in &self.test {
            write_ply(
                &test_dir.join(format!("{}.ply", sample.name)),
                &sample.cloud,
                None,
                PlyEncoding::BinaryLittleEndian,
            )?;
            let labels = test_dir.join(format!("{}_labels.json", sample.name));
            let text = serde_json::to_string(&Labels {
                labels: sample.labels.clone(),
            })?;
            fs::write(&labels, text).map_err(|e| Error::io(&labels, e))?;
            match classes.iter_mut().find(|c| c.name == sample.class) {
                Some(c) => c.test.push(sample.name.clone()),
                None => classes.push(ManifestClass {
                    name: sample.class.clone(),
                    train: Vec::new(),
                    test: vec![sample.name.clone()],
                }),
            }
        }
        let manifest = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&Manifest { classes })?;
        fs::write(&manifest, text).map_err(|e| Error::io(&manifest, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = dir.join(MANIFEST);
        let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let opts = LoadOptions::default();
        let ply = |sub: &str, name: &str| -> PathBuf { dir.join(sub).join(format!("{name}.ply")) };
        let mut train = Vec::new();
        let mut test = Vec::new();
        for class in manifest.classes {
            let clouds = class
                .train
                .iter()
                .map(|n| load_pointcloud(&ply("train", n), Format::Ply, &opts))
                .collect::<Result<Vec<_>>>()?;
            if !clouds.is_empty() {
                train.push(ClassData {
                    name: class.name.clone(),
                    clouds,
                });
            }
            for name in &class.test {
                let cloud = load_pointcloud(&ply("test", name), Format::Ply, &opts)?;
                let path = dir.join("test").join(format!("{name}_labels.json"));
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let labels: Labels = serde_json::from_str(&text)?;
                if labels.labels.len() != cloud.len() {
                    return Err(Error::CountMismatch(format!(
                        "{name}: {} labels for {} points",
                        labels.labels.len(),
                        cloud.len()
                    )));
                }
                test.push(TestSample {
                    class: class.name.clone(),
                    name: name.clone(),
                    cloud,
                    labels: labels.labels,
                });
            }
        }
        Ok(Self { train, test })
    }
}

/// Clouds of one class from a suite, for codebook building.
pub fn class_clouds<'a>(train: &'a [ClassData], class: &str) -> Option<&'a [PointCloud]> {
    train.iter().find(|c| c.name == class).map(|c| c.clouds.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SuiteConfig {
        SuiteConfig {
            classes: vec![ShapeKind::Sphere, ShapeKind::Torus],
            train_per_class: 2,
            anomalous_per_class: 2,
            clean_per_class: 1,
            points: 256,
            ..SuiteConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic_and_labeled() {
        let a = generate(&tiny()).unwrap();
        let b = generate(&tiny()).unwrap();
        assert_eq!(a.train.len(), 2);
        assert_eq!(a.test.len(), 6);
        for (x, y) in a.test.iter().zip(&b.test) {
            assert_eq!(x.cloud, y.cloud);
            assert_eq!(x.labels, y.labels);
        }
        let anomalous = a.test.iter().filter(|s| s.is_anomalous()).count();
        assert_eq!(anomalous, 4);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let suite = generate(&tiny()).unwrap();
        suite.save(dir.path()).unwrap();
        let back = Suite::load(dir.path()).unwrap();
        assert_eq!(back.train.len(), suite.train.len());
        assert_eq!(back.test.len(), suite.test.len());
        for (x, y) in back.test.iter().zip(&suite.test) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.labels, y.labels);
            for (p, q) in x.cloud.points().iter().zip(y.cloud.points()) {
                assert!((p - q).norm() < 1e-6);
            }
        }
    }
}
