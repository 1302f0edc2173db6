//! Procedural normal shapes and pseudo-anomalous variants with exact
//! ground-truth offsets and masks.

mod deform;
mod shapes;

pub use deform::{
    apply_cutoff, apply_cutoff_cube, apply_cutoff_cylinder, apply_gaussian_bump, apply_rigid_shift,
    apply_sine_bulge, azimuths, region_members, CutoffShape, Fragment, Motion, Region,
    DISPLACEMENT_CUTOFF,
};
pub use shapes::{gear_profile_radius, gen_shape, ShapeKind, GEAR_TEETH, TORUS_MAJOR, TORUS_MINOR};

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::io::{load_pointcloud, write_ply, Format, LoadOptions, PlyEncoding};
use crate::geometry::{estimate_normals, PointCloud, Vec3};

/// Attempts per anomaly before giving up on retryable errors.
pub const MAX_ATTEMPTS: usize = 8;
const NORMAL_K: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    GaussianBump,
    SineBulge,
    CutoffCube,
    CutoffCylinder,
    PlanarShift,
    AngularShift,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 6] = [
        AnomalyKind::GaussianBump,
        AnomalyKind::SineBulge,
        AnomalyKind::CutoffCube,
        AnomalyKind::CutoffCylinder,
        AnomalyKind::PlanarShift,
        AnomalyKind::AngularShift,
    ];
    /// Deformations confined to a neighbourhood of their center.
    pub const LOCAL: [AnomalyKind; 4] = [
        AnomalyKind::GaussianBump,
        AnomalyKind::SineBulge,
        AnomalyKind::CutoffCube,
        AnomalyKind::CutoffCylinder,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AnomalyKind::GaussianBump => "gaussian_bump",
            AnomalyKind::SineBulge => "sine_bulge",
            AnomalyKind::CutoffCube => "cutoff_cube",
            AnomalyKind::CutoffCylinder => "cutoff_cylinder",
            AnomalyKind::PlanarShift => "planar_shift",
            AnomalyKind::AngularShift => "angular_shift",
        }
    }
}

impl std::str::FromStr for AnomalyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AnomalyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown anomaly kind {s}")))
    }
}

/// Concrete parameters of one deformation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Deformation {
    GaussianBump {
        center: [f64; 3],
        sigma: f64,
        amplitude: f64,
    },
    SineBulge {
        center: [f64; 3],
        sigma: f64,
        amplitude: f64,
        wavelength: f64,
    },
    CutoffCube {
        center: [f64; 3],
        half_edge: f64,
    },
    CutoffCylinder {
        center: [f64; 3],
        axis: [f64; 3],
        radius: f64,
        half_height: f64,
    },
    PlanarShift {
        point: [f64; 3],
        normal: [f64; 3],
        shift: [f64; 3],
    },
    AngularShift {
        axis: [f64; 3],
        start: f64,
        width: f64,
        angle: f64,
    },
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

impl Deformation {
    pub fn kind(&self) -> AnomalyKind {
        match self {
            Deformation::GaussianBump { .. } => AnomalyKind::GaussianBump,
            Deformation::SineBulge { .. } => AnomalyKind::SineBulge,
            Deformation::CutoffCube { .. } => AnomalyKind::CutoffCube,
            Deformation::CutoffCylinder { .. } => AnomalyKind::CutoffCylinder,
            Deformation::PlanarShift { .. } => AnomalyKind::PlanarShift,
            Deformation::AngularShift { .. } => AnomalyKind::AngularShift,
        }
    }

    pub fn apply(&self, cloud: &PointCloud) -> Result<Fragment> {
        match *self {
            Deformation::GaussianBump {
                center,
                sigma,
                amplitude,
            } => apply_gaussian_bump(cloud, &v3(center), sigma, amplitude),
            Deformation::SineBulge {
                center,
                sigma,
                amplitude,
                wavelength,
            } => apply_sine_bulge(cloud, &v3(center), sigma, amplitude, wavelength),
            Deformation::CutoffCube { center, half_edge } => {
                apply_cutoff_cube(cloud, &v3(center), half_edge)
            }
            Deformation::CutoffCylinder {
                center,
                axis,
                radius,
                half_height,
            } => apply_cutoff_cylinder(cloud, &v3(center), &v3(axis), radius, half_height),
            Deformation::PlanarShift {
                point,
                normal,
                shift,
            } => apply_rigid_shift(
                cloud,
                &Region::HalfSpace { point, normal },
                &Motion::Translate { shift },
            ),
            Deformation::AngularShift {
                axis,
                start,
                width,
                angle,
            } => apply_rigid_shift(
                cloud,
                &Region::Sector { axis, start, width },
                &Motion::Rotate { axis, angle },
            ),
        }
    }
}

/// One applied deformation and the seed its parameters were drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    #[serde(flatten)]
    pub deformation: Deformation,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Small,
    Large,
}

impl Preset {
    pub fn amplitude(&self) -> f64 {
        match self {
            Preset::Small => 0.01,
            Preset::Large => 0.1,
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(Preset::Small),
            "large" => Ok(Preset::Large),
            _ => Err(Error::InvalidConfig(format!("unknown preset {s}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub n_anomalies: usize,
    /// Magnitude of the displacement; the sign is drawn per anomaly.
    pub amplitude: f64,
    pub kinds: Vec<AnomalyKind>,
    /// Kernel width range in canonical units.
    pub sigma_range: (f64, f64),
    /// Fraction of points moved by rigid shifts.
    pub ratio_range: (f64, f64),
}

impl AugmentConfig {
    pub fn new(n_anomalies: usize, preset: Preset) -> Self {
        Self {
            n_anomalies,
            amplitude: preset.amplitude(),
            kinds: AnomalyKind::LOCAL.to_vec(),
            sigma_range: (0.035, 0.09),
            ratio_range: (0.1, 0.5),
        }
    }

    /// Local kinds plus planar and angular rigid shifts.
    pub fn industrial(n_anomalies: usize, preset: Preset) -> Self {
        Self {
            kinds: AnomalyKind::ALL.to_vec(),
            ..Self::new(n_anomalies, preset)
        }
    }

    pub fn only(mut self, kind: AnomalyKind) -> Self {
        self.kinds = vec![kind];
        self
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.sigma_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::InvalidConfig(format!("bad sigma range {lo}..{hi}")));
        }
        let (rlo, rhi) = self.ratio_range;
        if !(0.1..=0.5).contains(&rlo) || !(rlo..=0.5).contains(&rhi) {
            return Err(Error::InvalidConfig(format!("bad ratio range {rlo}..{rhi}")));
        }
        if self.n_anomalies > 0 && self.kinds.is_empty() {
            return Err(Error::InvalidConfig("no anomaly kinds enabled".into()));
        }
        Ok(())
    }
}

/// A normal cloud S, its deformed counterpart S̃ and the exact offsets
/// o = S − S̃.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub normal: PointCloud,
    pub abnormal: PointCloud,
    pub offsets: Vec<Vec3>,
    pub mask: Vec<bool>,
    pub specs: Vec<AugmentationSpec>,
}

#[derive(Serialize, Deserialize)]
struct LabelFile {
    offsets: Vec<[f64; 3]>,
    mask: Vec<bool>,
    specs: Vec<AugmentationSpec>,
}

impl AugmentedSample {
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn anomalous_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn anomalous_fraction(&self) -> f64 {
        self.anomalous_count() as f64 / self.len() as f64
    }

    /// Largest ‖S − (S̃ + o)‖ over all points.
    pub fn reconstruction_error(&self) -> f64 {
        self.normal
            .points()
            .iter()
            .zip(self.abnormal.points())
            .zip(&self.offsets)
            .map(|((s, a), o)| (s - (a + o)).norm())
            .fold(0.0, f64::max)
    }

    pub fn bundle_paths(dir: &Path, name: &str) -> [PathBuf; 3] {
        [
            dir.join(format!("{name}_normal.ply")),
            dir.join(format!("{name}_abnormal.ply")),
            dir.join(format!("{name}_labels.json")),
        ]
    }

    pub fn save(&self, dir: &Path, name: &str) -> Result<()> {
        let [normal, abnormal, labels] = Self::bundle_paths(dir, name);
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_ply(&normal, &self.normal, None, PlyEncoding::BinaryLittleEndian)?;
        write_ply(&abnormal, &self.abnormal, None, PlyEncoding::BinaryLittleEndian)?;
        let file = LabelFile {
            offsets: self.offsets.iter().map(arr).collect(),
            mask: self.mask.clone(),
            specs: self.specs.clone(),
        };
        let text = serde_json::to_string(&file)?;
        fs::write(&labels, text).map_err(|e| Error::io(&labels, e))
    }

    pub fn load(dir: &Path, name: &str) -> Result<Self> {
        let [normal, abnormal, labels] = Self::bundle_paths(dir, name);
        let opts = LoadOptions::default();
        let normal = load_pointcloud(&normal, Format::Ply, &opts)?;
        let abnormal = load_pointcloud(&abnormal, Format::Ply, &opts)?;
        let text = fs::read_to_string(&labels).map_err(|e| Error::io(&labels, e))?;
        let file: LabelFile = serde_json::from_str(&text)?;
        if file.offsets.len() != normal.len()
            || file.mask.len() != normal.len()
            || abnormal.len() != normal.len()
        {
            return Err(Error::CountMismatch(format!(
                "bundle {name}: {} normal, {} abnormal, {} offsets, {} mask",
                normal.len(),
                abnormal.len(),
                file.offsets.len(),
                file.mask.len()
            )));
        }
        Ok(Self {
            normal,
            abnormal,
            offsets: file.offsets.into_iter().map(v3).collect(),
            mask: file.mask,
            specs: file.specs,
        })
    }
}

/// Grid spacing such that every multiple below 2·`extent` in magnitude is
/// exactly representable in f32.
fn snap_grid(extent: f64) -> f64 {
    let e = (2.0 * extent.max(1e-3)).log2().ceil() as i32;
    2f64.powi(e - 23)
}

fn snap(p: &Vec3, grid: f64) -> Vec3 {
    p.map(|c| (c / grid).round() * grid)
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let r = v.norm();
        if r > 1e-3 && r <= 1.0 {
            return v / r;
        }
    }
}

fn random_sign(rng: &mut ChaCha8Rng) -> f64 {
    if rng.gen::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// Draw the parameters of one deformation of `kind` on `cloud`.
pub fn sample_deformation(
    cloud: &PointCloud,
    kind: AnomalyKind,
    config: &AugmentConfig,
    seed: u64,
) -> Result<Deformation> {
    let normals = cloud.normals().ok_or(Error::MissingNormals)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let i = rng.gen_range(0..cloud.len());
    let (p, n) = (cloud.points()[i], normals[i]);
    let (lo, hi) = config.sigma_range;
    let sigma = if hi > lo { rng.gen_range(lo..hi) } else { lo };
    let amplitude = config.amplitude * random_sign(&mut rng);
    let depth = config.amplitude;
    Ok(match kind {
        AnomalyKind::GaussianBump => Deformation::GaussianBump {
            center: arr(&p),
            sigma,
            amplitude,
        },
        AnomalyKind::SineBulge => Deformation::SineBulge {
            center: arr(&p),
            sigma,
            amplitude,
            wavelength: sigma * rng.gen_range(1.5..3.0),
        },
        AnomalyKind::CutoffCube => {
            let half_edge = sigma * rng.gen_range(1.5..3.0);
            Deformation::CutoffCube {
                center: arr(&(p + n * (half_edge - depth))),
                half_edge,
            }
        }
        AnomalyKind::CutoffCylinder => {
            let radius = sigma * rng.gen_range(1.5..3.0);
            Deformation::CutoffCylinder {
                center: arr(&(p + n * (radius - depth))),
                axis: arr(&n),
                radius,
                half_height: radius,
            }
        }
        AnomalyKind::PlanarShift => {
            let normal = random_unit(&mut rng);
            let ratio = rng.gen_range(config.ratio_range.0..=config.ratio_range.1);
            let mut proj: Vec<f64> = cloud.points().iter().map(|q| q.dot(&normal)).collect();
            proj.sort_by(f64::total_cmp);
            let cut = quantile_gap(&proj, ratio);
            let dir = random_unit(&mut rng);
            Deformation::PlanarShift {
                point: arr(&(normal * cut)),
                normal: arr(&normal),
                shift: arr(&(dir * config.amplitude)),
            }
        }
        AnomalyKind::AngularShift => {
            let axis = random_unit(&mut rng);
            let start = rng.gen::<f64>() * TAU;
            let ratio = rng.gen_range(config.ratio_range.0..=config.ratio_range.1);
            let mut rel: Vec<f64> = azimuths(cloud, &cloud.centroid(), &axis)
                .into_iter()
                .map(|a| (a - start).rem_euclid(TAU))
                .collect();
            rel.sort_by(f64::total_cmp);
            // width so that roughly `ratio` of the azimuths fall below it
            let k = ((ratio * rel.len() as f64).round() as usize).clamp(1, rel.len() - 1);
            let width = (rel[k - 1] + rel[k]) / 2.0;
            Deformation::AngularShift {
                axis: arr(&axis),
                start,
                width,
                angle: amplitude,
            }
        }
    })
}

/// Threshold t on sorted values such that about `ratio` of them exceed t.
fn quantile_gap(sorted: &[f64], ratio: f64) -> f64 {
    let n = sorted.len();
    let above = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    (sorted[n - above - 1] + sorted[n - above]) / 2.0
}

/// Compose `n_anomalies` random deformations on `cloud` (normals are
/// estimated when absent). The result satisfies S = S̃ + o exactly.
pub fn negative_augment(
    cloud: &PointCloud,
    config: &AugmentConfig,
    seed: u64,
) -> Result<AugmentedSample> {
    config.validate()?;
    let mut base = cloud.clone();
    if base.normals().is_none() {
        let est = estimate_normals(&base, NORMAL_K)?;
        base.set_normals(est.normals)?;
    }
    let extent = base
        .points()
        .iter()
        .flat_map(|p| p.iter().map(|c| c.abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max);
    let grid = snap_grid(extent);
    let snapped: Vec<Vec3> = base.points().iter().map(|p| snap(p, grid)).collect();
    let normal = base.with_points(snapped);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current = normal.clone();
    let mut specs = Vec::with_capacity(config.n_anomalies);
    for _ in 0..config.n_anomalies {
        let kind = *config.kinds.choose(&mut rng).expect("validated non-empty");
        let mut attempt = 0;
        loop {
            attempt += 1;
            let spec_seed = rng.gen::<u64>();
            let outcome = sample_deformation(&current, kind, config, spec_seed)
                .and_then(|d| d.apply(&current).map(|f| (d, f)));
            match outcome {
                Ok((deformation, fragment)) => {
                    current = fragment.abnormal;
                    specs.push(AugmentationSpec {
                        deformation,
                        seed: spec_seed,
                    });
                    break;
                }
                Err(e) if e.is_retryable() && attempt < MAX_ATTEMPTS => continue,
                Err(e) if e.is_retryable() => {
                    return Err(Error::AugmentationFailed {
                        attempts: attempt,
                        last: Box::new(e),
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }

    let mut moved = Vec::with_capacity(normal.len());
    let mut offsets = Vec::with_capacity(normal.len());
    let mut mask = Vec::with_capacity(normal.len());
    for (s, a) in normal.points().iter().zip(current.points()) {
        let a = snap(a, grid);
        let o = s - a;
        if o.norm() > DISPLACEMENT_CUTOFF {
            moved.push(a);
            offsets.push(o);
            mask.push(true);
        } else {
            moved.push(*s);
            offsets.push(Vec3::zeros());
            mask.push(false);
        }
    }
    let abnormal = PointCloud::new(moved)?;
    Ok(AugmentedSample {
        normal,
        abnormal,
        offsets,
        mask,
        specs,
    })
}
