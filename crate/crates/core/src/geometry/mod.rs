//! Point-cloud containers and the geometric kernels every other module
//! builds on: canonical normalization, FPS, kNN, normal estimation and
//! spatial hashing.

mod hash;
pub mod io;
mod normals;
mod sampling;

pub use hash::{spatial_hash, SpatialKey};
pub use normals::{estimate_normals, local_geometry, LocalGeometry, NormalEstimate};
pub use sampling::{farthest_point_sampling, knn, KnnIndex};

use crate::error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;

/// Unit-length tolerance for stored normals.
pub const NORMAL_TOLERANCE: f64 = 1e-6;

/// N points with optional per-point unit normals.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
    normals: Option<Vec<Vec3>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite("point coordinates".into()));
        }
        Ok(Self {
            points,
            normals: None,
        })
    }

    pub fn with_normals(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        let mut cloud = Self::new(points)?;
        cloud.set_normals(normals)?;
        Ok(cloud)
    }

    pub fn set_normals(&mut self, normals: Vec<Vec3>) -> Result<()> {
        if normals.len() != self.points.len() {
            return Err(Error::CountMismatch(format!(
                "{} normals for {} points",
                normals.len(),
                self.points.len()
            )));
        }
        if let Some(bad) = normals
            .iter()
            .find(|n| (n.norm() - 1.0).abs() > NORMAL_TOLERANCE)
        {
            return Err(Error::InvalidConfig(format!(
                "normal {bad:?} is not unit length"
            )));
        }
        self.normals = Some(normals);
        Ok(())
    }

    pub fn clear_normals(&mut self) {
        self.normals = None;
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn centroid(&self) -> Vec3 {
        centroid(&self.points)
    }

    /// Axis-aligned bounding box as (min, max).
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = self.points[0];
        let mut hi = self.points[0];
        for p in &self.points[1..] {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    /// Same normals, every point moved by `offset`.
    pub fn translated(&self, offset: &Vec3) -> Self {
        Self {
            points: self.points.iter().map(|p| p + offset).collect(),
            normals: self.normals.clone(),
        }
    }

    /// Replace coordinates while keeping normals; lengths must agree.
    pub(crate) fn with_points(&self, points: Vec<Vec3>) -> Self {
        debug_assert_eq!(points.len(), self.points.len());
        Self {
            points,
            normals: self.normals.clone(),
        }
    }

    pub fn into_parts(self) -> (Vec<Vec3>, Option<Vec<Vec3>>) {
        (self.points, self.normals)
    }
}

pub fn centroid(points: &[Vec3]) -> Vec3 {
    let sum = points.iter().fold(Vec3::zeros(), |acc, p| acc + p);
    sum / points.len() as f64
}

/// Translation followed by uniform scaling into the unit ball.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanonicalTransform {
    pub translation: Vec3,
    pub scale: f64,
}

impl CanonicalTransform {
    pub fn identity() -> Self {
        Self {
            translation: Vec3::zeros(),
            scale: 1.0,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        (p - self.translation) / self.scale
    }

    pub fn invert(&self, p: &Vec3) -> Vec3 {
        p * self.scale + self.translation
    }

    pub fn apply_cloud(&self, cloud: &PointCloud) -> PointCloud {
        cloud.with_points(cloud.points.iter().map(|p| self.apply(p)).collect())
    }

    pub fn invert_cloud(&self, cloud: &PointCloud) -> PointCloud {
        cloud.with_points(cloud.points.iter().map(|p| self.invert(p)).collect())
    }
}

/// Center on the centroid and scale so the farthest point sits on the unit
/// sphere. Normals are unaffected by translation and uniform scaling.
pub fn normalize_to_canonical(cloud: &PointCloud) -> Result<(PointCloud, CanonicalTransform)> {
    let translation = cloud.centroid();
    let scale = cloud
        .points
        .iter()
        .map(|p| (p - translation).norm())
        .fold(0.0_f64, f64::max);
    if scale <= f64::EPSILON * translation.norm().max(1.0) {
        return Err(Error::DegenerateCloud);
    }
    let transform = CanonicalTransform { translation, scale };
    Ok((transform.apply_cloud(cloud), transform))
}

/// Keep the first point of every occupied voxel of a `resolution`³ grid over
/// the canonical cube [-1, 1]³. Returns the kept indices in ascending order.
pub fn voxel_dedup(cloud: &PointCloud, resolution: usize) -> Vec<usize> {
    let res = resolution.max(1) as f64;
    let cell = 2.0 / res;
    let mut seen = std::collections::HashSet::new();
    let mut kept = Vec::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let q = p.map(|c| (((c + 1.0) / cell).floor()).clamp(0.0, res - 1.0) as i64);
        if seen.insert((q.x, q.y, q.z)) {
            kept.push(i);
        }
    }
    kept
}

/// Sub-cloud at the given indices (normals carried along).
pub fn select(cloud: &PointCloud, indices: &[usize]) -> PointCloud {
    PointCloud {
        points: indices.iter().map(|&i| cloud.points[i]).collect(),
        normals: cloud
            .normals
            .as_ref()
            .map(|n| indices.iter().map(|&i| n[i]).collect()),
    }
}
