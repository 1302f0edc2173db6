//! Single deformation fragments. Each returns the displaced cloud together
//! with the per-point offset back to the input and the anomaly mask.

use std::f64::consts::TAU;

use nalgebra::{Rotation3, Unit};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Vec3};

/// Displacements at or below this norm are snapped to exactly zero.
pub const DISPLACEMENT_CUTOFF: f64 = 1e-9;

/// Result of one deformation applied to a cloud.
#[derive(Debug, Clone)]
pub struct Fragment {
    pub abnormal: PointCloud,
    /// input − abnormal
    pub offsets: Vec<Vec3>,
    pub mask: Vec<bool>,
}

impl Fragment {
    fn from_displacements(cloud: &PointCloud, mut disp: Vec<Vec3>) -> Self {
        for d in &mut disp {
            if d.norm() <= DISPLACEMENT_CUTOFF {
                *d = Vec3::zeros();
            }
        }
        let moved: Vec<Vec3> = cloud.points().iter().zip(&disp).map(|(p, d)| p + d).collect();
        let offsets: Vec<Vec3> = cloud.points().iter().zip(&moved).map(|(p, m)| p - m).collect();
        let mask = offsets.iter().map(|o| o.norm() > DISPLACEMENT_CUTOFF).collect();
        Fragment {
            abnormal: cloud.with_points(moved),
            offsets,
            mask,
        }
    }

    pub fn anomalous_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffShape {
    Cube,
    Cylinder,
}

/// Region moved by a rigid shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Region {
    /// Points with (x − point)·normal > 0.
    HalfSpace { point: [f64; 3], normal: [f64; 3] },
    /// Points whose azimuth about `axis` (through the cloud centroid),
    /// measured from an arbitrary fixed reference, lies in
    /// [start, start + width).
    Sector {
        axis: [f64; 3],
        start: f64,
        width: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Motion {
    Translate { shift: [f64; 3] },
    /// Rotation about `axis` through the cloud centroid.
    Rotate { axis: [f64; 3], angle: f64 },
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn require_normals(cloud: &PointCloud) -> Result<&[Vec3]> {
    cloud.normals().ok_or(Error::MissingNormals)
}

/// Gaussian displacement along the normals: amplitude · exp(−r²/2σ²) · n.
/// Positive amplitude bulges outward, negative sinks.
pub fn apply_gaussian_bump(
    cloud: &PointCloud,
    center: &Vec3,
    sigma: f64,
    amplitude: f64,
) -> Result<Fragment> {
    let normals = require_normals(cloud)?;
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(Error::InvalidConfig(format!("sigma must be positive, got {sigma}")));
    }
    let disp = cloud
        .points()
        .iter()
        .zip(normals)
        .map(|(p, n)| {
            let r2 = (p - center).norm_squared();
            n * (amplitude * (-r2 / (2.0 * sigma * sigma)).exp())
        })
        .collect();
    Ok(Fragment::from_displacements(cloud, disp))
}

/// Gaussian envelope modulated by sin(2πr/λ), giving rings of alternating
/// sign around the center.
pub fn apply_sine_bulge(
    cloud: &PointCloud,
    center: &Vec3,
    sigma: f64,
    amplitude: f64,
    wavelength: f64,
) -> Result<Fragment> {
    let normals = require_normals(cloud)?;
    if wavelength <= 0.0 || !wavelength.is_finite() {
        return Err(Error::BadWavelength(wavelength));
    }
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(Error::InvalidConfig(format!("sigma must be positive, got {sigma}")));
    }
    let disp = cloud
        .points()
        .iter()
        .zip(normals)
        .map(|(p, n)| {
            let r = (p - center).norm();
            let envelope = (-r * r / (2.0 * sigma * sigma)).exp();
            n * (amplitude * envelope * (TAU * r / wavelength).sin())
        })
        .collect();
    Ok(Fragment::from_displacements(cloud, disp))
}

/// Axis-aligned cube of half-edge `half_edge`: interior points are pushed to
/// the nearest face.
pub fn apply_cutoff_cube(cloud: &PointCloud, center: &Vec3, half_edge: f64) -> Result<Fragment> {
    if half_edge <= 0.0 {
        return Err(Error::InvalidConfig("cube half-edge must be positive".into()));
    }
    let mut hit = false;
    let disp = cloud
        .points()
        .iter()
        .map(|p| {
            let d = p - center;
            let (axis, linf) = (0..3)
                .map(|a| (a, d[a].abs()))
                .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
            if linf >= half_edge {
                return Vec3::zeros();
            }
            hit = true;
            let sign = if d[axis] >= 0.0 { 1.0 } else { -1.0 };
            let mut target = *p;
            target[axis] = center[axis] + sign * half_edge;
            target - p
        })
        .collect();
    if !hit {
        return Err(Error::EmptyIntersection);
    }
    Ok(Fragment::from_displacements(cloud, disp))
}

/// Finite cylinder: interior points are pushed to the nearest of the
/// lateral surface and the two caps.
pub fn apply_cutoff_cylinder(
    cloud: &PointCloud,
    center: &Vec3,
    axis: &Vec3,
    radius: f64,
    half_height: f64,
) -> Result<Fragment> {
    if radius <= 0.0 || half_height <= 0.0 || axis.norm() == 0.0 {
        return Err(Error::InvalidConfig("bad cylinder parameters".into()));
    }
    let axis = axis.normalize();
    // any unit vector orthogonal to the axis, for points exactly on it
    let helper = if axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let ortho = axis.cross(&helper).normalize();
    let mut hit = false;
    let disp = cloud
        .points()
        .iter()
        .map(|p| {
            let d = p - center;
            let along = d.dot(&axis);
            let radial = d - axis * along;
            let rho = radial.norm();
            if rho >= radius || along.abs() >= half_height {
                return Vec3::zeros();
            }
            hit = true;
            let to_side = radius - rho;
            let to_cap = half_height - along.abs();
            if to_side <= to_cap {
                let dir = if rho > 0.0 { radial / rho } else { ortho };
                dir * to_side
            } else {
                let sign = if along >= 0.0 { 1.0 } else { -1.0 };
                axis * (sign * to_cap)
            }
        })
        .collect();
    if !hit {
        return Err(Error::EmptyIntersection);
    }
    Ok(Fragment::from_displacements(cloud, disp))
}

pub fn apply_cutoff(
    cloud: &PointCloud,
    shape: CutoffShape,
    center: &Vec3,
    size: f64,
) -> Result<Fragment> {
    match shape {
        CutoffShape::Cube => apply_cutoff_cube(cloud, center, size),
        CutoffShape::Cylinder => apply_cutoff_cylinder(cloud, center, &Vec3::z(), size, size),
    }
}

fn sector_frame(axis: &Vec3) -> (Vec3, Vec3, Vec3) {
    let a = axis.normalize();
    let helper = if a.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let u = a.cross(&helper).normalize();
    let w = a.cross(&u);
    (a, u, w)
}

/// Azimuth of every point about `axis` through `origin`, in [0, 2π).
pub fn azimuths(cloud: &PointCloud, origin: &Vec3, axis: &Vec3) -> Vec<f64> {
    let (_, u, w) = sector_frame(axis);
    cloud
        .points()
        .iter()
        .map(|p| {
            let d = p - origin;
            d.dot(&w).atan2(d.dot(&u)).rem_euclid(TAU)
        })
        .collect()
}

pub fn region_members(cloud: &PointCloud, region: &Region) -> Vec<bool> {
    match region {
        Region::HalfSpace { point, normal } => {
            let (p0, n) = (v3(*point), v3(*normal));
            cloud.points().iter().map(|p| (p - p0).dot(&n) > 0.0).collect()
        }
        Region::Sector { axis, start, width } => {
            let az = azimuths(cloud, &cloud.centroid(), &v3(*axis));
            az.iter()
                .map(|&a| (a - start).rem_euclid(TAU) < *width)
                .collect()
        }
    }
}

/// Rigid motion of a region holding between 10% and 50% of the points.
pub fn apply_rigid_shift(cloud: &PointCloud, region: &Region, motion: &Motion) -> Result<Fragment> {
    let inside = region_members(cloud, region);
    let count = inside.iter().filter(|&&m| m).count();
    let ratio = count as f64 / cloud.len() as f64;
    if !(0.1..=0.5).contains(&ratio) {
        return Err(Error::RatioOutOfRange { ratio });
    }
    let centroid = cloud.centroid();
    let transform: Box<dyn Fn(&Vec3) -> Vec3> = match *motion {
        Motion::Translate { shift } => {
            let s = v3(shift);
            Box::new(move |p| p + s)
        }
        Motion::Rotate { axis, angle } => {
            let rot = Rotation3::from_axis_angle(&Unit::new_normalize(v3(axis)), angle);
            Box::new(move |p| rot * (p - centroid) + centroid)
        }
    };
    let disp = cloud
        .points()
        .iter()
        .zip(&inside)
        .map(|(p, &m)| if m { transform(p) - p } else { Vec3::zeros() })
        .collect();
    Ok(Fragment::from_displacements(cloud, disp))
}
