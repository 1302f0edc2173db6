use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Vec3};

pub const TORUS_MAJOR: f64 = 1.0;
pub const TORUS_MINOR: f64 = 0.3;
pub const GEAR_TEETH: usize = 12;
pub const GEAR_ROOT: f64 = 0.8;
pub const GEAR_TIP: f64 = 1.0;
pub const GEAR_HALF_THICKNESS: f64 = 0.25;
const BOX_HALF: [f64; 3] = [1.0, 0.7, 0.5];
const CYLINDER_RADIUS: f64 = 0.6;
const CYLINDER_HALF_HEIGHT: f64 = 0.8;

/// Procedural normal-shape classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Sphere,
    Box,
    Cylinder,
    Torus,
    Gear,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 5] = [
        ShapeKind::Sphere,
        ShapeKind::Box,
        ShapeKind::Cylinder,
        ShapeKind::Torus,
        ShapeKind::Gear,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Box => "box",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Torus => "torus",
            ShapeKind::Gear => "gear",
        }
    }
}

impl std::str::FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown shape {s}")))
    }
}

impl std::fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// `n` area-uniform surface samples with analytic unit normals.
pub fn gen_shape(kind: ShapeKind, n: usize, seed: u64) -> Result<PointCloud> {
    if n < 100 {
        return Err(Error::BadCount(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<(Vec3, Vec3)> = (0..n)
        .map(|_| match kind {
            ShapeKind::Sphere => sphere_sample(&mut rng),
            ShapeKind::Box => box_sample(&mut rng),
            ShapeKind::Cylinder => cylinder_sample(&mut rng),
            ShapeKind::Torus => torus_sample(&mut rng),
            ShapeKind::Gear => gear_sample(&mut rng),
        })
        .collect();
    let (points, normals) = samples.into_iter().unzip();
    PointCloud::with_normals(points, normals)
}

fn sphere_sample(rng: &mut ChaCha8Rng) -> (Vec3, Vec3) {
    let z: f64 = rng.gen_range(-1.0..1.0);
    let phi = rng.gen::<f64>() * TAU;
    let s = (1.0 - z * z).sqrt();
    let p = Vec3::new(s * phi.cos(), s * phi.sin(), z).normalize();
    (p, p)
}

fn box_sample(rng: &mut ChaCha8Rng) -> (Vec3, Vec3) {
    let [a, b, c] = BOX_HALF;
    // face pairs normal to x, y, z
    let areas = [b * c, a * c, a * b];
    let total: f64 = areas.iter().sum();
    let mut t = rng.gen::<f64>() * total;
    let mut axis = 2;
    for (i, area) in areas.iter().enumerate() {
        if t < *area {
            axis = i;
            break;
        }
        t -= area;
    }
    let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
    let mut p = Vec3::new(
        rng.gen_range(-a..a),
        rng.gen_range(-b..b),
        rng.gen_range(-c..c),
    );
    p[axis] = sign * BOX_HALF[axis];
    let mut n = Vec3::zeros();
    n[axis] = sign;
    (p, n)
}

fn cylinder_sample(rng: &mut ChaCha8Rng) -> (Vec3, Vec3) {
    let (r, h) = (CYLINDER_RADIUS, CYLINDER_HALF_HEIGHT);
    let side = TAU * r * 2.0 * h;
    let caps = 2.0 * PI * r * r;
    let phi = rng.gen::<f64>() * TAU;
    if rng.gen::<f64>() * (side + caps) < side {
        let dir = Vec3::new(phi.cos(), phi.sin(), 0.0);
        (dir * r + Vec3::z() * rng.gen_range(-h..h), dir)
    } else {
        let rho = r * rng.gen::<f64>().sqrt();
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        (
            Vec3::new(rho * phi.cos(), rho * phi.sin(), sign * h),
            Vec3::z() * sign,
        )
    }
}

fn torus_sample(rng: &mut ChaCha8Rng) -> (Vec3, Vec3) {
    let (big, small) = (TORUS_MAJOR, TORUS_MINOR);
    let theta = loop {
        let t = rng.gen::<f64>() * TAU;
        if rng.gen::<f64>() * (big + small) <= big + small * t.cos() {
            break t;
        }
    };
    let phi = rng.gen::<f64>() * TAU;
    let ring = big + small * theta.cos();
    let p = Vec3::new(ring * phi.cos(), ring * phi.sin(), small * theta.sin());
    let n = Vec3::new(theta.cos() * phi.cos(), theta.cos() * phi.sin(), theta.sin());
    (p, n)
}

/// Radius of the gear outline at azimuth `phi`: root circle on the first
/// half of each tooth period, tip circle on the second.
pub fn gear_profile_radius(phi: f64) -> f64 {
    let period = TAU / GEAR_TEETH as f64;
    let phase = phi.rem_euclid(period);
    if phase < period / 2.0 {
        GEAR_ROOT
    } else {
        GEAR_TIP
    }
}

fn gear_sample(rng: &mut ChaCha8Rng) -> (Vec3, Vec3) {
    let teeth = GEAR_TEETH as f64;
    let period = TAU / teeth;
    let h = GEAR_HALF_THICKNESS;
    let root_arc = GEAR_ROOT * period / 2.0;
    let tip_arc = GEAR_TIP * period / 2.0;
    let flank = GEAR_TIP - GEAR_ROOT;
    let perimeter = teeth * (root_arc + tip_arc + 2.0 * flank);
    let side_area = perimeter * 2.0 * h;
    let cap_area = 2.0 * PI * (GEAR_ROOT * GEAR_ROOT + GEAR_TIP * GEAR_TIP) / 2.0;
    if rng.gen::<f64>() * (side_area + cap_area) < side_area {
        let z = rng.gen_range(-h..h);
        let tooth = rng.gen_range(0..GEAR_TEETH) as f64;
        let base = tooth * period;
        let mut t = rng.gen::<f64>() * (root_arc + tip_arc + 2.0 * flank);
        if t < root_arc {
            let phi = base + t / GEAR_ROOT;
            let dir = Vec3::new(phi.cos(), phi.sin(), 0.0);
            return (dir * GEAR_ROOT + Vec3::z() * z, dir);
        }
        t -= root_arc;
        if t < flank {
            // rising flank, faces towards decreasing azimuth
            let phi = base + period / 2.0;
            let dir = Vec3::new(phi.cos(), phi.sin(), 0.0);
            let normal = Vec3::new(phi.sin(), -phi.cos(), 0.0);
            return (dir * (GEAR_ROOT + t) + Vec3::z() * z, normal);
        }
        t -= flank;
        if t < tip_arc {
            let phi = base + period / 2.0 + t / GEAR_TIP;
            let dir = Vec3::new(phi.cos(), phi.sin(), 0.0);
            return (dir * GEAR_TIP + Vec3::z() * z, dir);
        }
        t -= tip_arc;
        let phi = base + period;
        let dir = Vec3::new(phi.cos(), phi.sin(), 0.0);
        let normal = Vec3::new(-phi.sin(), phi.cos(), 0.0);
        (dir * (GEAR_TIP - t.min(flank)) + Vec3::z() * z, normal)
    } else {
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        loop {
            let rho = GEAR_TIP * rng.gen::<f64>().sqrt();
            let phi = rng.gen::<f64>() * TAU;
            if rho <= gear_profile_radius(phi) {
                return (
                    Vec3::new(rho * phi.cos(), rho * phi.sin(), sign * h),
                    Vec3::z() * sign,
                );
            }
        }
    }
}
