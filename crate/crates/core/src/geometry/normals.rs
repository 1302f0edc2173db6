use nalgebra::{Matrix3, SymmetricEigen};

use super::{KnnIndex, PointCloud, Vec3};
use crate::error::{Error, Result};

/// Per-point neighbourhood statistics from one kNN pass.
#[derive(Debug, Clone)]
pub struct LocalGeometry {
    /// Point minus the centroid of its k nearest neighbours (itself included).
    pub relative: Vec<Vec3>,
    /// Covariance eigenvalues, ascending.
    pub eigenvalues: Vec<Vec3>,
    /// Unit normals, oriented away from the cloud centroid.
    pub normals: Vec<Vec3>,
    /// Points whose neighbourhood covariance had rank < 2.
    pub degenerate: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct NormalEstimate {
    pub normals: Vec<Vec3>,
    /// Indices that fell back to the radial direction.
    pub degenerate: Vec<usize>,
}

/// PCA normals: the eigenvector of the smallest covariance eigenvalue of
/// each k-neighbourhood, flipped to point away from the cloud centroid.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<NormalEstimate> {
    let geo = local_geometry(cloud, k)?;
    Ok(NormalEstimate {
        normals: geo.normals,
        degenerate: geo.degenerate,
    })
}

pub fn local_geometry(cloud: &PointCloud, k: usize) -> Result<LocalGeometry> {
    let n = cloud.len();
    if k < 3 || n <= k {
        return Err(Error::TooFewPoints {
            needed: k.max(3) + 1,
            got: n,
        });
    }
    let index = KnnIndex::new(cloud);
    local_geometry_with_index(cloud, &index, k)
}

pub(crate) fn local_geometry_with_index(
    cloud: &PointCloud,
    index: &KnnIndex,
    k: usize,
) -> Result<LocalGeometry> {
    let points = cloud.points();
    let center = cloud.centroid();
    let n = points.len();
    let mut relative = Vec::with_capacity(n);
    let mut eigenvalues = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    let mut degenerate = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let nbrs = index.query(p, k)?;
        let mean = nbrs.iter().fold(Vec3::zeros(), |acc, &j| acc + points[j]) / k as f64;
        let mut cov = Matrix3::zeros();
        for &j in &nbrs {
            let d = points[j] - mean;
            cov += d * d.transpose();
        }
        cov /= k as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let vals = Vec3::new(
            eig.eigenvalues[order[0]].max(0.0),
            eig.eigenvalues[order[1]].max(0.0),
            eig.eigenvalues[order[2]].max(0.0),
        );
        let radial = p - center;
        let rank_deficient = vals.z <= 0.0 || vals.y <= 1e-10 * vals.z;
        let mut normal = if rank_deficient {
            degenerate.push(i);
            if radial.norm() > 0.0 {
                radial.normalize()
            } else {
                Vec3::z()
            }
        } else {
            let v: Vec3 = eig.eigenvectors.column(order[0]).into_owned();
            v.normalize()
        };
        if normal.dot(&radial) < 0.0 {
            normal = -normal;
        }
        relative.push(p - mean);
        eigenvalues.push(vals);
        normals.push(normal);
    }
    Ok(LocalGeometry {
        relative,
        eigenvalues,
        normals,
        degenerate,
    })
}
