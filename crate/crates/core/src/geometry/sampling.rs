use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{PointCloud, Vec3};
use crate::error::{Error, Result};

/// Greedy farthest point sampling.
///
/// The first index is drawn uniformly from `seed`; every following pick
/// maximizes the squared distance to the already selected set, lowest index
/// winning ties.
pub fn farthest_point_sampling(cloud: &PointCloud, k: usize, seed: u64) -> Result<Vec<usize>> {
    let points = cloud.points();
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::BadK { k, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.gen_range(0..n);
    let mut selected = Vec::with_capacity(k);
    selected.push(first);
    let mut min_dist = vec![f64::INFINITY; n];
    let mut last = first;
    for _ in 1..k {
        let anchor = points[last];
        let mut best = usize::MAX;
        let mut best_dist = f64::NEG_INFINITY;
        for (i, (p, d)) in points.iter().zip(min_dist.iter_mut()).enumerate() {
            let dd = (p - anchor).norm_squared();
            if dd < *d {
                *d = dd;
            }
            if *d > best_dist {
                best_dist = *d;
                best = i;
            }
        }
        selected.push(best);
        last = best;
    }
    Ok(selected)
}

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
}

/// Exhaustive k nearest neighbours of `query`, ascending by distance with
/// ties broken by lower index.
pub fn knn(cloud: &PointCloud, query: &Vec3, k: usize) -> Result<Vec<usize>> {
    let n = cloud.len();
    if k == 0 || k > n {
        return Err(Error::BadK { k, n });
    }
    let mut all: Vec<(f64, usize)> = cloud
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| ((p - query).norm_squared(), i))
        .collect();
    if k < n {
        all.select_nth_unstable_by(k - 1, by_distance_then_index);
        all.truncate(k);
    }
    all.sort_unstable_by(by_distance_then_index);
    Ok(all.into_iter().map(|(_, i)| i).collect())
}

/// Uniform-grid index answering exact kNN queries with the same ordering
/// contract as [`knn`].
#[derive(Debug, Clone)]
pub struct KnnIndex {
    points: Vec<Vec3>,
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    cell_start: Vec<u32>,
    cell_items: Vec<u32>,
}

impl KnnIndex {
    pub fn new(cloud: &PointCloud) -> Self {
        Self::from_points(cloud.points())
    }

    pub fn from_points(points: &[Vec3]) -> Self {
        let n = points.len().max(1);
        let mut lo = points.first().copied().unwrap_or_else(Vec3::zeros);
        let mut hi = lo;
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let extent = (hi - lo).map(|e| e.max(1e-9));
        // about two points per occupied cell on surface-like data
        let volume = extent.x * extent.y * extent.z;
        let target_cells = (n as f64 / 2.0).max(1.0);
        let mut cell = (volume / target_cells).cbrt();
        let max_extent = extent.max();
        cell = cell.max(max_extent / 128.0).max(1e-9);
        let dims = [
            ((extent.x / cell).floor() as usize + 1).min(256),
            ((extent.y / cell).floor() as usize + 1).min(256),
            ((extent.z / cell).floor() as usize + 1).min(256),
        ];
        let total = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0u32; total + 1];
        let cell_of: Vec<usize> = points
            .iter()
            .map(|p| {
                let c = Self::coords(&lo, cell, &dims, p);
                (c[2] * dims[1] + c[1]) * dims[0] + c[0]
            })
            .collect();
        for &c in &cell_of {
            counts[c + 1] += 1;
        }
        for i in 0..total {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut items = vec![0u32; points.len()];
        for (i, &c) in cell_of.iter().enumerate() {
            items[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        Self {
            points: points.to_vec(),
            origin: lo,
            cell,
            dims,
            cell_start: counts,
            cell_items: items,
        }
    }

    fn coords(origin: &Vec3, cell: f64, dims: &[usize; 3], p: &Vec3) -> [usize; 3] {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let c = ((p[a] - origin[a]) / cell).floor();
            out[a] = if c <= 0.0 {
                0
            } else {
                (c as usize).min(dims[a] - 1)
            };
        }
        out
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

    /// Exact kNN; see [`knn`] for the ordering contract.
    pub fn query(&self, query: &Vec3, k: usize) -> Result<Vec<usize>> {
        Ok(self
            .query_with_distances(query, k)?
            .into_iter()
            .map(|(_, i)| i)
            .collect())
    }

    /// Like [`KnnIndex::query`] but also returns squared distances.
    pub fn query_with_distances(&self, query: &Vec3, k: usize) -> Result<Vec<(f64, usize)>> {
        let n = self.points.len();
        if k == 0 || k > n {
            return Err(Error::BadK { k, n });
        }
        let center = Self::coords(&self.origin, self.cell, &self.dims, query);
        let mut found: Vec<(f64, usize)> = Vec::with_capacity(4 * k);
        let max_ring = self.dims.iter().copied().max().unwrap_or(1);
        for ring in 0..=max_ring {
            self.visit_ring(center, ring, |i| {
                let d = (self.points[i] - query).norm_squared();
                found.push((d, i));
            });
            if found.len() >= k {
                // every unvisited point is at least `ring` full cells away
                // from the query's cell, hence at least ring * cell away
                let bound = ring as f64 * self.cell;
                found.select_nth_unstable_by(k - 1, by_distance_then_index);
                let kth = found[k - 1].0;
                if kth < bound * bound || ring == max_ring {
                    found.truncate(k);
                    found.sort_unstable_by(by_distance_then_index);
                    return Ok(found);
                }
            }
        }
        found.sort_unstable_by(by_distance_then_index);
        found.truncate(k);
        Ok(found)
    }

    fn visit_ring(&self, center: [usize; 3], ring: usize, mut f: impl FnMut(usize)) {
        let r = ring as isize;
        let c = [center[0] as isize, center[1] as isize, center[2] as isize];
        let d = [
            self.dims[0] as isize,
            self.dims[1] as isize,
            self.dims[2] as isize,
        ];
        for z in (c[2] - r).max(0)..=(c[2] + r).min(d[2] - 1) {
            let on_z = (z - c[2]).abs() == r;
            for y in (c[1] - r).max(0)..=(c[1] + r).min(d[1] - 1) {
                let on_y = (y - c[1]).abs() == r;
                if on_z || on_y {
                    for x in (c[0] - r).max(0)..=(c[0] + r).min(d[0] - 1) {
                        self.visit_cell(x, y, z, &mut f);
                    }
                } else {
                    for x in [c[0] - r, c[0] + r] {
                        if x >= 0 && x < d[0] {
                            self.visit_cell(x, y, z, &mut f);
                        }
                    }
                }
            }
        }
    }

    fn visit_cell(&self, x: isize, y: isize, z: isize, f: &mut impl FnMut(usize)) {
        let id = ((z as usize) * self.dims[1] + y as usize) * self.dims[0] + x as usize;
        let (s, e) = (self.cell_start[id] as usize, self.cell_start[id + 1] as usize);
        for &i in &self.cell_items[s..e] {
            f(i as usize);
        }
    }
}
