//! Canonical normalization, farthest point sampling, kNN and normals.

use patchbook::augment::{gen_shape, ShapeKind};
use patchbook::geometry::{
    estimate_normals, farthest_point_sampling, normalize_to_canonical, KnnIndex, Vec3,
};

fn main() -> patchbook::Result<()> {
    let shape = gen_shape(ShapeKind::Cylinder, 4096, 9)?;
    let moved = shape.translated(&Vec3::new(5.0, -3.0, 2.0));
    let (canonical, t) = normalize_to_canonical(&moved)?;
    println!("translation {:?}, scale {:.4}", t.translation.as_slice(), t.scale);

    let picks = farthest_point_sampling(&canonical, 16, 0)?;
    println!("fps picks {picks:?}");

    let index = KnnIndex::new(&canonical);
    let near = index.query_with_distances(&canonical.points()[picks[0]], 4)?;
    println!("4 nearest to the first pick: {near:?}");

    let normals = estimate_normals(&canonical, 16)?;
    let n = normals.normals[picks[0]];
    println!("normal at the first pick: ({:.3}, {:.3}, {:.3})", n.x, n.y, n.z);
    Ok(())
}
