//! Generates every procedural shape class and writes it as binary PLY.
//!
//! cargo run --release --example shapes -- /tmp/shapes

use std::path::PathBuf;

use patchbook::augment::{gen_shape, ShapeKind};
use patchbook::geometry::io::{write_ply, PlyEncoding};

fn main() -> patchbook::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "shapes".into()));
    std::fs::create_dir_all(&out).map_err(|e| patchbook::Error::io(&out, e))?;
    for kind in ShapeKind::ALL {
        let cloud = gen_shape(kind, 2048, 7)?;
        let (lo, hi) = cloud.bounds();
        let path = out.join(format!("{}.ply", kind.name()));
        write_ply(&path, &cloud, None, PlyEncoding::BinaryLittleEndian)?;
        println!(
            "{:<9} {} points, extent {:.3} x {:.3} x {:.3} -> {}",
            kind.name(),
            cloud.len(),
            hi.x - lo.x,
            hi.y - lo.y,
            hi.z - lo.z,
            path.display()
        );
    }
    Ok(())
}
