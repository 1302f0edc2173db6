//! Builds a patch codebook from normal spheres, round-trips it through the
//! binary format and queries it with a feature of a fresh sphere.

use patchbook::augment::{gen_shape, ShapeKind};
use patchbook::codebook::Codebook;
use patchbook::model::{Model, ModelConfig};

fn main() -> patchbook::Result<()> {
    let model = Model::new(ModelConfig::default(), 0)?;
    let normals: Vec<_> = (0..8)
        .map(|s| gen_shape(ShapeKind::Sphere, 2048, s))
        .collect::<patchbook::Result<_>>()?;
    let book = model.build_codebook(&normals)?;
    for l in 1..=3 {
        let weight: f64 = book.level(l).iter().map(|e| e.weight).sum();
        println!("level {l}: {} entries, merge weight {weight:.1}", book.len(l));
    }

    let bytes = book.to_bytes()?;
    let back = Codebook::from_bytes(&bytes)?;
    assert_eq!(back, book);
    println!("{} bytes on disk", bytes.len());

    // the most common template should answer for itself
    let probe = gen_shape(ShapeKind::Sphere, 2048, 99)?;
    let other = model.build_codebook(&[probe])?;
    let query: Vec<f64> = other.level(2)[0].feature.iter().map(|&x| x as f64).collect();
    let (index, cosine) = book.retrieve(2, &query)?;
    println!("fresh sphere patch -> entry {index} at cosine {cosine:.4}");
    Ok(())
}
