//! Multi-scale sphere patches of a torus, and the single-level strategies.

use patchbook::augment::{gen_shape, ShapeKind};
use patchbook::patchify::{patchify, PatchConfig, Strategy};

fn main() -> patchbook::Result<()> {
    let cloud = gen_shape(ShapeKind::Torus, 2048, 3)?;
    let config = PatchConfig::default_multiscale(0);
    for set in patchify(&cloud, &config)? {
        let sizes: Vec<usize> = set.patches.iter().map(|p| p.members.len()).collect();
        println!(
            "level {}: {} patches, {}..{} members, mean radius {:.3}",
            set.level,
            set.len(),
            sizes.iter().min().unwrap(),
            sizes.iter().max().unwrap(),
            set.mean_radius(&cloud)
        );
    }
    for strategy in [Strategy::FpsSpheres, Strategy::FpsVoxels, Strategy::Grid3d] {
        let single = PatchConfig::single(strategy, 64, 32, 0);
        let set = &patchify(&cloud, &single)?[0];
        println!("{:<13} {} patches", strategy.name(), set.len());
    }
    Ok(())
}
