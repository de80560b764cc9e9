//! Map pruning around conditional anchors: half disc on the anchor-heavy
//! side, half ellipse on the other, union over both targets.

use biff::anchors::AnchorModel;
use biff::config::RunConfig;
use biff::scene::{generate_synthetic, local_region, prune_map, GenConfig};

fn main() {
    let run = RunConfig { grid_cell: 4.0, anchor_hidden: 16, ..RunConfig::default() };
    let gen = GenConfig::default();
    let scene = generate_synthetic(&gen, 11).unwrap();
    // a briefly trained head concentrates its anchors, so the regions bite
    let mut anchors = AnchorModel::new(&run, 1);
    let pool: Vec<_> = (0..12).map(|s| generate_synthetic(&gen, 20 + s).unwrap()).collect();
    anchors.train(&pool, 40, 1e-2, 0).unwrap();

    let sets = anchors.scene_intentions(&scene, 12).unwrap();
    let targets = scene.targets().unwrap();
    let regions: Vec<_> = (0..2)
        .map(|a| {
            let region = local_region(&sets[a].positions());
            println!(
                "agent {}: disc at {} r = {:.1} m, ellipse b = {:.1} m",
                targets[a].id,
                if region.front_disc { "front" } else { "rear" },
                region.r,
                region.b
            );
            (targets[a].frame(), region)
        })
        .collect();

    let before: usize = scene.roads.iter().map(|r| r.points().len()).sum();
    let kept = prune_map(&scene.roads, &regions);
    let after: usize = kept.iter().map(|r| r.points().len()).sum();
    println!(
        "kept {after} of {before} road points in {} polylines (was {})",
        kept.len(),
        scene.roads.len()
    );
}
