//! Generate one scene per template, print the interaction summary, and
//! round-trip everything through the JSON-Lines format.

use biff::scene::{
    closest_future_distance, generate_synthetic, read_scenes_from_str, write_scenes_to_string, GenConfig,
    Template,
};

fn main() {
    let mut scenes = Vec::new();
    for (i, template) in Template::ALL.into_iter().enumerate() {
        let cfg = GenConfig { template, ..GenConfig::default() };
        let scene = generate_synthetic(&cfg, 100 + i as u64).unwrap();
        let [a, b] = scene.targets().unwrap();
        let d = closest_future_distance(a, b).unwrap();
        println!(
            "{:<12} {} agents, {} road polylines, target d_m = {:.2} m",
            template.name(),
            scene.agents.len(),
            scene.roads.len(),
            d
        );
        scenes.push(scene);
    }

    let text = write_scenes_to_string(&scenes);
    let back = read_scenes_from_str(&text).unwrap();
    assert_eq!(scenes, back);
    println!("serialized {} scenes ({} bytes), lossless round trip", back.len(), text.len());
}
