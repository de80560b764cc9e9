//! Joint metrics over a batch of scenes: minADE, minFDE, miss rate and
//! cross collision rate, with the per-type breakdown.

use biff::anchors::AnchorModel;
use biff::config::RunConfig;
use biff::evaluation::evaluate;
use biff::model::BiffModel;
use biff::scene::{generate_synthetic, GenConfig, Template};

fn main() {
    let cfg = RunConfig {
        d_model: 32,
        n_enc: 2,
        n_lfbf: 2,
        k_neighbors: 8,
        s_intentions: 16,
        k_modalities: 4,
        t_future: 20,
        n_heads: 4,
        agent_mlp_dim: 32,
        road_mlp_dim: 16,
        completion_mlp_dim: 32,
        traj_mlp_dim: 64,
        behavior_mlp_dim: 16,
        grid_cell: 4.0,
        anchor_hidden: 16,
        ..RunConfig::default()
    };
    let gen = GenConfig { t_history: cfg.t_history, t_future: cfg.t_future, ..GenConfig::default() };
    let scenes: Vec<_> = (0..30)
        .map(|i| {
            generate_synthetic(&GenConfig { template: Template::ALL[i % 3], ..gen.clone() }, i as u64).unwrap()
        })
        .collect();

    let model = BiffModel::new(&cfg, 5);
    let anchors = AnchorModel::new(&cfg, 6);
    let report = evaluate(&model, &anchors, &scenes, &cfg).unwrap();
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    println!("--- csv ---\n{}", report.to_csv());
}
