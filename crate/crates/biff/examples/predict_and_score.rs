//! Inference on one scene: K joint modalities per agent pair, goals from
//! the intention decoder, and joint likelihoods from the nearest-anchor
//! scores.

use biff::anchors::AnchorModel;
use biff::config::RunConfig;
use biff::evaluation::predict_scene;
use biff::model::BiffModel;
use biff::scene::{generate_synthetic, GenConfig};

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
    let scene = generate_synthetic(
        &GenConfig { t_history: cfg.t_history, t_future: cfg.t_future, ..GenConfig::default() },
        42,
    )
    .unwrap();
    let model = BiffModel::new(&cfg, 1);
    let anchors = AnchorModel::new(&cfg, 2);

    let pred = predict_scene(&model, &anchors, &scene).unwrap();
    println!("scene {} with agents {:?}", pred.scene_id, pred.agent_ids);
    for k in 0..pred.k_modalities() {
        let e0 = pred.endpoint_local(k, 0);
        let e1 = pred.endpoint_local(k, 1);
        println!(
            "modality {k}: endpoints ({:>6.2},{:>6.2}) / ({:>6.2},{:>6.2})  joint likelihood {:.2e}",
            e0.0, e0.1, e1.0, e1.1, pred.joint_likelihood[k]
        );
    }
    let global = pred.global(0, 0);
    println!(
        "modality 0, agent {} first/last global points: ({:.1},{:.1}) -> ({:.1},{:.1})",
        pred.agent_ids[0],
        global.first().unwrap().0,
        global.first().unwrap().1,
        global.last().unwrap().0,
        global.last().unwrap().1
    );
}
