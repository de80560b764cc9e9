use std::time::Instant;

use biff::anchors::AnchorModel;
use biff::config::RunConfig;
use biff::evaluation::evaluate;
use biff::model::BiffModel;
use biff::scene::{generate_synthetic, GenConfig, Template};
use biff::training::train;

fn trend_config() -> RunConfig {
    RunConfig {
        d_model: 64,
        n_enc: 3,
        n_hfif: 1,
        n_lfbf: 3,
        k_neighbors: 12,
        s_intentions: 32,
        k_modalities: 6,
        l_roads: 256,
        t_future: 40,
        t_history: 11,
        n_heads: 8,
        agent_mlp_dim: 64,
        road_mlp_dim: 32,
        completion_mlp_dim: 64,
        traj_mlp_dim: 128,
        behavior_mlp_dim: 32,
        lr: 1e-4,
        batch: 16,
        grid_cell: 2.0,
        anchor_hidden: 32,
        anchor_epochs: 8,
        anchor_lr: 1e-3,
        seed: 2024,
        background_agents: 1,
        ..RunConfig::default()
    }
    .ablation_schedule()
}

fn main() {
    let t_all = Instant::now();
    let cfg = trend_config();
    let gen = GenConfig {
        template: Template::Crossing,
        t_history: cfg.t_history,
        t_future: cfg.t_future,
        dt: cfg.dt,
        interaction_dist: cfg.interaction_dist,
        background_agents: cfg.background_agents,
    };
    let scenes: Vec<_> = (0..500).map(|s| generate_synthetic(&gen, 9000 + s).unwrap()).collect();
    let eval_scenes: Vec<_> = (0..100).map(|s| generate_synthetic(&gen, 90000 + s).unwrap()).collect();
    // how tight are the ground truths?
    let mut min_sync = f64::INFINITY;
    for s in &scenes {
        let [a, b] = s.targets().unwrap();
        let m = a.future_gt.iter().zip(&b.future_gt).map(|(p, q)| (p.x - q.x).hypot(p.y - q.y)).fold(f64::INFINITY, f64::min);
        min_sync = min_sync.min(m);
    }
    println!("tightest GT sync separation over 500 scenes: {min_sync:.2} m");

    let mut anchors = AnchorModel::new(&cfg, cfg.seed);
    let st = anchors.train(&scenes, cfg.anchor_epochs, cfg.anchor_lr, cfg.seed).unwrap();
    println!("anchors: loss {:.3} -> {:.3}", st.epoch_losses[0], st.epoch_losses.last().unwrap());

    let untrained = evaluate(&BiffModel::new(&cfg, cfg.seed), &anchors, &eval_scenes, &cfg).unwrap();
    println!("untrained: minADE {:.2} minFDE {:.2} MR {:.3} CCR {:.4}", untrained.min_ade, untrained.min_fde, untrained.miss_rate, untrained.ccr);

    let full = train(&scenes, None, &anchors, &cfg).unwrap();
    let full_eval = evaluate(&full.model, &anchors, &eval_scenes, &cfg).unwrap();
    println!("fusion-on eval: minADE {:.2} minFDE {:.2} MR {:.3} CCR {:.4}", full_eval.min_ade, full_eval.min_fde, full_eval.miss_rate, full_eval.ccr);

    let cfg_off = RunConfig { lfbf_fusion: false, ..cfg.clone() };
    let off = train(&scenes, None, &anchors, &cfg_off).unwrap();
    let off_eval = evaluate(&off.model, &anchors, &eval_scenes, &cfg_off).unwrap();
    println!("fusion-off eval: minADE {:.2} minFDE {:.2} MR {:.3} CCR {:.4}", off_eval.min_ade, off_eval.min_fde, off_eval.miss_rate, off_eval.ccr);

    println!("criterion (a) halving: {} ({:.2} vs {:.2})", full_eval.min_fde <= 0.5 * untrained.min_fde, full_eval.min_fde, 0.5*untrained.min_fde);
    println!("criterion (b) ccr direction: {} ({:.4} <= {:.4})", full_eval.ccr <= off_eval.ccr, full_eval.ccr, off_eval.ccr);
    println!("total {:.1} min", t_all.elapsed().as_secs_f64() / 60.0);
}
