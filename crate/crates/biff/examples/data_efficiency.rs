//! Smoke-scale data-efficiency sweep: train on growing fractions of the
//! same scene pool and report eval minFDE per fraction as CSV.

use biff::anchors::AnchorModel;
use biff::config::RunConfig;
use biff::evaluation::evaluate;
use biff::scene::{generate_synthetic, GenConfig};
use biff::training::train;

fn main() {
    let cfg = RunConfig {
        d_model: 16,
        n_enc: 1,
        n_lfbf: 1,
        k_neighbors: 6,
        s_intentions: 8,
        k_modalities: 2,
        t_future: 10,
        t_history: 6,
        n_heads: 2,
        agent_mlp_dim: 16,
        road_mlp_dim: 16,
        completion_mlp_dim: 16,
        traj_mlp_dim: 32,
        behavior_mlp_dim: 16,
        grid_cell: 4.0,
        anchor_hidden: 16,
        anchor_epochs: 6,
        epochs: 6,
        batch: 8,
        lr: 1e-3,
        seed: 11,
        background_agents: 0,
        ..RunConfig::default()
    };
    let gen = GenConfig {
        t_history: cfg.t_history,
        t_future: cfg.t_future,
        background_agents: 0,
        ..GenConfig::default()
    };
    let pool: Vec<_> = (0..64).map(|s| generate_synthetic(&gen, s).unwrap()).collect();
    let eval: Vec<_> = (0..16).map(|s| generate_synthetic(&gen, 1000 + s).unwrap()).collect();

    let mut anchors = AnchorModel::new(&cfg, cfg.seed);
    anchors.train(&pool, cfg.anchor_epochs, cfg.anchor_lr, cfg.seed).unwrap();

    println!("fraction,scenes,eval_min_fde");
    for fraction in [0.25, 0.5, 1.0] {
        let n = (pool.len() as f64 * fraction) as usize;
        let outcome = train(&pool[..n], None, &anchors, &cfg).unwrap();
        let report = evaluate(&outcome.model, &anchors, &eval, &cfg).unwrap();
        println!("{fraction},{n},{:.4}", report.min_fde);
    }
}
