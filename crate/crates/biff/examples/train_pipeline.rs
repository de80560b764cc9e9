//! The two-stage pipeline at smoke scale: train the anchor scorer, freeze
//! it, train the predictor with the winner-takes-all loss, checkpoint, and
//! verify the checkpoint reproduces the forward pass bitwise.

use biff::anchors::AnchorModel;
use biff::checkpoint::Checkpoint;
use biff::config::RunConfig;
use biff::scene::{generate_synthetic, GenConfig, Template};
use biff::tensor::Tape;
use biff::training::train;

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
        anchor_epochs: 6,
        epochs: 4,
        batch: 8,
        lr: 5e-4,
        seed: 3,
        ..RunConfig::default()
    };
    let gen = GenConfig { t_history: cfg.t_history, t_future: cfg.t_future, ..GenConfig::default() };
    let scenes: Vec<_> = (0..24)
        .map(|i| {
            generate_synthetic(
                &GenConfig { template: Template::ALL[i % 3], ..gen.clone() },
                i as u64,
            )
            .unwrap()
        })
        .collect();

    // stage 1: anchor scorer, frozen afterwards
    let mut anchors = AnchorModel::new(&cfg, cfg.seed);
    let stats = anchors.train(&scenes, cfg.anchor_epochs, cfg.anchor_lr, cfg.seed).unwrap();
    println!(
        "anchor head: loss {:.3} -> {:.3} over {} epochs",
        stats.epoch_losses.first().unwrap(),
        stats.epoch_losses.last().unwrap(),
        stats.epoch_losses.len()
    );

    // stage 2: the predictor, evaluated on its own training scenes
    let outcome = train(&scenes, Some(&scenes), &anchors, &cfg).unwrap();
    for s in &outcome.loss_curve {
        let eval = s.eval.as_ref().unwrap();
        println!(
            "epoch {:>2}  lr {:.1e}  loss {:>8.4}  minFDE {:>7.3}  CCR {:.3}",
            s.epoch, s.lr, s.train_loss, eval.min_fde, eval.ccr
        );
    }

    // checkpoint round trip reproduces the forward pass bitwise
    let mut bytes = Vec::new();
    outcome.final_checkpoint.write_to(&mut bytes).unwrap();
    let restored = Checkpoint::read_from(&mut bytes.as_slice()).unwrap();
    let (model2, anchors2) = restored.restore_model().unwrap();
    let sets = anchors2.scene_intentions(&scenes[0], cfg.s_intentions).unwrap();
    let mut tape_a = Tape::new();
    let a = outcome.model.forward(&mut tape_a, &scenes[0], &sets).unwrap();
    let mut tape_b = Tape::new();
    let b = model2.forward(&mut tape_b, &scenes[0], &sets).unwrap();
    assert_eq!(
        tape_a.data(*a.layer_trajs.last().unwrap()),
        tape_b.data(*b.layer_trajs.last().unwrap())
    );
    println!("checkpoint: {} bytes, forward outputs identical after reload", bytes.len());
}
