use crate::anchors::{AnchorModel, GridSpec, Intention};
use crate::scene::{AgentTrack, AgentType, FutureState, HistoryState};

use super::*;

fn still_history(x: f64, y: f64) -> Vec<HistoryState> {
    vec![HistoryState { x, y, vx: 0.0, vy: 0.0, heading: 0.0, valid: true }]
}

/// A bare two-target scene with identity-ish frames (heading 0 at origin).
fn hand_scene(fut_a: Vec<(f64, f64)>, fut_b: Vec<(f64, f64)>) -> Scene {
    let mk = |id: u64, fut: Vec<(f64, f64)>| AgentTrack {
        id,
        kind: AgentType::Vehicle,
        history: still_history(0.0, 0.0),
        future_gt: fut.into_iter().map(|(x, y)| FutureState { x, y, valid: true }).collect(),
        footprint_radius: 1.0,
    };
    Scene {
        scene_id: "hand".into(),
        agents: vec![mk(0, fut_a), mk(1, fut_b)],
        roads: vec![],
        target_pair: (0, 1),
        rng_seed: 0,
    }
}

fn pred_from_locals(local: Vec<[Vec<(f64, f64)>; 2]>) -> ScenePrediction {
    let k = local.len();
    ScenePrediction {
        scene_id: "hand".into(),
        agent_ids: [0, 1],
        frames: [Pose2D::identity(), Pose2D::identity()],
        local,
        joint_likelihood: vec![0.0; k],
    }
}

fn line(n: usize, dx: f64, y: f64) -> Vec<(f64, f64)> {
    (1..=n).map(|t| (t as f64 * dx, y)).collect()
}

#[test]
fn joint_likelihood_is_product_of_nearest_anchor_scores() {
    let grid = GridSpec { extent_x: 10.0, extent_y: 10.0, cell: 5.0 };
    let sets = [
        IntentionSet {
            agent_id: 0,
            anchors: vec![Intention { x: 1.0, y: 0.0, score: 0.3 }, Intention { x: 9.0, y: 0.0, score: 0.1 }],
            grid,
        },
        IntentionSet {
            agent_id: 1,
            anchors: vec![Intention { x: 0.0, y: 2.0, score: 0.5 }, Intention { x: 0.0, y: -7.0, score: 0.2 }],
            grid,
        },
    ];
    // endpoints exactly on the first anchors
    let joints = score_modalities(&[[(1.0, 0.0), (0.0, 2.0)], [(8.5, 0.2), (0.1, -6.0)]], &sets).unwrap();
    assert!((joints[0] - 0.15).abs() < 1e-12);
    assert!((joints[1] - 0.1 * 0.2).abs() < 1e-12);

    let empty = [
        IntentionSet { agent_id: 0, anchors: vec![], grid },
        IntentionSet { agent_id: 1, anchors: vec![], grid },
    ];
    assert!(score_modalities(&[[(0.0, 0.0), (0.0, 0.0)]], &empty).is_err());
}

#[test]
fn perfect_modality_gives_zero_min_metrics() {
    let fut_a = line(5, 1.0, 0.0);
    let fut_b = line(5, 1.0, 4.0);
    let scene = hand_scene(fut_a.clone(), fut_b.clone());
    // modality 0 far off, modality 1 exact
    let off: Vec<(f64, f64)> = fut_a.iter().map(|p| (p.0 + 30.0, p.1)).collect();
    let pred = pred_from_locals(vec![[off.clone(), off.clone()], [fut_a, fut_b]]);
    let cfg = RunConfig::toy();
    let m = scene_metrics(&pred, &scene, &cfg).unwrap();
    assert_eq!(m.min_ade, 0.0);
    assert_eq!(m.min_fde, 0.0);
    assert!(!m.missed);
}

#[test]
fn metrics_match_scalar_oracle_and_min_is_monotone() {
    let fut_a = line(4, 1.0, 0.0);
    let fut_b = line(4, 1.0, 6.0);
    let scene = hand_scene(fut_a.clone(), fut_b.clone());
    // single modality with constant offsets (1,0) for a and (0,2) for b
    let pa: Vec<(f64, f64)> = fut_a.iter().map(|p| (p.0 + 1.0, p.1)).collect();
    let pb: Vec<(f64, f64)> = fut_b.iter().map(|p| (p.0, p.1 + 2.0)).collect();
    let pred = pred_from_locals(vec![[pa.clone(), pb.clone()]]);
    let cfg = RunConfig::toy();
    let m = scene_metrics(&pred, &scene, &cfg).unwrap();
    // mean over agents of per-agent ADE/FDE
    assert!((m.min_ade - 0.5 * (1.0 + 2.0)).abs() < 1e-12);
    assert!((m.min_fde - 1.5).abs() < 1e-12);

    // adding a worse modality never increases the metric
    let worse: Vec<(f64, f64)> = fut_a.iter().map(|p| (p.0 + 50.0, p.1)).collect();
    let pred2 = pred_from_locals(vec![[pa, pb], [worse.clone(), worse]]);
    let m2 = scene_metrics(&pred2, &scene, &cfg).unwrap();
    assert!(m2.min_ade <= m.min_ade + 1e-12);
    assert!(m2.min_fde <= m.min_fde + 1e-12);

    // agent-sum variant doubles the mean for the symmetric case
    let sum_cfg = RunConfig { metric_agent_sum: true, ..cfg };
    let m3 = scene_metrics(&pred2, &scene, &sum_cfg).unwrap();
    assert!((m3.min_fde - 3.0).abs() < 1e-12);
}

#[test]
fn miss_requires_every_modality_to_fail_some_agent() {
    let fut_a = line(3, 1.0, 0.0);
    let fut_b = line(3, 1.0, 5.0);
    let scene = hand_scene(fut_a.clone(), fut_b.clone());
    let cfg = RunConfig::toy(); // miss_threshold 2.0

    // agent a within threshold, agent b outside, in every modality -> miss
    let near: Vec<(f64, f64)> = fut_a.iter().map(|p| (p.0 + 0.5, p.1)).collect();
    let far: Vec<(f64, f64)> = fut_b.iter().map(|p| (p.0, p.1 + 10.0)).collect();
    let m = scene_metrics(&pred_from_locals(vec![[near.clone(), far.clone()]]), &scene, &cfg).unwrap();
    assert!(m.missed, "joint hit needs both agents inside the threshold");

    // one modality bringing both inside clears the miss
    let near_b: Vec<(f64, f64)> = fut_b.iter().map(|p| (p.0, p.1 + 1.0)).collect();
    let m2 = scene_metrics(&pred_from_locals(vec![[near.clone(), far], [near, near_b]]), &scene, &cfg).unwrap();
    assert!(!m2.missed);
}

#[test]
fn constructed_collisions_in_three_of_six_modalities_give_half() {
    let t_n = 20;
    let fut_a = line(t_n, 1.0, 0.0);
    let fut_b = line(t_n, 1.0, 8.0);
    let scene = hand_scene(fut_a.clone(), fut_b.clone());
    let cfg = RunConfig::toy();

    // vehicle radii 1.0 + 1.0: collision iff distance < 2 at a synchronized step
    let mut locals = Vec::new();
    for k in 0..6 {
        let a_traj = fut_a.clone();
        let b_traj: Vec<(f64, f64)> = if k < 3 {
            // dips to 1 m separation exactly at step index 10
            fut_a
                .iter()
                .enumerate()
                .map(|(i, p)| if i == 10 { (p.0, p.1 + 1.0) } else { (p.0, p.1 + 5.0) })
                .collect()
        } else {
            fut_a.iter().map(|p| (p.0, p.1 + 5.0)).collect()
        };
        locals.push([a_traj, b_traj]);
    }
    let m = scene_metrics(&pred_from_locals(locals), &scene, &cfg).unwrap();
    assert_eq!(m.ccr, 0.5);
}

#[test]
fn ccr_is_zero_when_agents_stay_apart_and_zero_radius_needs_exact_overlap() {
    let fut_a = line(5, 1.0, 0.0);
    let fut_b = line(5, 1.0, 10.0);
    let mut scene = hand_scene(fut_a.clone(), fut_b.clone());
    let cfg = RunConfig::toy();
    let pred = pred_from_locals(vec![[fut_a.clone(), fut_b.clone()]]);
    let m = scene_metrics(&pred, &scene, &cfg).unwrap();
    assert_eq!(m.ccr, 0.0);

    // radius 0 with strict inequality: even exact overlap does not collide
    scene.agents[0].footprint_radius = 0.0;
    scene.agents[1].footprint_radius = 0.0;
    let same = pred_from_locals(vec![[fut_a.clone(), fut_a.clone()]]);
    let m2 = scene_metrics(&same, &scene, &cfg).unwrap();
    assert_eq!(m2.ccr, 0.0);

    // any positive radius turns exact overlap into a collision
    scene.agents[0].footprint_radius = 1e-12;
    scene.agents[1].footprint_radius = 1e-12;
    let m3 = scene_metrics(&same, &scene, &cfg).unwrap();
    assert_eq!(m3.ccr, 1.0);
}

#[test]
fn metrics_are_invariant_under_rigid_transforms_of_the_evaluation_scene() {
    use crate::geom::RigidTransform;
    use crate::scene::{generate_synthetic, GenConfig};

    let cfg = RunConfig::toy();
    let model = BiffModel::new(&cfg, 5);
    let anchors = AnchorModel::new(&cfg, 6);
    let scenes: Vec<Scene> = (0..4)
        .map(|s| {
            generate_synthetic(
                &GenConfig { t_history: cfg.t_history, t_future: cfg.t_future, ..GenConfig::default() },
                s,
            )
            .unwrap()
        })
        .collect();
    let base = evaluate(&model, &anchors, &scenes, &cfg).unwrap();
    let g = RigidTransform { rotation: 2.4, translation: (-33.0, 12.0) };
    let moved: Vec<Scene> = scenes.iter().map(|s| s.apply_rigid(&g)).collect();
    let report = evaluate(&model, &anchors, &moved, &cfg).unwrap();
    assert!((base.min_ade - report.min_ade).abs() < 1e-6);
    assert!((base.min_fde - report.min_fde).abs() < 1e-6);
    assert_eq!(base.miss_rate, report.miss_rate);
    assert_eq!(base.ccr, report.ccr);
}

#[test]
fn evaluate_is_deterministic_and_rejects_empty_input() {
    use crate::scene::{generate_synthetic, GenConfig};

    let cfg = RunConfig::toy();
    let model = BiffModel::new(&cfg, 7);
    let anchors = AnchorModel::new(&cfg, 8);
    let scenes: Vec<Scene> = (0..3)
        .map(|s| {
            generate_synthetic(
                &GenConfig { t_history: cfg.t_history, t_future: cfg.t_future, ..GenConfig::default() },
                10 + s,
            )
            .unwrap()
        })
        .collect();
    let a = evaluate(&model, &anchors, &scenes, &cfg).unwrap();
    let b = evaluate(&model, &anchors, &scenes, &cfg).unwrap();
    assert_eq!(a, b);
    assert!(a.samples == 3 && a.skipped == 0);
    assert!(!a.per_type.is_empty());
    assert!(a.miss_rate >= 0.0 && a.miss_rate <= 1.0);
    assert!(a.ccr >= 0.0 && a.ccr <= 1.0);
    assert!(evaluate(&model, &anchors, &[], &cfg).is_err());

    let csv = a.to_csv();
    assert!(csv.contains("min_fde,") && csv.contains("ccr,"));
}
