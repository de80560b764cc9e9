//! Property-check suites behind `biff check` and the acceptance tests:
//! finite-difference gradient verification, rigid-transform invariance
//! sweeps, and independent oracles for preprocessing, WTA selection, goal
//! decoding and metrics.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::anchors::{top_s, AnchorModel, GridSpec};
use crate::config::RunConfig;
use crate::evaluation::{local_ground_truth, scene_metrics, ScenePrediction};
use crate::geom::{Pose2D, RigidTransform};
use crate::model::BiffModel;
use crate::scene::{
    closest_future_distance, generate_synthetic, local_region, AgentTrack, AgentType, FutureState, GenConfig,
    HistoryState, Scene, Template,
};
use crate::tensor::{check_backward_vs_fd, ParamSet, Reduction, Tape, Tensor};
use crate::training::{compute_loss, select_wta_modality, wta_for_output};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        CheckResult { name: name.into(), passed, detail: detail.into() }
    }
}

pub fn all_passed(results: &[CheckResult]) -> bool {
    results.iter().all(|r| r.passed)
}

pub fn render_table(results: &[CheckResult]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for r in results {
        out.push_str(&format!(
            "{:width$}  {}  {}\n",
            r.name,
            if r.passed { "pass" } else { "FAIL" },
            r.detail,
            width = width
        ));
    }
    out
}

const FD_H: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

/// Finite-difference verification of every differentiable op plus the full
/// encoder -> HFIF -> LFBF -> loss graph at toy dimensions.
pub fn gradcheck_suite(seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut results = Vec::new();
    let mut push = |name: &str, r: Result<crate::tensor::GradCheckReport, crate::tensor::TensorError>| match r {
        Ok(rep) => results.push(CheckResult::new(name, rep.passed(), rep.to_string())),
        Err(e) => results.push(CheckResult::new(name, false, e.to_string())),
    };

    macro_rules! op_check {
        ($name:expr, $setup:expr) => {{
            let r = $setup(&mut rng);
            push($name, r);
        }};
    }

    op_check!("op.linear", |rng: &mut ChaCha8Rng| {
        let mut set = ParamSet::new();
        let x = set.add("x", rand_tensor(rng, &[3, 4]));
        let w = set.add("w", rand_tensor(rng, &[4, 2]));
        let b = set.add("b", rand_tensor(rng, &[2]));
        check_backward_vs_fd(
            &mut set,
            |s, t| {
                let (x, w, b) = (t.param(s, x), t.param(s, w), t.param(s, b));
                let y = t.linear(x, w, Some(b))?;
                Ok(t.sum_all(y))
            },
            FD_H,
            FD_TOL,
            None,
            1,
        )
    });
    op_check!("op.matmul_transposed", |rng: &mut ChaCha8Rng| {
        let mut set = ParamSet::new();
        let a = set.add("a", rand_tensor(rng, &[3, 5]));
        let b = set.add("b", rand_tensor(rng, &[4, 5]));
        check_backward_vs_fd(
            &mut set,
            |s, t| {
                let (a, b) = (t.param(s, a), t.param(s, b));
                let y = t.matmul_ex(a, b, true)?;
                Ok(t.mean_all(y))
            },
            FD_H,
            FD_TOL,
            None,
            2,
        )
    });
    op_check!("op.softmax", |rng: &mut ChaCha8Rng| {
        let mut set = ParamSet::new();
        let x = set.add("x", rand_tensor(rng, &[3, 6]));
        let m = set.add("m", rand_tensor(rng, &[3, 6]));
        check_backward_vs_fd(
            &mut set,
            |s, t| {
                let (x, m) = (t.param(s, x), t.param(s, m));
                let sm = t.softmax_rows(x)?;
                let z = t.mul(sm, m)?;
                Ok(t.sum_all(z))
            },
            FD_H,
            FD_TOL,
            None,
            3,
        )
    });
    op_check!("op.layer_norm", |rng: &mut ChaCha8Rng| {
        let mut set = ParamSet::new();
        let x = set.add("x", rand_tensor(rng, &[4, 5]));
        let g = set.add("g", rand_tensor(rng, &[5]));
        let b = set.add("b", rand_tensor(rng, &[5]));
        check_backward_vs_fd(
            &mut set,
            |s, t| {
                let (x, g, b) = (t.param(s, x), t.param(s, g), t.param(s, b));
                let y = t.layer_norm(x, g, b, 1e-5)?;
                Ok(t.sum_all(y))
            },
            FD_H,
            FD_TOL,
            None,
            4,
        )
    });
    op_check!("op.elementwise_and_shape", |rng: &mut ChaCha8Rng| {
        let mut set = ParamSet::new();
        let x = set.add("x", rand_tensor(rng, &[6, 4]));
        let y = set.add("y", rand_tensor(rng, &[6, 4]));
        check_backward_vs_fd(
            &mut set,
            |s, t| {
                let (x, y) = (t.param(s, x), t.param(s, y));
                let a = t.add(x, y)?;
                let b = t.sub(a, x)?;
                let c = t.mul(b, y)?;
                let d = t.scale(c, -0.7);
                let e = t.relu(d);
                let g = t.gather_rows(e, &[0, 3, 3, 5])?;
                let sl = t.slice_rows(e, 1, 4)?;
                let cat = t.concat_rows(&[g, sl])?;
                let cc = t.concat_cols(cat, cat)?;
                let rs = t.reshape(cc, &[16, 4])?;
                Ok(t.mean_all(rs))
            },
            FD_H,
            FD_TOL,
            None,
            5,
        )
    });
    op_check!("op.max_pool_rows", |rng: &mut ChaCha8Rng| {
        let mut set = ParamSet::new();
        let x = set.add("x", rand_tensor(rng, &[7, 5]));
        check_backward_vs_fd(
            &mut set,
            |s, t| {
                let x = t.param(s, x);
                let y = t.max_pool_rows(x)?;
                let y2 = t.reshape(y, &[1, 5])?;
                Ok(t.sum_all(y2))
            },
            FD_H,
            FD_TOL,
            None,
            6,
        )
    });
    op_check!("op.smooth_l1", |rng: &mut ChaCha8Rng| {
        let mut set = ParamSet::new();
        let p = set.add("p", rand_tensor(rng, &[5, 2]));
        let q = set.add("q", rand_tensor(rng, &[5, 2]));
        check_backward_vs_fd(
            &mut set,
            |s, t| {
                let (p, q) = (t.param(s, p), t.param(s, q));
                let a = t.smooth_l1(p, q, 1.0, Reduction::Mean)?;
                let b = t.smooth_l1(p, q, 0.5, Reduction::Sum)?;
                t.add(a, b)
            },
            FD_H,
            FD_TOL,
            None,
            7,
        )
    });
    op_check!("op.cross_entropy", |rng: &mut ChaCha8Rng| {
        let mut set = ParamSet::new();
        let l = set.add("logits", rand_tensor(rng, &[1, 9]));
        check_backward_vs_fd(&mut set, |s, t| {
            let l = t.param(s, l);
            t.cross_entropy_row(l, 2)
        }, FD_H, FD_TOL, None, 8)
    });
    op_check!("op.block_attention", |rng: &mut ChaCha8Rng| {
        let mut set = ParamSet::new();
        let q = set.add("q", rand_tensor(rng, &[3, 4]));
        let k = set.add("k", rand_tensor(rng, &[8, 4]));
        let v = set.add("v", rand_tensor(rng, &[8, 6]));
        let blocks = vec![(0usize, 4usize), (2, 6), (5, 3)];
        check_backward_vs_fd(
            &mut set,
            move |s, t| {
                let (q, k, v) = (t.param(s, q), t.param(s, k), t.param(s, v));
                let out = t.block_attention(q, k, v, &blocks, 2)?;
                Ok(t.sum_all(out))
            },
            FD_H,
            FD_TOL,
            None,
            9,
        )
    });

    // full graph at toy dimensions: d=8, S=4, K=2, T=5, one layer everywhere
    let cfg = RunConfig::toy();
    let anchors = AnchorModel::new(&cfg, seed ^ 0xA);
    let scene = generate_synthetic(
        &GenConfig { t_history: cfg.t_history, t_future: cfg.t_future, ..GenConfig::default() },
        seed ^ 0xB,
    )
    .expect("toy scene");
    let sets = anchors.scene_intentions(&scene, cfg.s_intentions).expect("intentions");

    // freeze both discrete/stop-gradient pieces from the unperturbed run —
    // the WTA selection and the detached LFBF initialization — so finite
    // differences evaluate exactly the function backward differentiates
    let model = BiffModel::new(&cfg, seed ^ 0xC);
    let (k_star, init0) = {
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &scene, &sets).expect("forward");
        let k = wta_for_output(&tape, &out, &scene, cfg.k_modalities).expect("valid endpoints");
        let mut init = tape.value(out.hfif.trajectories);
        init.requires_grad = false;
        (k, init)
    };
    let mut params_model = model;
    let scene_c = scene.clone();
    let cfg_c = cfg.clone();
    let encoder = params_model.encoder.clone();
    let hfif = params_model.hfif.clone();
    let lfbf = params_model.lfbf.clone();
    let r = check_backward_vs_fd(
        &mut params_model.params,
        move |ps, tape| {
            let shadow = BiffModel {
                cfg: cfg_c.clone(),
                params: ps.clone(),
                encoder: encoder.clone(),
                hfif: hfif.clone(),
                lfbf: lfbf.clone(),
            };
            let out = shadow.forward_with_init(tape, &scene_c, &sets, Some(&init0))?;
            compute_loss(tape, &out, &scene_c, k_star, &cfg_c)
        },
        FD_H,
        FD_TOL,
        Some(2),
        seed ^ 0xD,
    );
    push("full_graph.encoder_hfif_lfbf_loss", r);

    // the anchor head trains separately; check its cross-entropy graph too
    let mut anchor_model = AnchorModel::new(&cfg, seed ^ 0xE);
    let track = scene.agents[0].clone();
    let enc = anchor_model.encoder.clone();
    let head = anchor_model.head.clone();
    let r = check_backward_vs_fd(
        &mut anchor_model.params,
        move |ps, tape| {
            let rows = crate::encoder::agent_step_rows(&track);
            let rid = tape.constant(&rows);
            let feat = enc.encode(tape, ps, rid)?;
            let logits = head.apply(tape, ps, feat)?;
            tape.cross_entropy_row(logits, 3)
        },
        FD_H,
        FD_TOL,
        Some(3),
        seed ^ 0xF,
    );
    push("full_graph.anchor_head_loss", r);

    results
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(data, shape).expect("shape")
}

/// Config used by the invariance sweep: small but structurally real.
pub fn invariance_config() -> RunConfig {
    RunConfig {
        d_model: 32,
        n_enc: 2,
        n_hfif: 1,
        n_lfbf: 2,
        k_neighbors: 8,
        s_intentions: 16,
        k_modalities: 4,
        l_roads: 64,
        t_future: 20,
        t_history: 11,
        n_heads: 4,
        agent_mlp_dim: 32,
        road_mlp_dim: 16,
        completion_mlp_dim: 32,
        traj_mlp_dim: 32,
        behavior_mlp_dim: 16,
        grid_cell: 4.0,
        anchor_hidden: 16,
        ..RunConfig::default()
    }
}

/// Rotation sweep {0, pi/6, ..., 11pi/6} plus seeded random translations:
/// per-agent-frame predictions and all metrics must stay within 1e-6 of the
/// untransformed run.
pub fn invariance_suite(seed: u64, n_scenes: usize) -> Vec<CheckResult> {
    let cfg = invariance_config();
    let model = BiffModel::new(&cfg, seed);
    let anchors = AnchorModel::new(&cfg, seed ^ 1);
    let gen = GenConfig { t_history: cfg.t_history, t_future: cfg.t_future, ..GenConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);

    let mut max_pred_dev = 0.0f64;
    let mut max_metric_dev = 0.0f64;
    let mut failures = Vec::new();
    for s in 0..n_scenes {
        let template = Template::ALL[s % Template::ALL.len()];
        let scene = generate_synthetic(&GenConfig { template, ..gen.clone() }, seed + s as u64)
            .expect("generator");
        let base_pred = crate::evaluation::predict_scene(&model, &anchors, &scene).expect("predict");
        let base_metrics = scene_metrics(&base_pred, &scene, &cfg).expect("metrics");
        for i in 0..12 {
            let rot = i as f64 * std::f64::consts::PI / 6.0;
            let g = RigidTransform {
                rotation: rot,
                translation: (rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0)),
            };
            let moved = scene.apply_rigid(&g);
            let pred = crate::evaluation::predict_scene(&model, &anchors, &moved).expect("predict");
            for k in 0..pred.k_modalities() {
                for a in 0..2 {
                    for (p, q) in base_pred.local[k][a].iter().zip(&pred.local[k][a]) {
                        max_pred_dev = max_pred_dev.max((p.0 - q.0).abs()).max((p.1 - q.1).abs());
                    }
                }
            }
            let m = scene_metrics(&pred, &moved, &cfg).expect("metrics");
            max_metric_dev = max_metric_dev
                .max((m.min_ade - base_metrics.min_ade).abs())
                .max((m.min_fde - base_metrics.min_fde).abs())
                .max((m.ccr - base_metrics.ccr).abs())
                .max(if m.missed == base_metrics.missed { 0.0 } else { 1.0 });
            if max_pred_dev >= 1e-6 || max_metric_dev >= 1e-6 {
                failures.push(format!("scene {s} rotation {rot:.3}"));
            }
        }
    }
    vec![
        CheckResult::new(
            "invariance.predictions",
            max_pred_dev < 1e-6,
            format!("{n_scenes} scenes x 12 rotations, max deviation {max_pred_dev:.3e}"),
        ),
        CheckResult::new(
            "invariance.metrics",
            max_metric_dev < 1e-6,
            if failures.is_empty() {
                format!("max metric deviation {max_metric_dev:.3e}")
            } else {
                format!("failed at {}", failures.join(", "))
            },
        ),
    ]
}

fn random_track(rng: &mut ChaCha8Rng, id: u64, n: usize) -> AgentTrack {
    AgentTrack {
        id,
        kind: AgentType::Vehicle,
        history: vec![HistoryState { x: 0.0, y: 0.0, vx: 0.0, vy: 0.0, heading: 0.0, valid: true }],
        future_gt: (0..n)
            .map(|_| FutureState {
                x: rng.gen_range(-80.0..80.0),
                y: rng.gen_range(-80.0..80.0),
                valid: rng.gen_bool(0.95),
            })
            .collect(),
        footprint_radius: 1.0,
    }
}

/// Independent oracles: d_m brute force, prune-region membership, WTA scan,
/// goal-decoder contract with a real convex hull test, and metric
/// recomputation on synthetic predictions.
pub fn oracle_suite(seed: u64) -> Vec<CheckResult> {
    let mut results = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // closest_future_distance == O(T^2) brute force over valid pairs, exact
    {
        let mut ok = true;
        let mut detail = String::new();
        for trial in 0..1000 {
            let na = rng.gen_range(1..40);
            let nb = rng.gen_range(1..40);
            let a = random_track(&mut rng, 0, na);
            let b = random_track(&mut rng, 1, nb);
            let va: Vec<(f64, f64)> = a.valid_future().map(|s| (s.x, s.y)).collect();
            let vb: Vec<(f64, f64)> = b.valid_future().map(|s| (s.x, s.y)).collect();
            let got = closest_future_distance(&a, &b);
            if va.is_empty() || vb.is_empty() {
                if got.is_ok() {
                    ok = false;
                    detail = format!("trial {trial}: expected error on empty future");
                    break;
                }
                continue;
            }
            let mut oracle = f64::INFINITY;
            for p in &va {
                for q in &vb {
                    oracle = oracle.min(((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt());
                }
            }
            if got.expect("non-empty") != oracle {
                ok = false;
                detail = format!("trial {trial}: mismatch");
                break;
            }
        }
        if ok {
            detail = "1000 random pairs, exact".into();
        }
        results.push(CheckResult::new("oracle.closest_future_distance", ok, detail));
    }

    // prune-region membership vs the analytic half-disc/half-ellipse rule
    {
        let mut ok = true;
        let mut checked = 0usize;
        'outer: for _ in 0..10 {
            let anchors: Vec<(f64, f64)> = (0..rng.gen_range(1..40))
                .map(|_| (rng.gen_range(-60.0..60.0), rng.gen_range(-40.0..40.0)))
                .collect();
            let region = local_region(&anchors);
            let df = anchors.iter().filter(|a| a.0 >= 0.0).map(|a| a.0.hypot(a.1)).fold(0.0, f64::max);
            let dr = anchors.iter().filter(|a| a.0 < 0.0).map(|a| a.0.hypot(a.1)).fold(0.0, f64::max);
            for _ in 0..1000 {
                let p: (f64, f64) = (rng.gen_range(-150.0..150.0), rng.gen_range(-150.0..150.0));
                let expect = if df > dr {
                    let (r, b) = (df + 30.0, dr + 20.0);
                    if p.0 >= 0.0 { p.0.hypot(p.1) <= r } else { (p.0 / b).powi(2) + (p.1 / r).powi(2) <= 1.0 }
                } else {
                    let (r, b) = (dr + 30.0, df + 20.0);
                    if p.0 < 0.0 { p.0.hypot(p.1) <= r } else { (p.0 / b).powi(2) + (p.1 / r).powi(2) <= 1.0 }
                };
                checked += 1;
                if region.contains(p) != expect {
                    ok = false;
                    break 'outer;
                }
            }
        }
        results.push(CheckResult::new(
            "oracle.prune_map_membership",
            ok,
            format!("{checked} random points, +30 m/+20 m margins, exact"),
        ));
    }

    // WTA == exhaustive scan
    {
        let mut ok = true;
        for _ in 0..1000 {
            let k = rng.gen_range(1..9);
            let endpoints: Vec<[(f64, f64); 2]> = (0..k)
                .map(|_| {
                    [
                        (rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)),
                        (rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)),
                    ]
                })
                .collect();
            let gt = [
                (rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)),
                (rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)),
            ];
            let got = select_wta_modality(&endpoints, &gt);
            let mut best = 0;
            let mut best_err = f64::INFINITY;
            for (kk, eps) in endpoints.iter().enumerate() {
                let e = (eps[0].0 - gt[0].0).hypot(eps[0].1 - gt[0].1)
                    + (eps[1].0 - gt[1].0).hypot(eps[1].1 - gt[1].1);
                if e < best_err {
                    best_err = e;
                    best = kk;
                }
            }
            if got != best {
                ok = false;
                break;
            }
        }
        results.push(CheckResult::new("oracle.wta_selection", ok, "1000 random instances, exact"));
    }

    // goal-decoder contract: scores sum to 1, goal inside the convex hull
    {
        let cfg = RunConfig::toy();
        let mut ps = ParamSet::new();
        let mut prng = ChaCha8Rng::seed_from_u64(seed ^ 0x33);
        let hfif = crate::hfif::HfifParams::new(&mut ps, &mut prng, &cfg);
        let grid = GridSpec::from_config(&cfg);
        let mut ok = true;
        let mut worst_sum = 0.0f64;
        for trial in 0..1000 {
            let s = cfg.s_intentions;
            let feats = rand_tensor(&mut rng, &[s, cfg.d_model]);
            let anchors: Vec<(f64, f64)> =
                (0..s).map(|_| (rng.gen_range(-60.0..60.0), rng.gen_range(-40.0..40.0))).collect();
            let mut tape = Tape::new();
            let fid = tape.constant(&feats);
            let coords = Tensor::from_rows(&anchors.iter().map(|a| vec![a.0, a.1]).collect::<Vec<_>>())
                .expect("coords");
            let cid = tape.constant(&coords);
            let head = &hfif.goal_heads[trial % cfg.k_modalities];
            let logits = head.apply(&mut tape, &ps, fid).expect("head");
            let row = tape.reshape(logits, &[1, s]).expect("reshape");
            let gamma = tape.softmax_rows(row).expect("softmax");
            let goal = tape.matmul(gamma, cid).expect("goal");
            let gsum: f64 = tape.data(gamma).iter().sum();
            worst_sum = worst_sum.max((gsum - 1.0).abs());
            if (gsum - 1.0).abs() > 1e-7 {
                ok = false;
                break;
            }
            let g = tape.data(goal);
            if !point_in_convex_hull((g[0], g[1]), &anchors, 1e-9) {
                ok = false;
                break;
            }
        }
        let _ = grid;
        results.push(CheckResult::new(
            "oracle.goal_decoder_contract",
            ok,
            format!("1000 head outputs, worst |sum-1| = {worst_sum:.2e}, hull membership"),
        ));
    }

    // WTA zero-gradient isolation on 10 scenes
    {
        let cfg = RunConfig::toy();
        let anchors = AnchorModel::new(&cfg, seed ^ 0x44);
        let mut ok = true;
        for s in 0..10u64 {
            let scene = generate_synthetic(
                &GenConfig { t_history: cfg.t_history, t_future: cfg.t_future, ..GenConfig::default() },
                seed ^ (0x100 + s),
            )
            .expect("scene");
            let mut model = BiffModel::new(&cfg, seed ^ (0x200 + s));
            let sets = anchors.scene_intentions(&scene, cfg.s_intentions).expect("sets");
            let mut tape = Tape::new();
            let out = model.forward(&mut tape, &scene, &sets).expect("forward");
            let Some(k_star) = wta_for_output(&tape, &out, &scene, cfg.k_modalities) else {
                continue;
            };
            let loss = compute_loss(&mut tape, &out, &scene, k_star, &cfg).expect("loss");
            model.params.zero_grads();
            tape.backward(loss, &mut model.params).expect("backward");
            for (k, head) in model.hfif.goal_heads.iter().enumerate() {
                let nonzero = model.params.get(head.w).grad.iter().any(|&g| g != 0.0)
                    || model.params.get(head.b).grad.iter().any(|&g| g != 0.0);
                if (k == k_star) != nonzero {
                    ok = false;
                }
            }
        }
        results.push(CheckResult::new("oracle.wta_gradient_isolation", ok, "10 scenes, exact zeros"));
    }

    // metric oracles on 100 seeded scenes with synthetic predictions
    {
        let cfg = RunConfig { k_modalities: 6, t_future: 30, miss_threshold: 2.0, ..RunConfig::toy() };
        let gen = GenConfig { t_history: cfg.t_history, t_future: cfg.t_future, ..GenConfig::default() };
        let mut ok = true;
        'scenes: for s in 0..100u64 {
            let template = Template::ALL[(s % 3) as usize];
            let scene = generate_synthetic(&GenConfig { template, ..gen.clone() }, seed ^ (0x300 + s))
                .expect("scene");
            let gts = local_ground_truth(&scene).expect("gt");
            // synthetic predictions: GT plus seeded noise, per modality
            let mut local = Vec::new();
            for _ in 0..cfg.k_modalities {
                let mut per_agent = Vec::new();
                for gt in gts.iter() {
                    let noise = rng.gen_range(0.1..6.0);
                    per_agent.push(
                        gt.steps
                            .iter()
                            .map(|st| (st.0 + rng.gen_range(-noise..noise), st.1 + rng.gen_range(-noise..noise)))
                            .collect::<Vec<_>>(),
                    );
                }
                local.push([per_agent[0].clone(), per_agent[1].clone()]);
            }
            let [ta, tb] = scene.targets().expect("targets");
            let pred = ScenePrediction {
                scene_id: scene.scene_id.clone(),
                agent_ids: [ta.id, tb.id],
                frames: [ta.frame(), tb.frame()],
                local,
                joint_likelihood: vec![0.0; cfg.k_modalities],
            };
            let got = scene_metrics(&pred, &scene, &cfg).expect("metrics");

            // independent scalar recomputation
            let mut exp_ade = f64::INFINITY;
            let mut exp_fde = f64::INFINITY;
            let mut hit = false;
            for k in 0..cfg.k_modalities {
                let mut ades = [0.0; 2];
                let mut fdes = [0.0; 2];
                for a in 0..2 {
                    let steps = &gts[a].steps;
                    let mut sum = 0.0;
                    let mut n = 0;
                    for (p, g) in pred.local[k][a].iter().zip(steps) {
                        if g.2 {
                            sum += (p.0 - g.0).hypot(p.1 - g.1);
                            n += 1;
                        }
                    }
                    ades[a] = sum / n as f64;
                    let last = steps.last().expect("steps");
                    let lp = pred.local[k][a].last().expect("pred");
                    fdes[a] = (lp.0 - last.0).hypot(lp.1 - last.1);
                }
                exp_ade = exp_ade.min(0.5 * (ades[0] + ades[1]));
                exp_fde = exp_fde.min(0.5 * (fdes[0] + fdes[1]));
                if fdes[0] <= cfg.miss_threshold && fdes[1] <= cfg.miss_threshold {
                    hit = true;
                }
            }
            let mut n_coll = 0;
            for k in 0..cfg.k_modalities {
                let ga: Vec<(f64, f64)> =
                    pred.local[k][0].iter().map(|p| crate::geom::from_frame(*p, &pred.frames[0])).collect();
                let gb: Vec<(f64, f64)> =
                    pred.local[k][1].iter().map(|p| crate::geom::from_frame(*p, &pred.frames[1])).collect();
                let rsum = ta.footprint_radius + tb.footprint_radius;
                if ga.iter().zip(&gb).any(|(p, q)| (p.0 - q.0).hypot(p.1 - q.1) < rsum) {
                    n_coll += 1;
                }
            }
            let exp_ccr = n_coll as f64 / cfg.k_modalities as f64;
            if got.min_ade != exp_ade || got.min_fde != exp_fde || got.missed == hit || got.ccr != exp_ccr {
                ok = false;
                break 'scenes;
            }
        }
        results.push(CheckResult::new("oracle.metric_recomputation", ok, "100 seeded scenes, exact"));
    }

    // constructed CCR case: collisions in 3 of 6 modalities -> exactly 0.5
    {
        let cfg = RunConfig { k_modalities: 6, ..RunConfig::toy() };
        let t_n = 20;
        let fut: Vec<(f64, f64)> = (1..=t_n).map(|t| (t as f64, 0.0)).collect();
        let mk = |id: u64, fut: &[(f64, f64)]| AgentTrack {
            id,
            kind: AgentType::Vehicle,
            history: vec![HistoryState { x: 0.0, y: 0.0, vx: 0.0, vy: 0.0, heading: 0.0, valid: true }],
            future_gt: fut.iter().map(|&(x, y)| FutureState { x, y, valid: true }).collect(),
            footprint_radius: 1.0,
        };
        let off: Vec<(f64, f64)> = fut.iter().map(|p| (p.0, p.1 + 8.0)).collect();
        let scene = Scene {
            scene_id: "ccr-case".into(),
            agents: vec![mk(0, &fut), mk(1, &off)],
            roads: vec![],
            target_pair: (0, 1),
            rng_seed: 0,
        };
        let mut local = Vec::new();
        for k in 0..6 {
            let b: Vec<(f64, f64)> = if k < 3 {
                fut.iter().enumerate().map(|(i, p)| if i == 10 { (p.0, p.1 + 1.0) } else { (p.0, p.1 + 5.0) }).collect()
            } else {
                fut.iter().map(|p| (p.0, p.1 + 5.0)).collect()
            };
            local.push([fut.clone(), b]);
        }
        let pred = ScenePrediction {
            scene_id: scene.scene_id.clone(),
            agent_ids: [0, 1],
            frames: [Pose2D::identity(), Pose2D::identity()],
            local,
            joint_likelihood: vec![0.0; 6],
        };
        let m = scene_metrics(&pred, &scene, &cfg).expect("metrics");
        results.push(CheckResult::new(
            "oracle.ccr_constructed_case",
            m.ccr == 0.5,
            format!("3 of 6 colliding modalities -> ccr {}", m.ccr),
        ));
    }

    // top-S selection vs full sort
    {
        let grid = GridSpec { extent_x: 20.0, extent_y: 20.0, cell: 2.0 };
        let scores: Vec<f64> = (0..grid.cells()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let s = 17;
        let got = top_s(&scores, &grid, s);
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        let ok = got
            .iter()
            .zip(order.iter().take(s))
            .all(|(anc, &idx)| (anc.x, anc.y) == grid.center(idx) && anc.score == scores[idx]);
        results.push(CheckResult::new("oracle.top_s_sort", ok, "full-sort oracle, exact"));
    }

    results
}

/// 2D convex hull (gift wrapping) membership with tolerance: the point may
/// sit within `tol` outside any edge.
fn point_in_convex_hull(p: (f64, f64), pts: &[(f64, f64)], tol: f64) -> bool {
    if pts.len() < 3 {
        return pts.iter().any(|q| (q.0 - p.0).hypot(q.1 - p.1) <= tol)
            || (pts.len() == 2 && point_near_segment(p, pts[0], pts[1], tol));
    }
    let hull = convex_hull(pts);
    if hull.len() < 3 {
        return hull.iter().any(|q| (q.0 - p.0).hypot(q.1 - p.1) <= tol)
            || (hull.len() == 2 && point_near_segment(p, hull[0], hull[1], tol));
    }
    for i in 0..hull.len() {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
        let len = (b.0 - a.0).hypot(b.1 - a.1).max(1e-12);
        if cross / len < -tol {
            return false;
        }
    }
    true
}

fn point_near_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64), tol: f64) -> bool {
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let l2 = abx * abx + aby * aby;
    let t = if l2 == 0.0 { 0.0 } else { ((p.0 - a.0) * abx + (p.1 - a.1) * aby) / l2 }.clamp(0.0, 1.0);
    let (cx, cy) = (a.0 + t * abx, a.1 + t * aby);
    (p.0 - cx).hypot(p.1 - cy) <= tol
}

/// Counter-clockwise convex hull, Andrew's monotone chain.
fn convex_hull(pts: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut sorted: Vec<(f64, f64)> = pts.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted.dedup();
    if sorted.len() < 3 {
        return sorted;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &sorted {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in sorted.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}
