use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::geom::RelPose;
use crate::tensor::Tensor;

use super::*;

fn rng_data(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn toy_layer(seed: u64) -> (ParamSet, LfbfLayerParams, RunConfig) {
    let cfg = RunConfig::toy();
    let mut ps = ParamSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layer = LfbfLayerParams::new(&mut ps, &mut rng, "t.l0", &cfg);
    (ps, layer, cfg)
}

#[test]
fn equal_trajectories_embed_identically() {
    let (ps, layer, cfg) = toy_layer(1);
    let t = cfg.t_future;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let traj = rng_data(&mut rng, 2 * t);

    let mut tape = Tape::new();
    let a = tape.leaf(traj.clone(), &[1, 2 * t], false).unwrap();
    let b = tape.leaf(traj, &[1, 2 * t], false).unwrap();
    let (qa, ea) = layer.embed_behavior(&mut tape, &ps, a, t).unwrap();
    let (qb, eb) = layer.embed_behavior(&mut tape, &ps, b, t).unwrap();
    assert_eq!(tape.data(qa), tape.data(qb));
    assert_eq!(tape.data(ea), tape.data(eb));
    assert_eq!(tape.shape(qa), &[1, cfg.d_model]);
    assert_eq!(tape.shape(ea), &[1, cfg.d_model]);

    // all-zero trajectory embeds deterministically
    let z1 = tape.leaf(vec![0.0; 2 * t], &[1, 2 * t], false).unwrap();
    let (qz1, _) = layer.embed_behavior(&mut tape, &ps, z1, t).unwrap();
    let mut tape2 = Tape::new();
    let z2 = tape2.leaf(vec![0.0; 2 * t], &[1, 2 * t], false).unwrap();
    let (qz2, _) = layer.embed_behavior(&mut tape2, &ps, z2, t).unwrap();
    assert_eq!(tape.data(qz1), tape2.data(qz2));
}

#[test]
fn step_reversal_changes_embedding_only_via_time_feature() {
    let (ps, layer, cfg) = toy_layer(3);
    let t = cfg.t_future;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let steps: Vec<Vec<f64>> = (0..t)
        .map(|_| vec![rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), 0.5])
        .collect();
    let mut reversed = steps.clone();
    reversed.reverse();

    // feed rows with a constant time feature directly through the PointNet
    let mut tape = Tape::new();
    let a = tape.constant(&Tensor::from_rows(&steps).unwrap());
    let b = tape.constant(&Tensor::from_rows(&reversed).unwrap());
    let ya = layer.behavior_enc.encode(&mut tape, &ps, a).unwrap();
    let yb = layer.behavior_enc.encode(&mut tape, &ps, b).unwrap();
    assert_eq!(tape.data(ya), tape.data(yb), "with equal time features the pool is order-free");

    // whereas the real embedding (ramping time) differs
    let flat: Vec<f64> = steps.iter().flat_map(|r| [r[0], r[1]]).collect();
    let flat_rev: Vec<f64> = reversed.iter().flat_map(|r| [r[0], r[1]]).collect();
    let ta = tape.leaf(flat, &[1, 2 * t], false).unwrap();
    let tb = tape.leaf(flat_rev, &[1, 2 * t], false).unwrap();
    let (ea, _) = layer.embed_behavior(&mut tape, &ps, ta, t).unwrap();
    let (eb, _) = layer.embed_behavior(&mut tape, &ps, tb, t).unwrap();
    assert_ne!(tape.data(ea), tape.data(eb));
}

#[test]
fn behavior_self_attention_stays_inside_each_agent() {
    let d = 8;
    let k = 3;
    let mut ps = ParamSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let bsa = crate::hfif::SelfAttnParams::new(&mut ps, &mut rng, "t.bsa", d);
    let agent1 = rng_data(&mut rng, k * d);
    let agent2 = rng_data(&mut rng, k * d);
    let blocks: Vec<(usize, usize)> = (0..2 * k).map(|r| if r < k { (0, k) } else { (k, k) }).collect();
    let run = |second: &[f64]| {
        let mut tape = Tape::new();
        let mut data = agent1.clone();
        data.extend_from_slice(second);
        let x = tape.leaf(data, &[2 * k, d], false).unwrap();
        let out = bsa.apply(&mut tape, &ps, x, &blocks, 2).unwrap();
        tape.data(out)[..k * d].to_vec()
    };
    assert_eq!(run(&agent2), run(&vec![0.0; k * d]));
}

#[test]
fn fuse_blocks_isolate_modalities() {
    let d = 8;
    let k_mod = 4;
    let mut ps = ParamSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let fuse = crate::hfif::FuseParams::new(&mut ps, &mut rng, "t.lbf", d);

    let content = rng_data(&mut rng, k_mod * d);
    let embed = rng_data(&mut rng, k_mod * d);
    let other = rng_data(&mut rng, k_mod * d);
    let other_embed = rng_data(&mut rng, k_mod * d);
    let rel = RelPose { dx: 1.0, dy: 0.5, cos_dtheta: 0.8, sin_dtheta: -0.6 };
    let blocks: Vec<(usize, usize)> = (0..k_mod).map(|k| (k, 1)).collect();

    let run = |other_data: &[f64]| {
        let mut tape = Tape::new();
        let c = tape.leaf(content.clone(), &[k_mod, d], false).unwrap();
        let e = tape.leaf(embed.clone(), &[k_mod, d], false).unwrap();
        let o = tape.leaf(other_data.to_vec(), &[k_mod, d], false).unwrap();
        let oe = tape.leaf(other_embed.clone(), &[k_mod, d], false).unwrap();
        let rt = Tensor::new(rel.features().to_vec(), &[1, 4]).unwrap();
        let rid = tape.constant(&rt);
        let out = fuse.apply(&mut tape, &ps, c, e, o, oe, rid, &blocks, 2).unwrap();
        tape.data(out).to_vec()
    };
    let base = run(&other);
    // perturb the counterpart's modality 2 only
    let mut perturbed = other.clone();
    for v in &mut perturbed[2 * d..3 * d] {
        *v += 10.0;
    }
    let probed = run(&perturbed);
    for k in 0..k_mod {
        let rows_equal = base[k * d..(k + 1) * d] == probed[k * d..(k + 1) * d];
        assert_eq!(rows_equal, k != 2, "only modality 2 may change (k={k})");
    }
}
