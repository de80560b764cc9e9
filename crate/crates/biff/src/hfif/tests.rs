use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::PolylineSet;
use crate::geom::RelPose;

use super::*;

fn rng_data(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn intention_self_attention_never_mixes_agents() {
    let d = 8;
    let s = 3;
    let mut ps = ParamSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let isa = SelfAttnParams::new(&mut ps, &mut rng, "t.isa", d);

    let agent1 = rng_data(&mut rng, s * d);
    let agent2 = rng_data(&mut rng, s * d);
    let blocks: Vec<(usize, usize)> = (0..2 * s).map(|r| if r < s { (0, s) } else { (s, s) }).collect();

    let run = |second: &[f64]| {
        let mut tape = Tape::new();
        let mut data = agent1.clone();
        data.extend_from_slice(second);
        let x = tape.leaf(data, &[2 * s, d], false).unwrap();
        let out = isa.apply(&mut tape, &ps, x, &blocks, 2).unwrap();
        tape.data(out)[..s * d].to_vec()
    };
    let base = run(&agent2);
    let zeroed = run(&vec![0.0; s * d]);
    assert_eq!(base, zeroed, "agent 1 rows must ignore agent 2 entirely");
}

#[test]
fn fuse_attends_over_exactly_the_counterpart_intentions() {
    let d = 8;
    let s = 4;
    let mut ps = ParamSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let fuse = FuseParams::new(&mut ps, &mut rng, "t.fuse", d);

    let mut tape = Tape::new();
    let content = tape.leaf(rng_data(&mut rng, s * d), &[s, d], false).unwrap();
    let embed = tape.leaf(rng_data(&mut rng, s * d), &[s, d], false).unwrap();
    let other = tape.leaf(rng_data(&mut rng, s * d), &[s, d], false).unwrap();
    let other_embed = tape.leaf(rng_data(&mut rng, s * d), &[s, d], false).unwrap();
    let rel = Tensor::new(RelPose { dx: 2.0, dy: -1.0, cos_dtheta: 1.0, sin_dtheta: 0.0 }.features().to_vec(), &[1, 4])
        .unwrap();
    let rid = tape.constant(&rel);
    let blocks = vec![(0usize, s); s];
    let out = fuse.apply(&mut tape, &ps, content, embed, other, other_embed, rid, &blocks, 2).unwrap();
    assert_eq!(tape.shape(out), &[s, d]);
}

#[test]
fn nearest_road_selection_matches_sort_oracle() {
    let mut frames = vec![Pose2D::new(0.0, 0.0, 0.3), Pose2D::new(5.0, 1.0, -0.2)];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..12 {
        frames.push(Pose2D::new(rng.gen_range(-40.0..40.0), rng.gen_range(-40.0..40.0), rng.gen_range(-3.0..3.0)));
    }
    let set = PolylineSet::from_parts(frames.clone(), 2, vec![0, 1]);
    let query = (3.0, 7.0);
    let l = 5;
    let rows = set.agents_and_nearest_roads(query, &frames[0], l);
    assert_eq!(&rows[..2], &[0, 1], "all agents lead the neighbor list");
    let mut oracle: Vec<(f64, usize)> = (2..frames.len())
        .map(|j| ((frames[j].x - query.0).hypot(frames[j].y - query.1), j))
        .collect();
    oracle.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let expect: Vec<usize> = oracle.iter().take(l).map(|o| o.1).collect();
    assert_eq!(&rows[2..], &expect[..]);

    // l covering every road returns them all
    let all = set.agents_and_nearest_roads(query, &frames[0], 100);
    assert_eq!(all.len(), frames.len());
}

#[cfg(test)]
mod goal_head_shapes {
    use super::*;

    #[test]
    fn heads_are_one_logit_per_intention() {
        let cfg = crate::config::RunConfig::toy();
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let hfif = HfifParams::new(&mut ps, &mut rng, &cfg);
        assert_eq!(hfif.goal_heads.len(), cfg.k_modalities);
        let mut tape = Tape::new();
        let feats = tape.leaf(vec![0.1; cfg.s_intentions * cfg.d_model], &[cfg.s_intentions, cfg.d_model], false).unwrap();
        let logits = hfif.goal_heads[0].apply(&mut tape, &ps, feats).unwrap();
        assert_eq!(tape.shape(logits), &[cfg.s_intentions, 1]);
    }
}
