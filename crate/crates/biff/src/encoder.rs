//! Polyline feature extraction and the transformer encoder with relative
//! positional encoding.
//!
//! Every polyline is normalized to its own frame before encoding, so the
//! only cross-polyline geometry the network ever sees is the 4-feature
//! relative pose fed to the positional-encoding MLP. That is what makes the
//! encoder exactly invariant to rigid transforms of the global frame.

use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::geom::{rel_pose, to_frame, vector_to_frame, wrap_angle, Pose2D};
use crate::nn::{mat, residual_ln, Lin, LnParams, Mlp};
use crate::scene::Scene;
use crate::scene::{AgentTrack, RoadPolyline};
use crate::tensor::{ParamId, ParamSet, Tape, Tensor, TensorError, TensorId};

/// Per-step agent features: local x, y, vx, vy, cos h, sin h, one-hot type,
/// validity, normalized time index.
pub const AGENT_FEATURES: usize = 11;
/// Per-point road features: local x, y, cos dir, sin dir, one-hot type.
pub const ROAD_FEATURES: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolylineKind {
    Agent,
    Road,
}

type NeighborKey = (i64, i64, i64, i64, i64, u8, usize);

/// Snap a geometric quantity to a 1e-6 grid so floating-point noise from a
/// global rigid transform cannot reorder neighbor candidates.
fn quant(v: f64) -> i64 {
    (v / 1e-6).round() as i64
}

/// Row-aligned frames and kinds for every polyline of a scene. Rows are
/// agents sorted by id followed by roads in input order.
#[derive(Debug, Clone)]
pub struct PolylineSet {
    pub frames: Vec<Pose2D>,
    pub kinds: Vec<PolylineKind>,
    pub n_agents: usize,
    pub agent_ids: Vec<u64>,
    /// Tie-break rank per row, independent of road input order: agents rank
    /// by id, roads by (center x, center y, input index) after the agents.
    rank_of_row: Vec<usize>,
}

impl PolylineSet {
    pub fn from_scene(scene: &Scene) -> PolylineSet {
        let mut agent_order: Vec<usize> = (0..scene.agents.len()).collect();
        agent_order.sort_by_key(|&i| scene.agents[i].id);
        let n_agents = agent_order.len();

        let mut frames = Vec::with_capacity(n_agents + scene.roads.len());
        let mut kinds = Vec::with_capacity(frames.capacity());
        let mut agent_ids = Vec::with_capacity(n_agents);
        for &i in &agent_order {
            frames.push(scene.agents[i].frame());
            kinds.push(PolylineKind::Agent);
            agent_ids.push(scene.agents[i].id);
        }
        for r in &scene.roads {
            frames.push(r.frame());
            kinds.push(PolylineKind::Road);
        }

        // canonical road ranks by center coordinates
        let mut road_rows: Vec<usize> = (n_agents..frames.len()).collect();
        road_rows.sort_by(|&a, &b| {
            let (fa, fb) = (&frames[a], &frames[b]);
            fa.x.partial_cmp(&fb.x)
                .unwrap()
                .then(fa.y.partial_cmp(&fb.y).unwrap())
                .then(a.cmp(&b))
        });
        let mut rank_of_row = vec![0usize; frames.len()];
        for (rank, row) in (0..n_agents).chain(road_rows).enumerate() {
            rank_of_row[row] = rank;
        }
        PolylineSet { frames, kinds, n_agents, agent_ids, rank_of_row }
    }

    /// Assemble a set directly from frames (agents first). Used by the
    /// decoders when probing attention structure without a full scene.
    pub fn from_parts(frames: Vec<Pose2D>, n_agents: usize, agent_ids: Vec<u64>) -> PolylineSet {
        let mut kinds = vec![PolylineKind::Agent; n_agents];
        kinds.extend(vec![PolylineKind::Road; frames.len() - n_agents]);
        let mut road_rows: Vec<usize> = (n_agents..frames.len()).collect();
        road_rows.sort_by(|&a, &b| {
            let (fa, fb) = (&frames[a], &frames[b]);
            fa.x.partial_cmp(&fb.x)
                .unwrap()
                .then(fa.y.partial_cmp(&fb.y).unwrap())
                .then(a.cmp(&b))
        });
        let mut rank_of_row = vec![0usize; frames.len()];
        for (rank, row) in (0..n_agents).chain(road_rows).enumerate() {
            rank_of_row[row] = rank;
        }
        PolylineSet { frames, kinds, n_agents, agent_ids, rank_of_row }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn row_of_agent(&self, id: u64) -> Option<usize> {
        self.agent_ids.iter().position(|&a| a == id)
    }

    pub fn road_rows(&self) -> std::ops::Range<usize> {
        self.n_agents..self.len()
    }

    /// k nearest polylines per row (self included). Candidates sort on a
    /// quantized, transform-invariant key: distance first, then the relative
    /// pose of the candidate in the query frame, so exact ties (e.g. the
    /// chunk ahead vs the chunk behind on the same lane) resolve identically
    /// in every global frame. Returns the flattened neighbor rows and
    /// per-query (start, len) blocks.
    pub fn knn(&self, k: usize) -> (Vec<usize>, Vec<(usize, usize)>) {
        let n = self.len();
        let k = k.min(n);
        let mut flat = Vec::with_capacity(n * k);
        let mut blocks = Vec::with_capacity(n);
        for i in 0..n {
            let mut cand: Vec<(NeighborKey, usize)> = (0..n)
                .map(|j| {
                    let rel = rel_pose(&self.frames[i], &self.frames[j]);
                    (self.neighbor_key(rel.dx, rel.dy, rel.cos_dtheta, rel.sin_dtheta, j), j)
                })
                .collect();
            cand.sort_by_key(|c| c.0);
            blocks.push((flat.len(), k));
            flat.extend(cand.iter().take(k).map(|c| c.1));
        }
        (flat, blocks)
    }

    /// All agent rows followed by the `l` road rows whose centers are
    /// closest to `point` (global coordinates). `frame` supplies the
    /// rotation used to make tie-breaking transform-invariant; pass the
    /// querying agent's frame.
    pub fn agents_and_nearest_roads(&self, point: (f64, f64), frame: &Pose2D, l: usize) -> Vec<usize> {
        let mut rows: Vec<usize> = (0..self.n_agents).collect();
        let rot = Pose2D::new(point.0, point.1, frame.theta);
        let mut roads: Vec<(NeighborKey, usize)> = self
            .road_rows()
            .map(|j| {
                let (dx, dy) = to_frame((self.frames[j].x, self.frames[j].y), &rot);
                let dth = wrap_angle(self.frames[j].theta - frame.theta);
                (self.neighbor_key(dx, dy, dth.cos(), dth.sin(), j), j)
            })
            .collect();
        roads.sort_by_key(|c| c.0);
        rows.extend(roads.iter().take(l).map(|c| c.1));
        rows
    }

    fn neighbor_key(&self, dx: f64, dy: f64, cos: f64, sin: f64, row: usize) -> NeighborKey {
        let d = dx.hypot(dy);
        (quant(d), quant(dx), quant(dy), quant(cos), quant(sin), self.kinds[row] as u8, self.rank_of_row[row])
    }
}

/// Per-step features of an agent track, normalized to the track's own frame.
/// Invalid steps contribute zeros for every geometric feature so the values
/// carry no global-frame information.
pub fn agent_step_rows(track: &AgentTrack) -> Tensor {
    let frame = track.frame();
    let th = track.history.len();
    let denom = (th.max(2) - 1) as f64;
    let mut data = Vec::with_capacity(th * AGENT_FEATURES);
    for (k, s) in track.history.iter().enumerate() {
        if s.valid {
            let (lx, ly) = to_frame((s.x, s.y), &frame);
            let (lvx, lvy) = vector_to_frame((s.vx, s.vy), &frame);
            let lh = wrap_angle(s.heading - frame.theta);
            data.extend_from_slice(&[lx, ly, lvx, lvy, lh.cos(), lh.sin()]);
        } else {
            data.extend_from_slice(&[0.0; 6]);
        }
        data.extend_from_slice(&track.kind.one_hot());
        data.push(if s.valid { 1.0 } else { 0.0 });
        data.push(k as f64 / denom);
    }
    Tensor::new(data, &[th, AGENT_FEATURES]).expect("agent feature shape")
}

/// Per-point features of a road polyline, normalized to its center frame.
pub fn road_point_rows(poly: &RoadPolyline) -> Tensor {
    let frame = poly.frame();
    let n = poly.points().len();
    let mut data = Vec::with_capacity(n * ROAD_FEATURES);
    for p in poly.points() {
        let (lx, ly) = to_frame((p.x, p.y), &frame);
        let ld = wrap_angle(p.direction - frame.theta);
        data.extend_from_slice(&[lx, ly, ld.cos(), ld.sin()]);
        data.extend_from_slice(&p.kind.one_hot());
    }
    Tensor::new(data, &[n, ROAD_FEATURES]).expect("road feature shape")
}

/// PointNet-style polyline encoder: per-row MLP, max pool, project to d.
#[derive(Debug, Clone)]
pub struct PolylineEncParams {
    pub mlp: Mlp,
    pub proj: Lin,
}

impl PolylineEncParams {
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        hidden: usize,
        n_layers: usize,
        d: usize,
    ) -> Self {
        let mut dims = vec![in_dim];
        dims.extend(std::iter::repeat_n(hidden, n_layers));
        PolylineEncParams {
            mlp: Mlp::new(ps, rng, &format!("{name}.mlp"), &dims, true),
            proj: Lin::new(ps, rng, &format!("{name}.proj"), hidden, d),
        }
    }

    /// rows [n, in] -> pooled, projected feature [1, d].
    pub fn encode(&self, tape: &mut Tape, ps: &ParamSet, rows: TensorId) -> Result<TensorId, TensorError> {
        let h = self.mlp.apply(tape, ps, rows)?;
        let pooled = tape.max_pool_rows(h)?;
        let hidden = tape.numel(pooled);
        let pooled = tape.reshape(pooled, &[1, hidden])?;
        self.proj.apply(tape, ps, pooled)
    }
}

/// One encoder layer: local attention over k nearest polylines with relative
/// positional encoding on the keys, then the usual residual/norm/FFN wrap.
#[derive(Debug, Clone)]
pub struct EncoderLayerParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub pos_mlp: Mlp,
    pub wpos: ParamId,
    pub ln1: LnParams,
    pub ffn: Mlp,
    pub ln2: LnParams,
}

impl EncoderLayerParams {
    pub fn new(ps: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, d: usize) -> Self {
        EncoderLayerParams {
            wq: mat(ps, rng, &format!("{name}.wq"), d, d),
            wk: mat(ps, rng, &format!("{name}.wk"), d, d),
            wv: mat(ps, rng, &format!("{name}.wv"), d, d),
            wo: mat(ps, rng, &format!("{name}.wo"), d, d),
            pos_mlp: Mlp::new(ps, rng, &format!("{name}.pos"), &[4, d, d], false),
            wpos: mat(ps, rng, &format!("{name}.wpos"), d, d),
            ln1: LnParams::new(ps, &format!("{name}.ln1"), d),
            ffn: Mlp::new(ps, rng, &format!("{name}.ffn"), &[d, 4 * d, d], false),
            ln2: LnParams::new(ps, &format!("{name}.ln2"), d),
        }
    }

    /// Returns the updated features and the attention node (for probes).
    #[allow(clippy::too_many_arguments)]
    pub fn apply(
        &self,
        tape: &mut Tape,
        ps: &ParamSet,
        h: TensorId,
        flat_idx: &[usize],
        blocks: &[(usize, usize)],
        relposes: TensorId,
        n_heads: usize,
    ) -> Result<(TensorId, TensorId), TensorError> {
        let wq = tape.param(ps, self.wq);
        let wk = tape.param(ps, self.wk);
        let wv = tape.param(ps, self.wv);
        let wo = tape.param(ps, self.wo);
        let wpos = tape.param(ps, self.wpos);

        let q = tape.matmul(h, wq)?;
        let gathered = tape.gather_rows(h, flat_idx)?;
        let kc = tape.matmul(gathered, wk)?;
        let pos = self.pos_mlp.apply(tape, ps, relposes)?;
        let posp = tape.matmul(pos, wpos)?;
        let k = tape.add(kc, posp)?;
        let v = tape.matmul(gathered, wv)?;
        let attn = tape.block_attention(q, k, v, blocks, n_heads)?;
        let o = tape.matmul(attn, wo)?;
        let h1 = residual_ln(tape, ps, h, o, &self.ln1)?;
        let f = self.ffn.apply(tape, ps, h1)?;
        let h2 = residual_ln(tape, ps, h1, f, &self.ln2)?;
        Ok((h2, attn))
    }
}

/// The full scene encoder: polyline encoders plus stacked attention layers
/// with unshared weights.
#[derive(Debug, Clone)]
pub struct SceneEncoderParams {
    pub agent_enc: PolylineEncParams,
    pub road_enc: PolylineEncParams,
    pub layers: Vec<EncoderLayerParams>,
}

#[derive(Debug)]
pub struct EncodedScene {
    /// Final polyline features, rows aligned with `set`.
    pub features: TensorId,
    pub set: PolylineSet,
    /// Feature rows of the two target agents, in target_pair order.
    pub target_rows: [usize; 2],
}

impl SceneEncoderParams {
    pub fn new(ps: &mut ParamSet, rng: &mut ChaCha8Rng, cfg: &RunConfig) -> Self {
        SceneEncoderParams {
            agent_enc: PolylineEncParams::new(ps, rng, "enc.agent", AGENT_FEATURES, cfg.agent_mlp_dim, 3, cfg.d_model),
            road_enc: PolylineEncParams::new(ps, rng, "enc.road", ROAD_FEATURES, cfg.road_mlp_dim, 5, cfg.d_model),
            layers: (0..cfg.n_enc).map(|i| EncoderLayerParams::new(ps, rng, &format!("enc.l{i}"), cfg.d_model)).collect(),
        }
    }

    pub fn encode_scene(
        &self,
        tape: &mut Tape,
        ps: &ParamSet,
        scene: &Scene,
        cfg: &RunConfig,
    ) -> Result<EncodedScene, TensorError> {
        let set = PolylineSet::from_scene(scene);
        let mut per_polyline = Vec::with_capacity(set.len());
        let mut agent_order: Vec<&AgentTrack> = scene.agents.iter().collect();
        agent_order.sort_by_key(|t| t.id);
        for track in agent_order {
            let rows = agent_step_rows(track);
            let rid = tape.constant(&rows);
            per_polyline.push(self.agent_enc.encode(tape, ps, rid)?);
        }
        for road in &scene.roads {
            let rows = road_point_rows(road);
            let rid = tape.constant(&rows);
            per_polyline.push(self.road_enc.encode(tape, ps, rid)?);
        }
        let mut h = tape.concat_rows(&per_polyline)?;

        let (flat, blocks) = set.knn(cfg.k_neighbors);
        let mut rel = Vec::with_capacity(flat.len() * 4);
        for (i, &(start, len)) in blocks.iter().enumerate() {
            for &j in &flat[start..start + len] {
                rel.extend_from_slice(&rel_pose(&set.frames[i], &set.frames[j]).features());
            }
        }
        let rel = Tensor::new(rel, &[flat.len(), 4]).expect("relpose shape");
        let relposes = tape.constant(&rel);

        for layer in &self.layers {
            let (next, _) = layer.apply(tape, ps, h, &flat, &blocks, relposes, cfg.n_heads)?;
            h = next;
        }

        let target_rows = [
            set.row_of_agent(scene.target_pair.0).expect("validated scene has target rows"),
            set.row_of_agent(scene.target_pair.1).expect("validated scene has target rows"),
        ];
        Ok(EncodedScene { features: h, set, target_rows })
    }
}
