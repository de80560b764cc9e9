//! High-level future intentions fusion: a transformer decoder over static
//! intention queries (the conditional anchors), with self-attention inside
//! each agent, decoupled cross-attention into the scene polylines, and
//! cross-agent fusion over all of the other agents' intentions. A K-header
//! goal decoder turns the fused intention features into scene-consistent
//! goals, completed into full trajectories by an MLP.

use rand_chacha::ChaCha8Rng;

use crate::anchors::IntentionSet;
use crate::config::RunConfig;
use crate::encoder::EncodedScene;
use crate::geom::{from_frame, rel_pose, to_frame, Pose2D};
use crate::nn::{mat, residual_ln, Lin, LnParams, Mlp};
use crate::tensor::{ParamId, ParamSet, Tape, Tensor, TensorError, TensorId};

/// Interleave two matrices column-wise per head: row i becomes
/// `[a_h0, b_h0, a_h1, b_h1, ...]`, so that contiguous-chunk multi-head
/// attention pairs the matching head slices of both halves. The inner
/// product of two such rows is the decoupled sum `a.a' + b.b'` per head.
pub fn headwise_concat(
    tape: &mut Tape,
    a: TensorId,
    b: TensorId,
    n_heads: usize,
) -> Result<TensorId, TensorError> {
    let (n, da) = (tape.shape(a)[0], tape.shape(a)[1]);
    let db = tape.shape(b)[1];
    debug_assert!(da.is_multiple_of(n_heads) && db.is_multiple_of(n_heads));
    let ar = tape.reshape(a, &[n * n_heads, da / n_heads])?;
    let br = tape.reshape(b, &[n * n_heads, db / n_heads])?;
    let cat = tape.concat_cols(ar, br)?;
    tape.reshape(cat, &[n, da + db])
}

/// Multi-head self attention restricted to blocks of rows, with the usual
/// residual + layer norm.
#[derive(Debug, Clone)]
pub struct SelfAttnParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub ln: LnParams,
}

impl SelfAttnParams {
    pub fn new(ps: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, d: usize) -> Self {
        SelfAttnParams {
            wq: mat(ps, rng, &format!("{name}.wq"), d, d),
            wk: mat(ps, rng, &format!("{name}.wk"), d, d),
            wv: mat(ps, rng, &format!("{name}.wv"), d, d),
            wo: mat(ps, rng, &format!("{name}.wo"), d, d),
            ln: LnParams::new(ps, &format!("{name}.ln"), d),
        }
    }

    /// Each query row attends to the rows of its own (start, len) block.
    pub fn apply(
        &self,
        tape: &mut Tape,
        ps: &ParamSet,
        x: TensorId,
        blocks: &[(usize, usize)],
        n_heads: usize,
    ) -> Result<TensorId, TensorError> {
        let wq = tape.param(ps, self.wq);
        let wk = tape.param(ps, self.wk);
        let wv = tape.param(ps, self.wv);
        let wo = tape.param(ps, self.wo);
        let q = tape.matmul(x, wq)?;
        let k = tape.matmul(x, wk)?;
        let v = tape.matmul(x, wv)?;
        let attn = tape.block_attention(q, k, v, blocks, n_heads)?;
        let o = tape.matmul(attn, wo)?;
        residual_ln(tape, ps, x, o, &self.ln)
    }
}

/// Decoupled cross-attention into the encoded polylines (Eq. 4 / Eq. 6
/// shape): the query is `[W_q content, W_qe embed]`, the key is
/// `[W_k h_j, W_pos p_ij]`, and agents and roads have separate projection
/// groups.
#[derive(Debug, Clone)]
pub struct CrossAttnParams {
    pub wq: ParamId,
    pub wqe: ParamId,
    pub wk_agent: ParamId,
    pub wv_agent: ParamId,
    pub wpos_agent: ParamId,
    pub wk_road: ParamId,
    pub wv_road: ParamId,
    pub wpos_road: ParamId,
    pub pos_mlp: Mlp,
    pub wo: ParamId,
    pub ln: LnParams,
}

impl CrossAttnParams {
    pub fn new(ps: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, d: usize) -> Self {
        CrossAttnParams {
            wq: mat(ps, rng, &format!("{name}.wq"), d, d),
            wqe: mat(ps, rng, &format!("{name}.wqe"), d, d),
            wk_agent: mat(ps, rng, &format!("{name}.wka"), d, d),
            wv_agent: mat(ps, rng, &format!("{name}.wva"), d, d),
            wpos_agent: mat(ps, rng, &format!("{name}.wpa"), d, d),
            wk_road: mat(ps, rng, &format!("{name}.wkr"), d, d),
            wv_road: mat(ps, rng, &format!("{name}.wvr"), d, d),
            wpos_road: mat(ps, rng, &format!("{name}.wpr"), d, d),
            pos_mlp: Mlp::new(ps, rng, &format!("{name}.pos"), &[4, d, d], false),
            wo: mat(ps, rng, &format!("{name}.wo"), d, d),
            ln: LnParams::new(ps, &format!("{name}.ln"), d),
        }
    }

    /// Concatenated key `[W_k h_j, W_pos p_ij]` and value `W_v h_j` for
    /// every polyline, seen from one target agent. `relposes` is the
    /// constant `[P, 4]` relative pose of each polyline in the agent frame.
    pub fn keys_values(
        &self,
        tape: &mut Tape,
        ps: &ParamSet,
        features: TensorId,
        n_agents: usize,
        relposes: TensorId,
        n_heads: usize,
    ) -> Result<(TensorId, TensorId), TensorError> {
        let p = tape.shape(features)[0];
        let n_roads = p - n_agents;
        let pos = self.pos_mlp.apply(tape, ps, relposes)?;

        let wka = tape.param(ps, self.wk_agent);
        let wva = tape.param(ps, self.wv_agent);
        let wpa = tape.param(ps, self.wpos_agent);

        let h_agents = tape.slice_rows(features, 0, n_agents)?;
        let pos_agents = tape.slice_rows(pos, 0, n_agents)?;
        let ka_core = tape.matmul(h_agents, wka)?;
        let ka_pos = tape.matmul(pos_agents, wpa)?;
        let ka = headwise_concat(tape, ka_core, ka_pos, n_heads)?;
        let va = tape.matmul(h_agents, wva)?;

        if n_roads == 0 {
            return Ok((ka, va));
        }
        let wkr = tape.param(ps, self.wk_road);
        let wvr = tape.param(ps, self.wv_road);
        let wpr = tape.param(ps, self.wpos_road);
        let h_roads = tape.slice_rows(features, n_agents, n_roads)?;
        let pos_roads = tape.slice_rows(pos, n_agents, n_roads)?;
        let kr_core = tape.matmul(h_roads, wkr)?;
        let kr_pos = tape.matmul(pos_roads, wpr)?;
        let kr = headwise_concat(tape, kr_core, kr_pos, n_heads)?;
        let vr = tape.matmul(h_roads, wvr)?;
        Ok((tape.concat_rows(&[ka, kr])?, tape.concat_rows(&[va, vr])?))
    }

    /// Attend `content`/`embed` query rows over per-query selections
    /// (`flat`/`blocks`) of the assembled key/value matrices.
    #[allow(clippy::too_many_arguments)]
    pub fn apply(
        &self,
        tape: &mut Tape,
        ps: &ParamSet,
        content: TensorId,
        embed: TensorId,
        keys: TensorId,
        values: TensorId,
        flat: &[usize],
        blocks: &[(usize, usize)],
        n_heads: usize,
    ) -> Result<TensorId, TensorError> {
        let wq = tape.param(ps, self.wq);
        let wqe = tape.param(ps, self.wqe);
        let qc = tape.matmul(content, wq)?;
        let qe = tape.matmul(embed, wqe)?;
        let q = headwise_concat(tape, qc, qe, n_heads)?;
        let k_sel = tape.gather_rows(keys, flat)?;
        let v_sel = tape.gather_rows(values, flat)?;
        let attn = tape.block_attention(q, k_sel, v_sel, blocks, n_heads)?;
        let wo = tape.param(ps, self.wo);
        let o = tape.matmul(attn, wo)?;
        residual_ln(tape, ps, content, o, &self.ln)
    }
}

/// Cross-agent fusion (Eq. 5 / Eq. 7 shape): the key is
/// `[W_k h_j + W_pos p_ij, W_ke e_j]` where e_j is the counterpart's
/// embedding recomputed in the querying agent's frame.
#[derive(Debug, Clone)]
pub struct FuseParams {
    pub wq: ParamId,
    pub wqe: ParamId,
    pub wk: ParamId,
    pub wke: ParamId,
    pub wv: ParamId,
    pub wpos: ParamId,
    pub pos_mlp: Mlp,
    pub wo: ParamId,
    pub ln: LnParams,
}

impl FuseParams {
    pub fn new(ps: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, d: usize) -> Self {
        FuseParams {
            wq: mat(ps, rng, &format!("{name}.wq"), d, d),
            wqe: mat(ps, rng, &format!("{name}.wqe"), d, d),
            wk: mat(ps, rng, &format!("{name}.wk"), d, d),
            wke: mat(ps, rng, &format!("{name}.wke"), d, d),
            wv: mat(ps, rng, &format!("{name}.wv"), d, d),
            wpos: mat(ps, rng, &format!("{name}.wpos"), d, d),
            pos_mlp: Mlp::new(ps, rng, &format!("{name}.pos"), &[4, d, d], false),
            wo: mat(ps, rng, &format!("{name}.wo"), d, d),
            ln: LnParams::new(ps, &format!("{name}.ln"), d),
        }
    }

    /// Fuse queries of one agent over key/value rows from another agent.
    ///
    /// `content`/`embed` are the querying agent's rows; `other`/`other_embed`
    /// the counterpart's content and its re-normalized embedding; `rel` the
    /// counterpart frame expressed in the querying agent's frame; `blocks`
    /// then selects which key rows each query sees.
    #[allow(clippy::too_many_arguments)]
    pub fn apply(
        &self,
        tape: &mut Tape,
        ps: &ParamSet,
        content: TensorId,
        embed: TensorId,
        other: TensorId,
        other_embed: TensorId,
        rel: TensorId,
        blocks: &[(usize, usize)],
        n_heads: usize,
    ) -> Result<TensorId, TensorError> {
        let wq = tape.param(ps, self.wq);
        let wqe = tape.param(ps, self.wqe);
        let qc = tape.matmul(content, wq)?;
        let qe = tape.matmul(embed, wqe)?;
        let q = headwise_concat(tape, qc, qe, n_heads)?;

        let wk = tape.param(ps, self.wk);
        let wke = tape.param(ps, self.wke);
        let wv = tape.param(ps, self.wv);
        let wpos = tape.param(ps, self.wpos);
        let pos = self.pos_mlp.apply(tape, ps, rel)?;
        let posp = tape.matmul(pos, wpos)?;
        let pos_vec = tape.reshape(posp, &[tape.numel(posp)])?;
        let k_core = tape.matmul(other, wk)?;
        let k_core = tape.add_bias(k_core, pos_vec)?;
        let k_emb = tape.matmul(other_embed, wke)?;
        let k = headwise_concat(tape, k_core, k_emb, n_heads)?;
        let v = tape.matmul(other, wv)?;

        let attn = tape.block_attention(q, k, v, blocks, n_heads)?;
        let wo = tape.param(ps, self.wo);
        let o = tape.matmul(attn, wo)?;
        residual_ln(tape, ps, content, o, &self.ln)
    }
}

/// One HFIF decoder layer.
#[derive(Debug, Clone)]
pub struct HfifLayerParams {
    pub intent_embed: Mlp,
    pub isa: SelfAttnParams,
    pub ica: CrossAttnParams,
    pub fuse: FuseParams,
    pub ffn: Mlp,
    pub ln_ffn: LnParams,
}

impl HfifLayerParams {
    pub fn new(ps: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, d: usize, anchor_feats: usize) -> Self {
        HfifLayerParams {
            intent_embed: Mlp::new(ps, rng, &format!("{name}.emb"), &[anchor_feats, d, d], false),
            isa: SelfAttnParams::new(ps, rng, &format!("{name}.isa"), d),
            ica: CrossAttnParams::new(ps, rng, &format!("{name}.ica"), d),
            fuse: FuseParams::new(ps, rng, &format!("{name}.hif"), d),
            ffn: Mlp::new(ps, rng, &format!("{name}.ffn"), &[d, 4 * d, d], false),
            ln_ffn: LnParams::new(ps, &format!("{name}.lnf"), d),
        }
    }
}

/// The full HFIF decoder: layers, K goal headers, trajectory completion.
#[derive(Debug, Clone)]
pub struct HfifParams {
    pub layers: Vec<HfifLayerParams>,
    /// K kernel-size-1 convolution headers over the S axis: one shared
    /// linear per header applied to every intention feature.
    pub goal_heads: Vec<Lin>,
    pub completion: Mlp,
}

impl HfifParams {
    pub fn new(ps: &mut ParamSet, rng: &mut ChaCha8Rng, cfg: &RunConfig) -> Self {
        let d = cfg.d_model;
        let anchor_feats = if cfg.use_anchor_scores { 3 } else { 2 };
        HfifParams {
            layers: (0..cfg.n_hfif)
                .map(|i| HfifLayerParams::new(ps, rng, &format!("hfif.l{i}"), d, anchor_feats))
                .collect(),
            goal_heads: (0..cfg.k_modalities).map(|k| Lin::new(ps, rng, &format!("hfif.head{k}"), d, 1)).collect(),
            completion: Mlp::new(
                ps,
                rng,
                "hfif.complete",
                &[2 + d, cfg.completion_mlp_dim, cfg.completion_mlp_dim, 2 * cfg.t_future],
                false,
            ),
        }
    }
}

/// Inputs shared by every HFIF layer for one scene.
pub struct HfifScene<'a> {
    pub encoded: &'a EncodedScene,
    pub target_frames: [Pose2D; 2],
    /// Anchor positions in each target's own frame.
    pub anchors_local: [Vec<(f64, f64)>; 2],
    /// Anchor positions in the global frame (for road selection).
    pub anchors_global: [Vec<(f64, f64)>; 2],
    /// `[S, feats]` anchor features in the agent's own frame.
    pub anchor_feats_self: [TensorId; 2],
    /// `[S, feats]` features of agent j's anchors in agent i's frame,
    /// indexed `[i][j]`.
    pub anchor_feats_cross: [[Option<TensorId>; 2]; 2],
    /// `[S, 2]` anchor coordinates for the goal weighted sum.
    pub anchor_coords: [TensorId; 2],
    /// `[P, 4]` relative pose of every polyline in each target frame.
    pub rel_polylines: [TensorId; 2],
    /// Relative pose features of target j in target i's frame, `[1, 4]`.
    pub rel_pair: [[Option<TensorId>; 2]; 2],
}

impl<'a> HfifScene<'a> {
    pub fn build(
        tape: &mut Tape,
        encoded: &'a EncodedScene,
        intentions: &[IntentionSet; 2],
        cfg: &RunConfig,
    ) -> Result<Self, TensorError> {
        let set = &encoded.set;
        let target_frames = [set.frames[encoded.target_rows[0]], set.frames[encoded.target_rows[1]]];
        let with_scores = cfg.use_anchor_scores;

        let mut anchors_local: [Vec<(f64, f64)>; 2] = [vec![], vec![]];
        let mut anchors_global: [Vec<(f64, f64)>; 2] = [vec![], vec![]];
        let mut feats_self = Vec::with_capacity(2);
        let mut coords = Vec::with_capacity(2);
        for a in 0..2 {
            let frame = &target_frames[a];
            let mut feat_rows = Vec::new();
            let mut coord_rows = Vec::new();
            for anc in &intentions[a].anchors {
                anchors_local[a].push((anc.x, anc.y));
                anchors_global[a].push(from_frame((anc.x, anc.y), frame));
                feat_rows.push(if with_scores { vec![anc.x, anc.y, anc.score] } else { vec![anc.x, anc.y] });
                coord_rows.push(vec![anc.x, anc.y]);
            }
            let feats = Tensor::from_rows(&feat_rows)?;
            feats_self.push(tape.constant(&feats));
            let coords_t = Tensor::from_rows(&coord_rows)?;
            coords.push(tape.constant(&coords_t));
        }

        let mut cross: [[Option<TensorId>; 2]; 2] = [[None, None], [None, None]];
        let mut rel_pair: [[Option<TensorId>; 2]; 2] = [[None, None], [None, None]];
        for i in 0..2 {
            for j in 0..2 {
                if i == j {
                    continue;
                }
                let mut rows = Vec::new();
                for (g, anc) in anchors_global[j].iter().zip(&intentions[j].anchors) {
                    let l = to_frame(*g, &target_frames[i]);
                    rows.push(if with_scores { vec![l.0, l.1, anc.score] } else { vec![l.0, l.1] });
                }
                let t = Tensor::from_rows(&rows)?;
                cross[i][j] = Some(tape.constant(&t));
                let rp = rel_pose(&target_frames[i], &target_frames[j]);
                let rt = Tensor::new(rp.features().to_vec(), &[1, 4])?;
                rel_pair[i][j] = Some(tape.constant(&rt));
            }
        }

        let mut rels = Vec::with_capacity(2);
        for frame in &target_frames {
            let mut rows = Vec::with_capacity(set.len() * 4);
            for f in &set.frames {
                rows.extend_from_slice(&rel_pose(frame, f).features());
            }
            let t = Tensor::new(rows, &[set.len(), 4])?;
            rels.push(tape.constant(&t));
        }

        Ok(HfifScene {
            encoded,
            target_frames,
            anchors_local,
            anchors_global,
            anchor_feats_self: [feats_self[0], feats_self[1]],
            anchor_feats_cross: cross,
            anchor_coords: [coords[0], coords[1]],
            rel_polylines: [rels[0], rels[1]],
            rel_pair,
        })
    }
}

/// HFIF forward products: per-(k, a) assignment scores and goals plus the
/// completed trajectories that initialize LFBF.
pub struct HfifOutput {
    /// gamma[k][a]: `[1, S]` softmax scores over the anchors.
    pub gamma: Vec<Vec<TensorId>>,
    /// goals[k][a]: `[1, 2]` weighted anchor sum, agent frame.
    pub goals: Vec<Vec<TensorId>>,
    /// `[A*K, T*2]` completed trajectories, rows in (agent, modality) order.
    pub trajectories: TensorId,
    /// Final per-agent intention features `[S, d]`.
    pub intention_features: [TensorId; 2],
}

impl HfifParams {
    /// Run the full HFIF decoder for one scene.
    #[allow(clippy::needless_range_loop)]
    pub fn forward(
        &self,
        tape: &mut Tape,
        ps: &ParamSet,
        scene: &HfifScene,
        cfg: &RunConfig,
    ) -> Result<HfifOutput, TensorError> {
        let s = cfg.s_intentions;
        let n_heads = cfg.n_heads;
        let features = scene.encoded.features;
        let n_agents = scene.encoded.set.n_agents;

        // content per target agent, [S, d]
        let mut content: Vec<TensorId> = (0..2)
            .map(|a| tape.gather_rows(features, &vec![scene.encoded.target_rows[a]; s]))
            .collect::<Result<_, _>>()?;

        for layer in &self.layers {
            // static intention embeddings for this layer
            let e_self: Vec<TensorId> = (0..2)
                .map(|a| layer.intent_embed.apply(tape, ps, scene.anchor_feats_self[a]))
                .collect::<Result<_, _>>()?;

            // queries carry content + intention embedding in all layers
            let c: Vec<TensorId> =
                (0..2).map(|a| tape.add(content[a], e_self[a])).collect::<Result<_, _>>()?;

            // I_SA within each agent: batch both agents with per-agent blocks
            let both = tape.concat_rows(&[c[0], c[1]])?;
            let mut blocks = Vec::with_capacity(2 * s);
            for a in 0..2 {
                blocks.extend(std::iter::repeat_n((a * s, s), s));
            }
            let h_isa_all = layer.isa.apply(tape, ps, both, &blocks, n_heads)?;
            let h_isa = [tape.slice_rows(h_isa_all, 0, s)?, tape.slice_rows(h_isa_all, s, s)?];

            // I_CA into the scene polylines
            let mut h_ica = Vec::with_capacity(2);
            for a in 0..2 {
                let (keys, values) =
                    layer.ica.keys_values(tape, ps, features, n_agents, scene.rel_polylines[a], n_heads)?;
                let mut flat = Vec::new();
                let mut qblocks = Vec::with_capacity(s);
                for point in &scene.anchors_global[a] {
                    let rows = scene.encoded.set.agents_and_nearest_roads(
                        *point,
                        &scene.target_frames[a],
                        cfg.l_roads,
                    );
                    qblocks.push((flat.len(), rows.len()));
                    flat.extend(rows);
                }
                h_ica.push(layer.ica.apply(
                    tape, ps, h_isa[a], e_self[a], keys, values, &flat, &qblocks, n_heads,
                )?);
            }

            // HFIF: fuse over the other agent's intentions, same layer MLP
            // re-embedding its anchors in this agent's frame
            let mut h_hif = Vec::with_capacity(2);
            if cfg.hfif_fusion {
                for i in 0..2 {
                    let j = 1 - i;
                    let cross_feats = scene.anchor_feats_cross[i][j].expect("two targets");
                    let e_cross = layer.intent_embed.apply(tape, ps, cross_feats)?;
                    let rel = scene.rel_pair[i][j].expect("two targets");
                    let blocks = vec![(0usize, s); s];
                    h_hif.push(layer.fuse.apply(
                        tape, ps, h_ica[i], e_self[i], h_ica[j], e_cross, rel, &blocks, n_heads,
                    )?);
                }
            } else {
                h_hif = h_ica.clone();
            }

            // FFN wrap; output becomes next layer's query content
            for (a, h) in h_hif.iter().enumerate() {
                let f = layer.ffn.apply(tape, ps, *h)?;
                content[a] = residual_ln(tape, ps, *h, f, &layer.ln_ffn)?;
            }
        }

        // K-header goal decoder
        let k_mod = cfg.k_modalities;
        let mut gamma = vec![Vec::with_capacity(2); k_mod];
        let mut goals = vec![Vec::with_capacity(2); k_mod];
        for (k, head) in self.goal_heads.iter().enumerate() {
            for a in 0..2 {
                let logits = head.apply(tape, ps, content[a])?;
                let row = tape.reshape(logits, &[1, s])?;
                let g = tape.softmax_rows(row)?;
                let goal = tape.matmul(g, scene.anchor_coords[a])?;
                gamma[k].push(g);
                goals[k].push(goal);
            }
        }

        // trajectory completion from [goal ; agent feature], (agent, k) rows
        let mut rows = Vec::with_capacity(2 * k_mod);
        for a in 0..2 {
            let h_e = tape.gather_rows(features, &[scene.encoded.target_rows[a]])?;
            for k in 0..k_mod {
                rows.push(tape.concat_cols(goals[k][a], h_e)?);
            }
        }
        let stacked = tape.concat_rows(&rows)?;
        let trajectories = self.completion.apply(tape, ps, stacked)?;

        Ok(HfifOutput {
            gamma,
            goals,
            trajectories,
            intention_features: [content[0], content[1]],
        })
    }
}

#[cfg(test)]
mod tests;
