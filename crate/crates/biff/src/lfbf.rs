//! Low-level future behaviors fusion: dynamic behavior queries built from
//! the trajectories of the previous layer (HFIF completion for the first),
//! self-attention over the K modalities of each agent, behavior-specific
//! cross-attention into the scene, cross-agent fusion restricted to the same
//! scene modality, and a per-layer trajectory MLP for iterative refinement.

use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::encoder::{EncodedScene, PolylineEncParams};
use crate::geom::{from_frame, wrap_angle, Pose2D};
use crate::hfif::{CrossAttnParams, FuseParams, SelfAttnParams};
use crate::nn::{residual_ln, LnParams, Mlp};
use crate::tensor::{ParamSet, Tape, Tensor, TensorError, TensorId};

/// Per-step behavior features fed to the small PointNet: x, y, t/T.
pub const BEHAVIOR_FEATURES: usize = 3;

#[derive(Debug, Clone)]
pub struct LfbfLayerParams {
    /// Small PointNet over trajectory steps.
    pub behavior_enc: PolylineEncParams,
    /// Endpoint -> d embedding.
    pub endpoint_mlp: Mlp,
    pub bsa: SelfAttnParams,
    pub bca: CrossAttnParams,
    pub fuse: FuseParams,
    pub ffn: Mlp,
    pub ln_ffn: LnParams,
    /// Trajectory regression head, unshared across layers.
    pub traj_mlp: Mlp,
}

impl LfbfLayerParams {
    pub fn new(ps: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, cfg: &RunConfig) -> Self {
        let d = cfg.d_model;
        LfbfLayerParams {
            behavior_enc: PolylineEncParams::new(
                ps,
                rng,
                &format!("{name}.qb"),
                BEHAVIOR_FEATURES,
                cfg.behavior_mlp_dim,
                2,
                d,
            ),
            endpoint_mlp: Mlp::new(ps, rng, &format!("{name}.qeb"), &[2, d, d], false),
            bsa: SelfAttnParams::new(ps, rng, &format!("{name}.bsa"), d),
            bca: CrossAttnParams::new(ps, rng, &format!("{name}.bca"), d),
            fuse: FuseParams::new(ps, rng, &format!("{name}.lbf"), d),
            ffn: Mlp::new(ps, rng, &format!("{name}.ffn"), &[d, 4 * d, d], false),
            ln_ffn: LnParams::new(ps, &format!("{name}.lnf"), d),
            traj_mlp: Mlp::new(
                ps,
                rng,
                &format!("{name}.traj"),
                &[d, cfg.traj_mlp_dim, cfg.traj_mlp_dim, 2 * cfg.t_future],
                false,
            ),
        }
    }

    /// Embed one trajectory (`[1, T*2]`, agent frame) as the whole-behavior
    /// feature e_qb and the endpoint feature e_qeb, both `[1, d]`.
    pub fn embed_behavior(
        &self,
        tape: &mut Tape,
        ps: &ParamSet,
        trajectory: TensorId,
        t_future: usize,
    ) -> Result<(TensorId, TensorId), TensorError> {
        let steps = tape.reshape(trajectory, &[t_future, 2])?;
        let time: Vec<f64> = (0..t_future).map(|t| (t + 1) as f64 / t_future as f64).collect();
        let time_t = Tensor::new(time, &[t_future, 1])?;
        let tid = tape.constant(&time_t);
        let rows = tape.concat_cols(steps, tid)?;
        let e_qb = self.behavior_enc.encode(tape, ps, rows)?;
        let endpoint = tape.slice_rows(steps, t_future - 1, 1)?;
        let e_qeb = self.endpoint_mlp.apply(tape, ps, endpoint)?;
        Ok((e_qb, e_qeb))
    }
}

#[derive(Debug, Clone)]
pub struct LfbfParams {
    pub layers: Vec<LfbfLayerParams>,
}

impl LfbfParams {
    pub fn new(ps: &mut ParamSet, rng: &mut ChaCha8Rng, cfg: &RunConfig) -> Self {
        LfbfParams {
            layers: (0..cfg.n_lfbf).map(|i| LfbfLayerParams::new(ps, rng, &format!("lfbf.l{i}"), cfg)).collect(),
        }
    }

    /// Run all LFBF layers. `init_trajectories` is `[A*K, T*2]` in (agent,
    /// modality) row order, in each agent's own frame; every layer's
    /// predictions are returned in the same layout.
    #[allow(clippy::too_many_arguments, clippy::needless_range_loop)]
    pub fn forward(
        &self,
        tape: &mut Tape,
        ps: &ParamSet,
        encoded: &EncodedScene,
        target_frames: &[Pose2D; 2],
        rel_polylines: &[TensorId; 2],
        rel_pair: &[[Option<TensorId>; 2]; 2],
        init_trajectories: TensorId,
        cfg: &RunConfig,
    ) -> Result<Vec<TensorId>, TensorError> {
        let k_mod = cfg.k_modalities;
        let t = cfg.t_future;
        let n_heads = cfg.n_heads;
        let features = encoded.features;
        let n_agents = encoded.set.n_agents;
        let rows = 2 * k_mod;

        // content init: encoder feature of the owning agent, like HFIF
        let mut content = {
            let mut idx = Vec::with_capacity(rows);
            for a in 0..2 {
                idx.extend(std::iter::repeat_n(encoded.target_rows[a], k_mod));
            }
            tape.gather_rows(features, &idx)?
        };
        let mut trajectories = init_trajectories;
        let mut outputs = Vec::with_capacity(self.layers.len());

        // frame-to-frame affine constants for re-normalizing the counterpart
        // trajectory: p_in_i = p_in_j * R^T + t, with R the rotation by
        // (theta_j - theta_i)
        let mut rot_const: [[Option<TensorId>; 2]; 2] = [[None, None], [None, None]];
        let mut trans_const: [[Option<TensorId>; 2]; 2] = [[None, None], [None, None]];
        for i in 0..2 {
            for j in 0..2 {
                if i == j {
                    continue;
                }
                let dth = wrap_angle(target_frames[j].theta - target_frames[i].theta);
                let (s, c) = dth.sin_cos();
                // row-vector convention: p' = p * [[c, s], [-s, c]]
                let r = Tensor::new(vec![c, s, -s, c], &[2, 2])?;
                rot_const[i][j] = Some(tape.constant(&r));
                let oj = from_frame((0.0, 0.0), &target_frames[j]);
                let (tx, ty) = crate::geom::to_frame(oj, &target_frames[i]);
                let tr = Tensor::new(vec![tx, ty], &[2])?;
                trans_const[i][j] = Some(tape.constant(&tr));
            }
        }

        for layer in &self.layers {
            // dynamic behavior embeddings from the current trajectories
            let mut e_qb_rows = Vec::with_capacity(rows);
            let mut e_qeb_rows = Vec::with_capacity(rows);
            let mut centers_global = Vec::with_capacity(rows);
            for a in 0..2 {
                for k in 0..k_mod {
                    let row = a * k_mod + k;
                    let traj = tape.slice_rows(trajectories, row, 1)?;
                    let (e_qb, e_qeb) = layer.embed_behavior(tape, ps, traj, t)?;
                    e_qb_rows.push(e_qb);
                    e_qeb_rows.push(e_qeb);
                    let data = tape.data(traj);
                    let (mut cx, mut cy) = (0.0, 0.0);
                    for step in data.chunks_exact(2) {
                        cx += step[0];
                        cy += step[1];
                    }
                    let n = (data.len() / 2) as f64;
                    centers_global.push(from_frame((cx / n, cy / n), &target_frames[a]));
                }
            }
            let e_qb = tape.concat_rows(&e_qb_rows)?;
            let e_qeb = tape.concat_rows(&e_qeb_rows)?;

            // queries carry + e_qeb in all layers to tell modalities apart
            let c = tape.add(content, e_qeb)?;

            // B_SA among the K modalities of each agent
            let mut blocks = Vec::with_capacity(rows);
            for a in 0..2 {
                blocks.extend(std::iter::repeat_n((a * k_mod, k_mod), k_mod));
            }
            let h_bsa = layer.bsa.apply(tape, ps, c, &blocks, n_heads)?;

            // B_CA into the scene, neighbor roads picked per behavior center
            let mut h_bca_parts = Vec::with_capacity(2);
            for a in 0..2 {
                let (keys, values) =
                    layer.bca.keys_values(tape, ps, features, n_agents, rel_polylines[a], n_heads)?;
                let mut flat = Vec::new();
                let mut qblocks = Vec::with_capacity(k_mod);
                for k in 0..k_mod {
                    let rows_sel = encoded.set.agents_and_nearest_roads(
                        centers_global[a * k_mod + k],
                        &target_frames[a],
                        cfg.l_roads,
                    );
                    qblocks.push((flat.len(), rows_sel.len()));
                    flat.extend(rows_sel);
                }
                let h_bsa_a = tape.slice_rows(h_bsa, a * k_mod, k_mod)?;
                let e_qb_a = tape.slice_rows(e_qb, a * k_mod, k_mod)?;
                h_bca_parts.push(layer.bca.apply(
                    tape, ps, h_bsa_a, e_qb_a, keys, values, &flat, &qblocks, n_heads,
                )?);
            }

            // LFBF: fuse with the counterpart's same-modality behavior
            let h_lbf = if cfg.lfbf_fusion {
                let mut parts = Vec::with_capacity(2);
                for i in 0..2 {
                    let j = 1 - i;
                    // re-express agent j's trajectories in agent i's frame,
                    // then re-embed with this layer's PointNet
                    let mut cross_embeds = Vec::with_capacity(k_mod);
                    for k in 0..k_mod {
                        let row = j * k_mod + k;
                        let traj = tape.slice_rows(trajectories, row, 1)?;
                        let steps = tape.reshape(traj, &[t, 2])?;
                        let rot = rot_const[i][j].expect("two targets");
                        let trans = trans_const[i][j].expect("two targets");
                        let rotated = tape.matmul(steps, rot)?;
                        let in_i = tape.add_bias(rotated, trans)?;
                        let flat_traj = tape.reshape(in_i, &[1, 2 * t])?;
                        let (e_cross, _) = layer.embed_behavior(tape, ps, flat_traj, t)?;
                        cross_embeds.push(e_cross);
                    }
                    let other_embed = tape.concat_rows(&cross_embeds)?;
                    let other = h_bca_parts[j];
                    let rel = rel_pair[i][j].expect("two targets");
                    // modality k attends only to the counterpart's modality k
                    let blocks: Vec<(usize, usize)> = (0..k_mod).map(|k| (k, 1)).collect();
                    let e_qb_i = tape.slice_rows(e_qb, i * k_mod, k_mod)?;
                    parts.push(layer.fuse.apply(
                        tape,
                        ps,
                        h_bca_parts[i],
                        e_qb_i,
                        other,
                        other_embed,
                        rel,
                        &blocks,
                        n_heads,
                    )?);
                }
                tape.concat_rows(&parts)?
            } else {
                tape.concat_rows(&h_bca_parts)?
            };

            // FFN wrap; becomes next layer's query content
            let f = layer.ffn.apply(tape, ps, h_lbf)?;
            content = residual_ln(tape, ps, h_lbf, f, &layer.ln_ffn)?;

            // per-layer trajectory prediction, also next layer's queries
            trajectories = layer.traj_mlp.apply(tape, ps, content)?;
            outputs.push(trajectories);
        }
        Ok(outputs)
    }
}

#[cfg(test)]
mod tests;
