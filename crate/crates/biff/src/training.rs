//! Winner-takes-all training: modality selection by summed final
//! displacement, goal + per-layer trajectory regression on the selected
//! modality only, AdamW with the halving schedule, deterministic batching.

use std::fmt;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::anchors::{AnchorModel, IntentionSet};
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::evaluation::{evaluate, local_ground_truth, MetricReport};
use crate::model::{BiffModel, ModelOutput};
use crate::scene::{Scene, SceneError};
use crate::tensor::{AdamW, GradBuffer, Reduction, Tape, Tensor, TensorError, TensorId};

#[derive(Debug)]
pub enum TrainError {
    Scene(SceneError),
    Tensor(TensorError),
    /// Loss or gradients became non-finite; aborts with diagnostics.
    NonFinite { epoch: usize, batch: usize, details: String },
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::Scene(e) => write!(f, "training data: {e}"),
            TrainError::Tensor(e) => write!(f, "training math: {e}"),
            TrainError::NonFinite { epoch, batch, details } => {
                write!(f, "non-finite loss at epoch {epoch} batch {batch}; {details}")
            }
        }
    }
}

impl std::error::Error for TrainError {}

impl From<SceneError> for TrainError {
    fn from(e: SceneError) -> Self {
        TrainError::Scene(e)
    }
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Tensor(e)
    }
}

/// Winner-takes-all selection: the modality whose summed final displacement
/// over both agents is minimal. Ties pick the lowest index.
pub fn select_wta_modality(endpoints: &[[(f64, f64); 2]], gt: &[(f64, f64); 2]) -> usize {
    let mut best = 0usize;
    let mut best_err = f64::INFINITY;
    for (k, eps) in endpoints.iter().enumerate() {
        let err: f64 = (0..2).map(|a| (eps[a].0 - gt[a].0).hypot(eps[a].1 - gt[a].1)).sum();
        if err < best_err {
            best_err = err;
            best = k;
        }
    }
    best
}

/// Endpoint-validity gate plus WTA selection for a forward pass. Returns
/// None when either target's ground-truth endpoint is invalid (the scene is
/// skipped and counted by the caller).
pub fn wta_for_output(tape: &Tape, out: &ModelOutput, scene: &Scene, k_mod: usize) -> Option<usize> {
    let targets = scene.targets().ok()?;
    let mut gt = [(0.0, 0.0); 2];
    for (a, t) in targets.iter().enumerate() {
        let last = t.future_gt.last()?;
        if !last.valid {
            return None;
        }
        gt[a] = crate::geom::to_frame((last.x, last.y), &t.frame());
    }
    let endpoints: Vec<[(f64, f64); 2]> = (0..k_mod)
        .map(|k| {
            [
                *out.final_trajectory(tape, k, 0, k_mod).last().expect("t_future >= 1"),
                *out.final_trajectory(tape, k, 1, k_mod).last().expect("t_future >= 1"),
            ]
        })
        .collect();
    Some(select_wta_modality(&endpoints, &gt))
}

/// L = L_G + L_T on the selected modality only: smooth-l1 between the HFIF
/// goal and the GT endpoint per agent, plus smooth-l1 between every LFBF
/// layer's trajectory and the GT future (valid steps only).
pub fn compute_loss(
    tape: &mut Tape,
    out: &ModelOutput,
    scene: &Scene,
    k_star: usize,
    cfg: &RunConfig,
) -> Result<TensorId, TensorError> {
    let reduction = if cfg.loss_sum_steps { Reduction::Sum } else { Reduction::Mean };
    let beta = cfg.smooth_l1_beta;
    let k_mod = cfg.k_modalities;
    let gts = local_ground_truth(scene).map_err(|e| TensorError::InvalidHyper { what: e.to_string() })?;

    let mut terms: Vec<TensorId> = Vec::new();
    for (a, gt) in gts.iter().enumerate() {
        let steps = &gt.steps;
        let end = steps.last().expect("futures are non-empty");
        let end_t = Tensor::new(vec![end.0, end.1], &[1, 2])?;
        let end_id = tape.constant(&end_t);
        terms.push(tape.smooth_l1(out.hfif.goals[k_star][a], end_id, beta, reduction)?);

        let valid_idx: Vec<usize> =
            steps.iter().enumerate().filter_map(|(i, s)| s.2.then_some(i)).collect();
        let gt_rows: Vec<Vec<f64>> = valid_idx.iter().map(|&i| vec![steps[i].0, steps[i].1]).collect();
        let gt_t = Tensor::from_rows(&gt_rows)?;
        let gt_id = tape.constant(&gt_t);

        let row = a * k_mod + k_star;
        let mut layer_ids: Vec<TensorId> = out.layer_trajs.clone();
        if cfg.hfif_traj_loss {
            layer_ids.insert(0, out.hfif.trajectories);
        }
        for traj in layer_ids {
            let pred_row = tape.slice_rows(traj, row, 1)?;
            let t = tape.shape(pred_row)[1] / 2;
            let pred_steps = tape.reshape(pred_row, &[t, 2])?;
            let pred_valid = tape.gather_rows(pred_steps, &valid_idx)?;
            terms.push(tape.smooth_l1(pred_valid, gt_id, beta, reduction)?);
        }
    }
    let mut total = terms[0];
    for t in &terms[1..] {
        total = tape.add(total, *t)?;
    }
    Ok(total)
}

/// One scene's loss value and parameter gradients, or None when the scene
/// is skipped for an invalid GT endpoint.
pub fn scene_grads(
    model: &BiffModel,
    scene: &Scene,
    sets: &[IntentionSet; 2],
) -> Result<Option<(f64, GradBuffer)>, TensorError> {
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, scene, sets)?;
    let Some(k_star) = wta_for_output(&tape, &out, scene, model.cfg.k_modalities) else {
        return Ok(None);
    };
    let loss_id = compute_loss(&mut tape, &out, scene, k_star, &model.cfg)?;
    let loss = tape.data(loss_id)[0];
    let grads = tape.param_grads(loss_id, &model.params)?;
    Ok(Some((loss, grads)))
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub eval: Option<MetricReport>,
}

pub fn loss_curve_csv(stats: &[EpochStats]) -> String {
    let mut out = String::from("epoch,lr,train_loss,eval_min_ade,eval_min_fde,eval_miss_rate,eval_ccr\n");
    for s in stats {
        match &s.eval {
            Some(e) => out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.epoch, s.lr, s.train_loss, e.min_ade, e.min_fde, e.miss_rate, e.ccr
            )),
            None => out.push_str(&format!("{},{},{},,,,\n", s.epoch, s.lr, s.train_loss)),
        }
    }
    out
}

pub struct TrainOutcome {
    pub model: BiffModel,
    pub loss_curve: Vec<EpochStats>,
    pub skipped_scenes: usize,
    pub final_checkpoint: Checkpoint,
    /// Checkpoint at the best eval minFDE; the final one when no eval ran.
    pub best_checkpoint: Checkpoint,
    pub best_min_fde: Option<f64>,
}

/// Deterministic parallel chunk size: bounded by gradient-buffer memory,
/// independent of the thread count so reductions fold identically anywhere.
fn grad_chunk_size(param_floats: usize) -> usize {
    ((512usize << 20) / (param_floats * 8).max(1)).clamp(1, 64)
}

/// Full training loop over scenes with a frozen anchor model.
pub fn train(
    scenes: &[Scene],
    eval_scenes: Option<&[Scene]>,
    anchors: &AnchorModel,
    cfg: &RunConfig,
) -> Result<TrainOutcome, TrainError> {
    for s in scenes {
        s.validate()?;
    }
    let mut model = BiffModel::new(cfg, cfg.seed);
    let intentions: Vec<[IntentionSet; 2]> = scenes
        .iter()
        .map(|s| anchors.scene_intentions(s, cfg.s_intentions))
        .collect::<Result<_, _>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let chunk = grad_chunk_size(model.params.total_len());
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let mut skipped_scenes = 0usize;
    let mut best: Option<(f64, Checkpoint)> = None;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at_epoch(epoch);
        let opt = AdamW { lr, ..AdamW::new(cfg.lr, cfg.weight_decay) };
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (batch_no, batch) in order.chunks(cfg.batch).enumerate() {
            let mut total = GradBuffer::zeros_like(&model.params);
            let mut batch_loss = 0.0;
            let mut contributing = 0usize;
            for scene_chunk in batch.chunks(chunk) {
                let results: Vec<Result<Option<(f64, GradBuffer)>, TensorError>> = scene_chunk
                    .par_iter()
                    .map(|&i| scene_grads(&model, &scenes[i], &intentions[i]))
                    .collect();
                for r in results {
                    match r? {
                        Some((loss, grads)) => {
                            batch_loss += loss;
                            total.add_assign(&grads);
                            contributing += 1;
                        }
                        None => skipped_scenes += 1,
                    }
                }
            }
            if contributing == 0 {
                continue;
            }
            if !batch_loss.is_finite() || !total.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    batch: batch_no,
                    details: grad_diagnostics(&model, &total),
                });
            }
            total.scale(1.0 / contributing as f64);
            if cfg.grad_clip > 0.0 {
                total.clip_global_norm(cfg.grad_clip);
            }
            model.params.zero_grads();
            model.params.accumulate(&total);
            opt.step(&mut model.params)?;
            epoch_loss += batch_loss / contributing as f64;
            batches += 1;
        }

        let train_loss = epoch_loss / batches.max(1) as f64;
        let eval = match eval_scenes {
            Some(es) if !es.is_empty() => Some(evaluate(&model, anchors, es, cfg)?),
            _ => None,
        };
        if let Some(e) = &eval {
            let better = best.as_ref().is_none_or(|(fde, _)| e.min_fde < *fde);
            if better {
                let ckpt =
                    Checkpoint::capture(cfg, Some(&model), anchors, rng.get_seed(), rng.get_word_pos());
                best = Some((e.min_fde, ckpt));
            }
        }
        loss_curve.push(EpochStats { epoch, lr, train_loss, eval });
    }

    let final_checkpoint = Checkpoint::capture(cfg, Some(&model), anchors, rng.get_seed(), rng.get_word_pos());
    let (best_min_fde, best_checkpoint) = match best {
        Some((fde, ckpt)) => (Some(fde), ckpt),
        None => (None, final_checkpoint.clone()),
    };
    Ok(TrainOutcome { model, loss_curve, skipped_scenes, final_checkpoint, best_checkpoint, best_min_fde })
}

fn grad_diagnostics(model: &BiffModel, grads: &GradBuffer) -> String {
    let mut norms: Vec<(String, f64)> = model
        .params
        .iter()
        .map(|(id, p)| {
            let g = grads.get(id);
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            (p.name.clone(), norm)
        })
        .collect();
    norms.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    let top: Vec<String> = norms
        .iter()
        .take(5)
        .map(|(n, v)| format!("{n}={v:.3e}"))
        .collect();
    format!("largest gradient norms: {}", top.join(", "))
}

#[cfg(test)]
mod tests;
