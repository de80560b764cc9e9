//! Inference scoring and the joint metrics: minADE, minFDE, miss rate and
//! cross collision rate, aggregated over scenes with a per-type breakdown.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchors::{AnchorModel, IntentionSet};
use crate::config::RunConfig;
use crate::geom::{from_frame, to_frame, Pose2D};
use crate::model::BiffModel;
use crate::scene::{AgentType, Scene, SceneError};
use crate::tensor::Tape;

/// The K joint futures predicted for one scene, with everything needed to
/// reconstruct global trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePrediction {
    pub scene_id: String,
    pub agent_ids: [u64; 2],
    pub frames: [Pose2D; 2],
    /// local[k][a][t]: prediction in agent a's frame.
    pub local: Vec<[Vec<(f64, f64)>; 2]>,
    /// Product of the two per-agent nearest-anchor scores, per modality.
    pub joint_likelihood: Vec<f64>,
}

impl ScenePrediction {
    pub fn k_modalities(&self) -> usize {
        self.local.len()
    }

    pub fn global(&self, k: usize, a: usize) -> Vec<(f64, f64)> {
        self.local[k][a].iter().map(|p| from_frame(*p, &self.frames[a])).collect()
    }

    pub fn endpoint_local(&self, k: usize, a: usize) -> (f64, f64) {
        *self.local[k][a].last().expect("trajectories are never empty")
    }
}

/// Joint likelihood per modality: each agent's endpoint queries its nearest
/// conditional anchor, the two scores multiply.
pub fn score_modalities(
    endpoints_local: &[[(f64, f64); 2]],
    sets: &[IntentionSet; 2],
) -> Result<Vec<f64>, SceneError> {
    if sets[0].anchors.is_empty() || sets[1].anchors.is_empty() {
        return Err(SceneError::BadPolyline("empty intention set".into()));
    }
    Ok(endpoints_local
        .iter()
        .map(|eps| {
            (0..2)
                .map(|a| sets[a].anchors[sets[a].nearest_anchor(eps[a])].score)
                .product()
        })
        .collect())
}

/// Run the model on one scene and package the result.
pub fn predict_scene(
    model: &BiffModel,
    anchors: &AnchorModel,
    scene: &Scene,
) -> Result<ScenePrediction, SceneError> {
    let sets = anchors.scene_intentions(scene, model.cfg.s_intentions)?;
    let mut tape = Tape::new();
    let out = model
        .forward(&mut tape, scene, &sets)
        .map_err(|e| SceneError::BadPolyline(e.to_string()))?;
    let k_mod = model.cfg.k_modalities;
    let mut local = Vec::with_capacity(k_mod);
    for k in 0..k_mod {
        local.push([
            out.final_trajectory(&tape, k, 0, k_mod),
            out.final_trajectory(&tape, k, 1, k_mod),
        ]);
    }
    let endpoints: Vec<[(f64, f64); 2]> = local
        .iter()
        .map(|m| [*m[0].last().expect("t_future >= 1"), *m[1].last().expect("t_future >= 1")])
        .collect();
    let joint_likelihood = score_modalities(&endpoints, &sets)?;
    let [ta, tb] = scene.targets()?;
    Ok(ScenePrediction {
        scene_id: scene.scene_id.clone(),
        agent_ids: [ta.id, tb.id],
        frames: out.target_frames,
        local,
        joint_likelihood,
    })
}

/// Ground truth of one target agent expressed in its own frame.
pub struct LocalGroundTruth {
    pub steps: Vec<(f64, f64, bool)>,
}

pub fn local_ground_truth(scene: &Scene) -> Result<[LocalGroundTruth; 2], SceneError> {
    let [a, b] = scene.targets()?;
    Ok([a, b].map(|t| {
        let frame = t.frame();
        LocalGroundTruth {
            steps: t
                .future_gt
                .iter()
                .map(|s| {
                    let l = to_frame((s.x, s.y), &frame);
                    (l.0, l.1, s.valid)
                })
                .collect(),
        }
    }))
}

fn displacement(p: (f64, f64), q: (f64, f64)) -> f64 {
    (p.0 - q.0).hypot(p.1 - q.1)
}

/// Per-agent ADE over valid steps; None when no step is valid.
fn agent_ade(pred: &[(f64, f64)], gt: &LocalGroundTruth) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, g) in pred.iter().zip(&gt.steps) {
        if g.2 {
            sum += displacement(*p, (g.0, g.1));
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

fn agent_fde(pred: &[(f64, f64)], gt: &LocalGroundTruth) -> Option<f64> {
    let g = gt.steps.last()?;
    if !g.2 {
        return None;
    }
    Some(displacement(*pred.last()?, (g.0, g.1)))
}

/// Per-scene metric pieces, combined across scenes by `evaluate`.
#[derive(Debug, Clone)]
pub struct SceneMetrics {
    pub min_ade: f64,
    pub min_fde: f64,
    pub missed: bool,
    pub ccr: f64,
    /// (agent type, ade, fde) at the joint-best modality.
    pub per_agent: Vec<(AgentType, f64, f64)>,
}

/// Joint metrics of one scene. Agent displacement combines by mean (or sum
/// with `metric_agent_sum`); min over modalities.
pub fn scene_metrics(
    pred: &ScenePrediction,
    scene: &Scene,
    cfg: &RunConfig,
) -> Result<SceneMetrics, SceneError> {
    let gts = local_ground_truth(scene)?;
    let [ta, tb] = scene.targets()?;
    let combine = |a: f64, b: f64| if cfg.metric_agent_sum { a + b } else { 0.5 * (a + b) };

    let mut min_ade = f64::INFINITY;
    let mut min_fde = f64::INFINITY;
    let mut best_k = 0usize;
    let mut any_hit = false;
    for k in 0..pred.k_modalities() {
        let ades: Vec<f64> = (0..2)
            .map(|a| agent_ade(&pred.local[k][a], &gts[a]).ok_or(SceneError::EmptyFuture { agent: pred.agent_ids[a] }))
            .collect::<Result<_, _>>()?;
        let fdes: Vec<f64> = (0..2)
            .map(|a| agent_fde(&pred.local[k][a], &gts[a]).ok_or(SceneError::EmptyFuture { agent: pred.agent_ids[a] }))
            .collect::<Result<_, _>>()?;
        let ade = combine(ades[0], ades[1]);
        let fde = combine(fdes[0], fdes[1]);
        min_ade = min_ade.min(ade);
        if fde < min_fde {
            min_fde = fde;
            best_k = k;
        }
        if fdes.iter().all(|&f| f <= cfg.miss_threshold) {
            any_hit = true;
        }
    }

    // cross collision rate: synchronized steps, global frame, disc footprints
    let radius_sum = ta.footprint_radius + tb.footprint_radius;
    let mut n_coll = 0usize;
    for k in 0..pred.k_modalities() {
        let ga = pred.global(k, 0);
        let gb = pred.global(k, 1);
        if ga.iter().zip(&gb).any(|(p, q)| displacement(*p, *q) < radius_sum) {
            n_coll += 1;
        }
    }
    let ccr = n_coll as f64 / pred.k_modalities() as f64;

    let per_agent = (0..2)
        .map(|a| {
            let kind = if a == 0 { ta.kind } else { tb.kind };
            let ade = agent_ade(&pred.local[best_k][a], &gts[a]).expect("checked above");
            let fde = agent_fde(&pred.local[best_k][a], &gts[a]).expect("checked above");
            (kind, ade, fde)
        })
        .collect();

    Ok(SceneMetrics { min_ade, min_fde, missed: !any_hit, ccr, per_agent })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeRow {
    pub agent_type: String,
    pub agents: usize,
    pub ade: f64,
    pub fde: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub min_ade: f64,
    pub min_fde: f64,
    pub miss_rate: f64,
    pub ccr: f64,
    pub samples: usize,
    pub skipped: usize,
    pub per_type: Vec<TypeRow>,
}

impl MetricReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        out.push_str(&format!("min_ade,{}\n", self.min_ade));
        out.push_str(&format!("min_fde,{}\n", self.min_fde));
        out.push_str(&format!("miss_rate,{}\n", self.miss_rate));
        out.push_str(&format!("ccr,{}\n", self.ccr));
        out.push_str(&format!("samples,{}\n", self.samples));
        out.push_str(&format!("skipped,{}\n", self.skipped));
        for row in &self.per_type {
            out.push_str(&format!("ade_{},{}\n", row.agent_type, row.ade));
            out.push_str(&format!("fde_{},{}\n", row.agent_type, row.fde));
        }
        out
    }
}

/// Evaluate a model over scenes. Scenes whose ground-truth endpoint is
/// invalid for either target are skipped and counted. Per-scene work runs in
/// parallel; aggregation folds in scene order so results are deterministic.
pub fn evaluate(
    model: &BiffModel,
    anchors: &AnchorModel,
    scenes: &[Scene],
    cfg: &RunConfig,
) -> Result<MetricReport, SceneError> {
    if scenes.is_empty() {
        return Err(SceneError::Parse { line: 0, msg: "no scenes to evaluate".into() });
    }
    let results: Vec<Result<Option<SceneMetrics>, SceneError>> = scenes
        .par_iter()
        .map(|scene| {
            let [a, b] = scene.targets()?;
            let endpoint_ok =
                |t: &crate::scene::AgentTrack| t.future_gt.last().map(|s| s.valid).unwrap_or(false);
            if !endpoint_ok(a) || !endpoint_ok(b) {
                return Ok(None);
            }
            let pred = predict_scene(model, anchors, scene)?;
            scene_metrics(&pred, scene, cfg).map(Some)
        })
        .collect();

    let mut sum_ade = 0.0;
    let mut sum_fde = 0.0;
    let mut misses = 0usize;
    let mut sum_ccr = 0.0;
    let mut samples = 0usize;
    let mut skipped = 0usize;
    let mut per_type: Vec<(AgentType, usize, f64, f64)> = Vec::new();
    for r in results {
        match r? {
            None => skipped += 1,
            Some(m) => {
                samples += 1;
                sum_ade += m.min_ade;
                sum_fde += m.min_fde;
                misses += m.missed as usize;
                sum_ccr += m.ccr;
                for (kind, ade, fde) in m.per_agent {
                    match per_type.iter_mut().find(|e| e.0 == kind) {
                        Some(e) => {
                            e.1 += 1;
                            e.2 += ade;
                            e.3 += fde;
                        }
                        None => per_type.push((kind, 1, ade, fde)),
                    }
                }
            }
        }
    }
    if samples == 0 {
        return Err(SceneError::Parse { line: 0, msg: "every scene was skipped".into() });
    }
    let n = samples as f64;
    per_type.sort_by_key(|e| e.0.name());
    Ok(MetricReport {
        min_ade: sum_ade / n,
        min_fde: sum_fde / n,
        miss_rate: misses as f64 / n,
        ccr: sum_ccr / n,
        samples,
        skipped,
        per_type: per_type
            .into_iter()
            .map(|(kind, count, ade, fde)| TypeRow {
                agent_type: kind.name().to_string(),
                agents: count,
                ade: ade / count as f64,
                fde: fde / count as f64,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests;
