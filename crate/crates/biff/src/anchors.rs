//! Conditional-anchor provider: a small grid-intention scorer trained
//! separately on ground-truth endpoints and frozen before the main model
//! trains, standing in for an external marginal-heatmap model.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::encoder::{agent_step_rows, PolylineEncParams, AGENT_FEATURES};
use crate::geom::to_frame;
use crate::scene::{AgentTrack, Scene, SceneError};
use crate::tensor::{AdamW, ParamSet, Tape, TensorError, TensorId};
use crate::nn::Mlp;

fn snap(v: f64) -> f64 {
    (v / 1e-6).round() * 1e-6
}

/// Square grid over the agent frame: x spans +-extent_x (longitudinal),
/// y spans +-extent_y (lateral), cells are `cell` meters on a side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub extent_x: f64,
    pub extent_y: f64,
    pub cell: f64,
}

impl GridSpec {
    pub fn from_config(cfg: &RunConfig) -> GridSpec {
        GridSpec { extent_x: cfg.grid_extent_x, extent_y: cfg.grid_extent_y, cell: cfg.grid_cell }
    }

    pub fn cols(&self) -> usize {
        (2.0 * self.extent_x / self.cell).round() as usize
    }

    pub fn rows(&self) -> usize {
        (2.0 * self.extent_y / self.cell).round() as usize
    }

    pub fn cells(&self) -> usize {
        self.cols() * self.rows()
    }

    /// Center coordinates of a cell index (row-major, x fastest).
    pub fn center(&self, idx: usize) -> (f64, f64) {
        let (ix, iy) = (idx % self.cols(), idx / self.cols());
        (
            -self.extent_x + (ix as f64 + 0.5) * self.cell,
            -self.extent_y + (iy as f64 + 0.5) * self.cell,
        )
    }

    /// Cell containing a point, if inside the grid. Coordinates snap to a
    /// 1e-6 grid first so a point sitting exactly on a cell boundary gets
    /// the same cell in every global frame.
    pub fn cell_of(&self, p: (f64, f64)) -> Option<usize> {
        let (px, py) = (snap(p.0), snap(p.1));
        if px < -self.extent_x || px >= self.extent_x || py < -self.extent_y || py >= self.extent_y {
            return None;
        }
        let ix = ((px + self.extent_x) / self.cell) as usize;
        let iy = ((py + self.extent_y) / self.cell) as usize;
        Some(iy.min(self.rows() - 1) * self.cols() + ix.min(self.cols() - 1))
    }

    /// Nearest cell to a point, clamping coordinates into the grid.
    pub fn clamp_cell(&self, p: (f64, f64)) -> usize {
        let eps = self.cell * 1e-6;
        let x = p.0.clamp(-self.extent_x, self.extent_x - eps);
        let y = p.1.clamp(-self.extent_y, self.extent_y - eps);
        self.cell_of((x, y)).expect("clamped point is inside the grid")
    }
}

/// One conditional anchor: a goal candidate in the agent frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intention {
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

/// Top-S anchors of one agent, sorted by descending score (grid index breaks
/// ties). Scores are full-grid softmax probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct IntentionSet {
    pub agent_id: u64,
    pub anchors: Vec<Intention>,
    pub grid: GridSpec,
}

impl IntentionSet {
    pub fn positions(&self) -> Vec<(f64, f64)> {
        self.anchors.iter().map(|a| (a.x, a.y)).collect()
    }

    /// Index of the anchor nearest to a point; distance ties keep the
    /// earlier (higher-scored) anchor.
    pub fn nearest_anchor(&self, p: (f64, f64)) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, a) in self.anchors.iter().enumerate() {
            let d = (a.x - p.0) * (a.x - p.0) + (a.y - p.1) * (a.y - p.1);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

/// Select the S highest-scored cells as anchors at their cell centers.
pub fn top_s(scores: &[f64], grid: &GridSpec, s: usize) -> Vec<Intention> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    order
        .into_iter()
        .take(s)
        .map(|idx| {
            let (x, y) = grid.center(idx);
            Intention { x, y, score: scores[idx] }
        })
        .collect()
}

/// Greedy suppression over grid scores: repeatedly take the best remaining
/// cell and clear everything within `radius` of it.
pub fn nms_endpoints(scores: &[f64], grid: &GridSpec, n: usize, radius: f64) -> Vec<Intention> {
    let mut remaining = scores.to_vec();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut best: Option<usize> = None;
        for i in 0..remaining.len() {
            if remaining[i] > 0.0 && best.is_none_or(|b| remaining[i] > remaining[b]) {
                best = Some(i);
            }
        }
        let Some(idx) = best else { break };
        let (cx, cy) = grid.center(idx);
        out.push(Intention { x: cx, y: cy, score: scores[idx] });
        for (i, r) in remaining.iter_mut().enumerate() {
            let (x, y) = grid.center(i);
            if (x - cx).hypot(y - cy) <= radius {
                *r = 0.0;
            }
        }
    }
    out
}

/// Outcome counters from anchor-head training.
#[derive(Debug, Clone, Default)]
pub struct AnchorTrainStats {
    pub epoch_losses: Vec<f64>,
    /// Ground-truth endpoints outside the grid, clamped to the nearest cell.
    pub clamped_targets: usize,
}

/// The frozen anchor scorer: its own polyline encoder plus a two-layer MLP
/// head over the grid cells.
#[derive(Debug, Clone)]
pub struct AnchorModel {
    pub params: ParamSet,
    pub encoder: PolylineEncParams,
    pub head: Mlp,
    pub grid: GridSpec,
}

impl AnchorModel {
    pub fn new(cfg: &RunConfig, seed: u64) -> AnchorModel {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = GridSpec::from_config(cfg);
        let hidden = cfg.anchor_hidden;
        let encoder =
            PolylineEncParams::new(&mut params, &mut rng, "anchor.enc", AGENT_FEATURES, hidden, 3, hidden);
        let head = Mlp::new(&mut params, &mut rng, "anchor.head", &[hidden, hidden, grid.cells()], false);
        AnchorModel { params, encoder, head, grid }
    }

    /// Track history (own frame) -> feature vector [1, hidden].
    pub fn agent_feature(&self, tape: &mut Tape, track: &AgentTrack) -> Result<TensorId, TensorError> {
        let rows = agent_step_rows(track);
        let rid = tape.constant(&rows);
        self.encoder.encode(tape, &self.params, rid)
    }

    /// Grid logits for an agent feature.
    pub fn score_logits(&self, tape: &mut Tape, feature: TensorId) -> Result<TensorId, TensorError> {
        self.head.apply(tape, &self.params, feature)
    }

    /// Softmax scores over the full grid for one track.
    pub fn full_scores(&self, track: &AgentTrack) -> Result<Vec<f64>, TensorError> {
        let mut tape = Tape::new();
        let feat = self.agent_feature(&mut tape, track)?;
        let logits = self.score_logits(&mut tape, feat)?;
        let probs = tape.softmax_rows(logits)?;
        Ok(tape.data(probs).to_vec())
    }

    /// Top-S conditional anchors for one track.
    pub fn intentions(&self, track: &AgentTrack, s: usize) -> Result<IntentionSet, TensorError> {
        let scores = self.full_scores(track)?;
        Ok(IntentionSet { agent_id: track.id, anchors: top_s(&scores, &self.grid, s), grid: self.grid })
    }

    /// Intention sets for both targets of a scene.
    pub fn scene_intentions(&self, scene: &Scene, s: usize) -> Result<[IntentionSet; 2], SceneError> {
        let [a, b] = scene.targets()?;
        let ia = self.intentions(a, s).map_err(|e| SceneError::BadPolyline(e.to_string()))?;
        let ib = self.intentions(b, s).map_err(|e| SceneError::BadPolyline(e.to_string()))?;
        Ok([ia, ib])
    }

    /// Cross-entropy training against the grid cell holding each target's
    /// ground-truth endpoint (last valid future step, agent frame).
    pub fn train(
        &mut self,
        scenes: &[Scene],
        epochs: usize,
        lr: f64,
        seed: u64,
    ) -> Result<AnchorTrainStats, TensorError> {
        let mut stats = AnchorTrainStats::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let opt = AdamW::new(lr, 0.0);
        let batch_size = 16;

        // (track clone, target cell) training examples
        let mut examples: Vec<(AgentTrack, usize)> = Vec::new();
        for scene in scenes {
            let [a, b] = scene.targets().map_err(|e| TensorError::InvalidHyper { what: e.to_string() })?;
            for t in [a, b] {
                let Some(end) = t.valid_future().last() else { continue };
                let local = to_frame((end.x, end.y), &t.frame());
                let cell = match self.grid.cell_of(local) {
                    Some(c) => c,
                    None => {
                        stats.clamped_targets += 1;
                        self.grid.clamp_cell(local)
                    }
                };
                examples.push((t.clone(), cell));
            }
        }

        for _ in 0..epochs {
            let mut order: Vec<usize> = (0..examples.len()).collect();
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for batch in order.chunks(batch_size) {
                self.params.zero_grads();
                let mut batch_loss = 0.0;
                for &i in batch {
                    let (track, cell) = &examples[i];
                    let mut tape = Tape::new();
                    let feat = self.agent_feature(&mut tape, track)?;
                    let logits = self.score_logits(&mut tape, feat)?;
                    let loss = tape.cross_entropy_row(logits, *cell)?;
                    batch_loss += tape.data(loss)[0];
                    let mut grads = tape.param_grads(loss, &self.params)?;
                    grads.scale(1.0 / batch.len() as f64);
                    self.params.accumulate(&grads);
                }
                opt.step(&mut self.params)?;
                epoch_loss += batch_loss / batch.len() as f64;
            }
            let batches = order.len().div_ceil(batch_size).max(1);
            stats.epoch_losses.push(epoch_loss / batches as f64);
        }
        Ok(stats)
    }
}
