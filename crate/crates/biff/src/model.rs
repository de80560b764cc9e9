//! The assembled predictor: scene encoder, HFIF decoder, LFBF decoder, one
//! parameter set.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::anchors::IntentionSet;
use crate::config::RunConfig;
use crate::encoder::{EncodedScene, SceneEncoderParams};
use crate::geom::Pose2D;
use crate::hfif::{HfifOutput, HfifParams, HfifScene};
use crate::lfbf::LfbfParams;
use crate::scene::Scene;
use crate::tensor::{ParamSet, Tape, TensorError, TensorId};

pub struct BiffModel {
    pub cfg: RunConfig,
    pub params: ParamSet,
    pub encoder: SceneEncoderParams,
    pub hfif: HfifParams,
    pub lfbf: LfbfParams,
}

/// Everything a scene forward pass produces, as tape handles.
pub struct ModelOutput {
    pub encoded: EncodedScene,
    pub target_frames: [Pose2D; 2],
    pub hfif: HfifOutput,
    /// Per LFBF layer: `[A*K, T*2]` predictions in (agent, modality) row
    /// order, each agent's own frame.
    pub layer_trajs: Vec<TensorId>,
}

impl ModelOutput {
    /// Final-layer prediction of one (modality, agent), as local xy steps.
    pub fn final_trajectory(&self, tape: &Tape, k: usize, a: usize, k_mod: usize) -> Vec<(f64, f64)> {
        self.layer_trajectory(tape, self.layer_trajs.len() - 1, k, a, k_mod)
    }

    pub fn layer_trajectory(
        &self,
        tape: &Tape,
        layer: usize,
        k: usize,
        a: usize,
        k_mod: usize,
    ) -> Vec<(f64, f64)> {
        let id = self.layer_trajs[layer];
        let t2 = tape.shape(id)[1];
        let row = a * k_mod + k;
        tape.data(id)[row * t2..(row + 1) * t2]
            .chunks_exact(2)
            .map(|c| (c[0], c[1]))
            .collect()
    }
}

impl BiffModel {
    pub fn new(cfg: &RunConfig, seed: u64) -> BiffModel {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = SceneEncoderParams::new(&mut params, &mut rng, cfg);
        let hfif = HfifParams::new(&mut params, &mut rng, cfg);
        let lfbf = LfbfParams::new(&mut params, &mut rng, cfg);
        BiffModel { cfg: cfg.clone(), params, encoder, hfif, lfbf }
    }

    /// Forward pass for one scene with its two intention sets (in
    /// target_pair order).
    pub fn forward(
        &self,
        tape: &mut Tape,
        scene: &Scene,
        intentions: &[IntentionSet; 2],
    ) -> Result<ModelOutput, TensorError> {
        self.forward_with_init(tape, scene, intentions, None)
    }

    /// Forward pass with an explicit LFBF initialization. The completed
    /// trajectories always enter LFBF as detached positions (reference-point
    /// style): winner-takes-all gradients must not leak from the selected
    /// modality back into the other goal headers through the cross-modality
    /// behavior attention. Gradient checks pass the base run's values here
    /// so finite differences evaluate the same stop-gradient graph that
    /// backward differentiates.
    pub fn forward_with_init(
        &self,
        tape: &mut Tape,
        scene: &Scene,
        intentions: &[IntentionSet; 2],
        init_override: Option<&crate::tensor::Tensor>,
    ) -> Result<ModelOutput, TensorError> {
        let encoded = self.encoder.encode_scene(tape, &self.params, scene, &self.cfg)?;
        let hscene = HfifScene::build(tape, &encoded, intentions, &self.cfg)?;
        let target_frames = hscene.target_frames;
        let rel_polylines = hscene.rel_polylines;
        let rel_pair = hscene.rel_pair;
        let hfif = self.hfif.forward(tape, &self.params, &hscene, &self.cfg)?;
        let init_detached = match init_override {
            Some(t) => tape.constant(t),
            None => {
                let mut init = tape.value(hfif.trajectories);
                init.requires_grad = false;
                tape.constant(&init)
            }
        };
        let layer_trajs = self.lfbf.forward(
            tape,
            &self.params,
            &encoded,
            &target_frames,
            &rel_polylines,
            &rel_pair,
            init_detached,
            &self.cfg,
        )?;
        Ok(ModelOutput { encoded, target_frames, hfif, layer_trajs })
    }
}
