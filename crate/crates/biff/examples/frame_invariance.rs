//! The rotation-robustness sweep: predictions in per-agent frames must not
//! move when the whole scene is rigidly transformed. Emits a CSV of the
//! maximum deviation per rotation angle, ready for plotting.

use biff::anchors::AnchorModel;
use biff::checks::invariance_config;
use biff::evaluation::predict_scene;
use biff::geom::RigidTransform;
use biff::model::BiffModel;
use biff::scene::{generate_synthetic, GenConfig};

fn main() {
    let cfg = invariance_config();
    let model = BiffModel::new(&cfg, 1);
    let anchors = AnchorModel::new(&cfg, 2);
    let scene = generate_synthetic(
        &GenConfig { t_history: cfg.t_history, t_future: cfg.t_future, ..GenConfig::default() },
        17,
    )
    .unwrap();
    let base = predict_scene(&model, &anchors, &scene).unwrap();

    println!("rotation_rad,max_prediction_deviation");
    for i in 0..12 {
        let rot = i as f64 * std::f64::consts::PI / 6.0;
        let g = RigidTransform { rotation: rot, translation: (31.0, -18.0) };
        let pred = predict_scene(&model, &anchors, &scene.apply_rigid(&g)).unwrap();
        let mut dev = 0.0f64;
        for k in 0..pred.k_modalities() {
            for a in 0..2 {
                for (p, q) in base.local[k][a].iter().zip(&pred.local[k][a]) {
                    dev = dev.max((p.0 - q.0).abs()).max((p.1 - q.1).abs());
                }
            }
        }
        println!("{rot:.6},{dev:.3e}");
    }
}
