//! End-to-end tests of the `biff` binary: exit codes, determinism and the
//! generate -> train-anchors -> train -> predict -> eval pipeline.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn biff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_biff"))
        .args(args)
        .env("BIFF_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn write_smoke_config(dir: &Path) -> String {
    let path = dir.join("smoke.cfg");
    std::fs::write(
        &path,
        "d_model = 16\nn_enc = 1\nn_lfbf = 1\nk_neighbors = 6\ns_intentions = 8\nk_modalities = 2\n\
         t_future = 10\nt_history = 6\nn_heads = 2\nagent_mlp_dim = 16\nroad_mlp_dim = 16\n\
         completion_mlp_dim = 16\ntraj_mlp_dim = 32\nbehavior_mlp_dim = 16\ngrid_cell = 4.0\n\
         anchor_hidden = 16\nanchor_epochs = 3\nepochs = 2\nbatch = 4\nlr = 0.001\nseed = 5\n\
         background_agents = 0\n",
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn generate_is_deterministic_and_count_zero_gives_empty_file() {
    let dir = TempDir::new().unwrap();
    let out1 = dir.path().join("a.jsonl");
    let out2 = dir.path().join("b.jsonl");
    for out in [&out1, &out2] {
        let r = biff(&[
            "generate",
            "--template",
            "crossing,merge",
            "--count",
            "6",
            "--seed",
            "3",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    assert_eq!(std::fs::read(&out1).unwrap(), std::fs::read(&out2).unwrap());

    let empty = dir.path().join("empty.jsonl");
    let r = biff(&["generate", "--template", "crossing", "--count", "0", "--seed", "0", "--out", empty.to_str().unwrap()]);
    assert!(r.status.success());
    assert_eq!(std::fs::metadata(&empty).unwrap().len(), 0);
}

#[test]
fn bad_inputs_use_the_documented_exit_codes() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x.jsonl");

    // unknown template -> data error (2)
    let r = biff(&["generate", "--template", "roundabout", "--count", "1", "--seed", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));

    // usage error -> 1
    let r = biff(&["no-such-command"]);
    assert_eq!(r.status.code(), Some(1));

    // missing anchor checkpoint -> clear error, exit 2
    std::fs::write(dir.path().join("s.jsonl"), "").unwrap();
    let r = biff(&[
        "train",
        "--data",
        dir.path().join("s.jsonl").to_str().unwrap(),
        "--anchors",
        dir.path().join("missing.ckpt").to_str().unwrap(),
        "--out",
        dir.path().join("m.ckpt").to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("train-anchors"));
}

#[test]
fn full_pipeline_runs_and_outputs_parse() {
    let dir = TempDir::new().unwrap();
    let cfg = write_smoke_config(dir.path());
    let scenes = dir.path().join("scenes.jsonl");
    let anchors = dir.path().join("anchors.ckpt");
    let model = dir.path().join("model.ckpt");
    let preds = dir.path().join("preds.jsonl");
    let report = dir.path().join("report.json");

    let r = biff(&[
        "generate", "--template", "crossing,merge,lead_follow", "--count", "9", "--seed", "1",
        "--config", &cfg, "--out", scenes.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));

    let r = biff(&["train-anchors", "--config", &cfg, "--data", scenes.to_str().unwrap(), "--out", anchors.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));

    let r = biff(&[
        "train", "--config", &cfg, "--data", scenes.to_str().unwrap(),
        "--anchors", anchors.to_str().unwrap(), "--out", model.to_str().unwrap(),
        "--eval-data", scenes.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(model.exists());
    let loss_csv = model.with_extension("loss.csv");
    let csv = std::fs::read_to_string(&loss_csv).unwrap();
    assert!(csv.starts_with("epoch,lr,train_loss"));
    assert_eq!(csv.lines().count(), 3, "header plus one row per epoch");

    let r = biff(&["predict", "--checkpoint", model.to_str().unwrap(), "--data", scenes.to_str().unwrap(), "--out", preds.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = std::fs::read_to_string(&preds).unwrap();
    assert_eq!(text.lines().count(), 9);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["schema"], "biff-pred/1");
        let k = v["trajectories"].as_array().unwrap().len();
        assert_eq!(k, 2, "k_modalities from the smoke config");
        let likes = v["joint_likelihood"].as_array().unwrap();
        assert_eq!(likes.len(), k);
        for l in likes {
            let l = l.as_f64().unwrap();
            assert!((0.0..=1.0).contains(&l));
        }
        // [K][A][T][2]
        let t = v["trajectories"][0][0].as_array().unwrap().len();
        assert_eq!(t, 10);
    }

    let r = biff(&["eval", "--checkpoint", model.to_str().unwrap(), "--data", scenes.to_str().unwrap(), "--report", report.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    for field in ["min_ade", "min_fde", "miss_rate", "ccr", "samples", "per_type"] {
        assert!(!rep[field].is_null(), "missing field {field}");
    }
    assert!(report.with_extension("csv").exists());

    // prediction determinism across invocations
    let preds2 = dir.path().join("preds2.jsonl");
    let r = biff(&["predict", "--checkpoint", model.to_str().unwrap(), "--data", scenes.to_str().unwrap(), "--out", preds2.to_str().unwrap()]);
    assert!(r.status.success());
    assert_eq!(std::fs::read(&preds).unwrap(), std::fs::read(&preds2).unwrap());

    // eval on empty data -> nonzero exit
    let empty = dir.path().join("none.jsonl");
    std::fs::write(&empty, "").unwrap();
    let r = biff(&["eval", "--checkpoint", model.to_str().unwrap(), "--data", empty.to_str().unwrap(), "--report", report.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn check_oracles_suite_passes_from_the_cli() {
    let r = biff(&["check", "--suite", "oracles", "--seed", "1"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stdout));
    let out = String::from_utf8_lossy(&r.stdout);
    assert!(out.contains("all checks passed"));
    assert!(out.lines().filter(|l| l.contains("pass")).count() >= 7);
}
