//! Command implementations behind the `biff` binary: scenario generation,
//! anchor training, model training, prediction, evaluation and the
//! property-check suites.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 check-suite failure.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchors::AnchorModel;
use crate::checkpoint::Checkpoint;
use crate::checks;
use crate::config::RunConfig;
use crate::evaluation::{evaluate, predict_scene};
use crate::scene::{generate_synthetic, read_scenes, write_scenes, GenConfig, Scene, Template};
use crate::training::{loss_curve_csv, train};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

pub const PRED_SCHEMA: &str = "biff-pred/1";

#[derive(Parser, Debug)]
#[command(name = "biff", version, about = "Interactive two-agent trajectory prediction")]
pub struct Cli {
    /// Cap on worker threads (falls back to the BIFF_THREADS variable).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate deterministic synthetic scenes as JSON Lines.
    Generate(GenerateArgs),
    /// Train the anchor scorer and freeze it into a checkpoint.
    TrainAnchors(TrainAnchorsArgs),
    /// Train the full model against a frozen anchor checkpoint.
    Train(TrainArgs),
    /// Write per-scene trajectories and joint likelihoods as JSON Lines.
    Predict(PredictArgs),
    /// Compute minADE / minFDE / miss rate / CCR over a scene file.
    Eval(EvalArgs),
    /// Run a property-check suite and print a pass/fail table.
    Check(CheckArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Comma-separated template list, cycled over the scene count
    /// (crossing, merge, lead_follow).
    #[arg(long, default_value = "crossing")]
    pub template: String,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Optional config file for horizon/rate overrides.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainAnchorsArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Frozen anchor checkpoint from `train-anchors`.
    #[arg(long)]
    pub anchors: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Held-out scenes evaluated after every epoch.
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
    /// Where to write the best-minFDE checkpoint (requires --eval-data).
    #[arg(long)]
    pub best_out: Option<PathBuf>,
    /// Loss-curve CSV path (defaults next to --out).
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Report JSON path; a CSV twin is written alongside.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Gradcheck,
    Invariance,
    Oracles,
    All,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    #[arg(long, value_enum)]
    pub suite: Suite,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// One prediction line of the `biff-pred/1` JSONL format.
#[derive(Serialize, Deserialize)]
pub struct PredRecord {
    pub schema: String,
    pub scene_id: String,
    pub agent_ids: [u64; 2],
    /// (x, y, theta) of each agent frame, for local/global conversion.
    pub frames: [(f64, f64, f64); 2],
    /// Global-frame trajectories, [K][A][T][2].
    pub trajectories: Vec<[Vec<(f64, f64)>; 2]>,
    pub joint_likelihood: Vec<f64>,
}

pub fn run(cli: Cli) -> i32 {
    let threads = cli
        .threads
        .or_else(|| std::env::var("BIFF_THREADS").ok().and_then(|v| v.parse().ok()));
    if let Some(n) = threads {
        if n == 0 {
            eprintln!("--threads must be positive");
            return EXIT_USAGE;
        }
        // ignore failure: the pool may already exist inside one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::TrainAnchors(args) => cmd_train_anchors(args),
        Command::Train(args) => cmd_train(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Check(args) => return cmd_check(args),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(msg) => {
            eprintln!("error: {msg}");
            EXIT_DATA
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig, String> {
    match path {
        Some(p) => RunConfig::load(p).map_err(|e| e.to_string()),
        None => Ok(RunConfig::default()),
    }
}

fn gen_config(cfg: &RunConfig, template: Template) -> GenConfig {
    GenConfig {
        template,
        t_history: cfg.t_history,
        t_future: cfg.t_future,
        dt: cfg.dt,
        interaction_dist: cfg.interaction_dist,
        background_agents: cfg.background_agents,
    }
}

fn cmd_generate(args: GenerateArgs) -> Result<(), String> {
    let cfg = load_config(&args.config)?;
    let templates: Vec<Template> = args
        .template
        .split(',')
        .map(|t| Template::from_str(t).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let scenes: Vec<Scene> = (0..args.count)
        .map(|i| {
            let template = templates[i % templates.len()];
            generate_synthetic(&gen_config(&cfg, template), args.seed + i as u64).map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    write_scenes(&args.out, &scenes).map_err(|e| e.to_string())?;
    println!("wrote {} scenes (seed {}) to {}", scenes.len(), args.seed, args.out.display());
    Ok(())
}

fn cmd_train_anchors(args: TrainAnchorsArgs) -> Result<(), String> {
    let cfg = load_config(&args.config)?;
    let scenes = read_scenes(&args.data).map_err(|e| e.to_string())?;
    if scenes.is_empty() {
        return Err("no scenes in data file".into());
    }
    let mut anchors = AnchorModel::new(&cfg, cfg.seed);
    let stats = anchors
        .train(&scenes, cfg.anchor_epochs, cfg.anchor_lr, cfg.seed)
        .map_err(|e| e.to_string())?;
    let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ckpt = Checkpoint::capture(&cfg, None, &anchors, rng.get_seed(), rng.get_word_pos());
    ckpt.save(&args.out).map_err(|e| e.to_string())?;
    println!(
        "anchor head on {} scenes: loss {:.4} -> {:.4}, {} clamped targets, saved {}",
        scenes.len(),
        stats.epoch_losses.first().unwrap_or(&f64::NAN),
        stats.epoch_losses.last().unwrap_or(&f64::NAN),
        stats.clamped_targets,
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), String> {
    let cfg = load_config(&args.config)?;
    let scenes = read_scenes(&args.data).map_err(|e| e.to_string())?;
    if !args.anchors.exists() {
        return Err(format!(
            "anchor checkpoint {} not found; run `biff train-anchors` first",
            args.anchors.display()
        ));
    }
    let anchor_ckpt = Checkpoint::load(&args.anchors).map_err(|e| e.to_string())?;
    let grids_match = anchor_ckpt.config.grid_extent_x == cfg.grid_extent_x
        && anchor_ckpt.config.grid_extent_y == cfg.grid_extent_y
        && anchor_ckpt.config.grid_cell == cfg.grid_cell
        && anchor_ckpt.config.anchor_hidden == cfg.anchor_hidden;
    if !grids_match {
        return Err("anchor checkpoint grid/head dimensions do not match the training config".into());
    }
    let anchors = anchor_ckpt.restore_anchors().map_err(|e| e.to_string())?;
    let eval_scenes = match &args.eval_data {
        Some(p) => Some(read_scenes(p).map_err(|e| e.to_string())?),
        None => None,
    };
    let outcome = train(&scenes, eval_scenes.as_deref(), &anchors, &cfg).map_err(|e| e.to_string())?;
    outcome.final_checkpoint.save(&args.out).map_err(|e| e.to_string())?;
    if let Some(best_path) = &args.best_out {
        outcome.best_checkpoint.save(best_path).map_err(|e| e.to_string())?;
    }
    let csv_path = args.loss_csv.clone().unwrap_or_else(|| args.out.with_extension("loss.csv"));
    std::fs::write(&csv_path, loss_curve_csv(&outcome.loss_curve)).map_err(|e| e.to_string())?;

    let last = outcome.loss_curve.last();
    println!(
        "trained {} epochs on {} scenes (skipped {}), final loss {:.4}, checkpoint {}",
        outcome.loss_curve.len(),
        scenes.len(),
        outcome.skipped_scenes,
        last.map(|s| s.train_loss).unwrap_or(f64::NAN),
        args.out.display()
    );
    if let Some(fde) = outcome.best_min_fde {
        println!("best eval minFDE {fde:.4}");
    }
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<(), String> {
    let ckpt = Checkpoint::load(&args.checkpoint).map_err(|e| e.to_string())?;
    let (model, anchors) = ckpt.restore_model().map_err(|e| e.to_string())?;
    let scenes = read_scenes(&args.data).map_err(|e| e.to_string())?;
    let preds: Vec<PredRecord> = scenes
        .par_iter()
        .map(|scene| {
            predict_scene(&model, &anchors, scene).map(|p| PredRecord {
                schema: PRED_SCHEMA.to_string(),
                scene_id: p.scene_id.clone(),
                agent_ids: p.agent_ids,
                frames: [
                    (p.frames[0].x, p.frames[0].y, p.frames[0].theta),
                    (p.frames[1].x, p.frames[1].y, p.frames[1].theta),
                ],
                trajectories: (0..p.k_modalities()).map(|k| [p.global(k, 0), p.global(k, 1)]).collect(),
                joint_likelihood: p.joint_likelihood.clone(),
            })
        })
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let mut out = String::new();
    for p in &preds {
        out.push_str(&serde_json::to_string(p).map_err(|e| e.to_string())?);
        out.push('\n');
    }
    std::fs::write(&args.out, out).map_err(|e| e.to_string())?;
    println!("wrote {} predictions to {}", preds.len(), args.out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), String> {
    let ckpt = Checkpoint::load(&args.checkpoint).map_err(|e| e.to_string())?;
    let (model, anchors) = ckpt.restore_model().map_err(|e| e.to_string())?;
    let scenes = read_scenes(&args.data).map_err(|e| e.to_string())?;
    let report = evaluate(&model, &anchors, &scenes, &model.cfg).map_err(|e| e.to_string())?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
    std::fs::write(&args.report, json).map_err(|e| e.to_string())?;
    let csv_path = csv_twin(&args.report);
    std::fs::write(&csv_path, report.to_csv()).map_err(|e| e.to_string())?;
    println!(
        "minADE {:.4}  minFDE {:.4}  MR {:.4}  CCR {:.4}  ({} scenes, {} skipped)",
        report.min_ade, report.min_fde, report.miss_rate, report.ccr, report.samples, report.skipped
    );
    Ok(())
}

fn csv_twin(report: &Path) -> PathBuf {
    report.with_extension("csv")
}

fn cmd_check(args: CheckArgs) -> i32 {
    let mut results = Vec::new();
    match args.suite {
        Suite::Gradcheck => results.extend(checks::gradcheck_suite(args.seed)),
        Suite::Invariance => results.extend(checks::invariance_suite(args.seed, 20)),
        Suite::Oracles => results.extend(checks::oracle_suite(args.seed)),
        Suite::All => {
            results.extend(checks::gradcheck_suite(args.seed));
            results.extend(checks::invariance_suite(args.seed, 20));
            results.extend(checks::oracle_suite(args.seed));
        }
    }
    print!("{}", checks::render_table(&results));
    if checks::all_passed(&results) {
        println!("all checks passed");
        EXIT_OK
    } else {
        println!("CHECK FAILURES");
        EXIT_CHECK
    }
}
