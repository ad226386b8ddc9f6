//! Command-line entry point.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{match_predictions, prf1, EvalReport};
use crate::geometry::estimate_normals;
use crate::gmf::{gmf_refine, MixtureModel};
use crate::io::{
    load_quads, read_ply, render_svg, save_quads, write_json, write_loss_csv, write_ply, write_svg, PlyFormat,
    QuadRecord, Report,
};
use crate::synth::{generate_scene, perturb_quad};
use crate::trainer::run_demo;

#[derive(Debug, Parser)]
#[command(name = "quadlayout", version, about = "Quad room-layout tools: synthesis, refinement, evaluation, training demo")]
struct Cli {
    /// Seed for all randomness; defaults to the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON run config; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for output files (created if missing).
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic room: scene.ply, gt_quads.json, synth_report.json.
    Synth {
        /// Also write perturbed_quads.json using the config's `perturb` noise.
        #[arg(long)]
        perturbed: bool,
        /// Write ASCII PLY instead of binary little-endian.
        #[arg(long)]
        ascii: bool,
    },
    /// Refine every quad against a cloud: refined_quads.json, kept_mask.csv,
    /// refine_report.json.
    Refine {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        quads: PathBuf,
        /// Neighborhood size for normal estimation when the cloud has none.
        #[arg(long, default_value_t = 16)]
        normal_k: usize,
    },
    /// Score predicted quads against ground truth: eval_report.json.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Run the mean-teacher demo: loss.csv, demo_report.json.
    DemoTrain {
        /// Overrides `ema.steps`.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Top-down SVG of a cloud and quads.
    Plot {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        quads: PathBuf,
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long, default_value = "layout.svg")]
        name: String,
    },
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed.unwrap_or(config.seed);
    config.seed = seed;
    let out = cli.out_dir.as_path();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    match cli.command {
        Command::Synth { perturbed, ascii } => synth(&config, seed, out, perturbed, ascii),
        Command::Refine { cloud, quads, normal_k } => refine(&config, seed, out, &cloud, &quads, normal_k),
        Command::Eval { pred, gt } => eval(&config, seed, out, &pred, &gt),
        Command::DemoTrain { steps } => {
            if let Some(s) = steps {
                config.ema.steps = s;
                config.validate()?;
            }
            demo(&config, seed, out)
        }
        Command::Plot { cloud, quads, gt, name } => plot(seed, out, &cloud, &quads, gt.as_deref(), &name),
    }
}

#[derive(Serialize)]
struct SynthSummary {
    points: usize,
    quads: usize,
    walls: usize,
}

fn synth(config: &RunConfig, seed: u64, out: &Path, perturbed: bool, ascii: bool) -> Result<()> {
    let scene = generate_scene(&config.scene, seed)?;
    let format = if ascii { PlyFormat::Ascii } else { PlyFormat::BinaryLittleEndian };
    write_ply(&out.join("scene.ply"), &scene.cloud, format)?;
    save_quads(&out.join("gt_quads.json"), &scene.quads)?;
    if perturbed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let noisy: Vec<_> = scene
            .quads
            .iter()
            .map(|q| perturb_quad(q, &config.perturb, rng.next_u64()))
            .collect();
        save_quads(&out.join("perturbed_quads.json"), &noisy)?;
    }
    let summary = SynthSummary {
        points: scene.cloud.len(),
        quads: scene.quads.len(),
        walls: scene.wall_count,
    };
    println!("synth: {} points, {} quads -> {}", summary.points, summary.quads, out.display());
    write_json(
        &out.join("synth_report.json"),
        &Report {
            command: "synth",
            seed,
            config,
            result: summary,
        },
    )
}

#[derive(Serialize)]
struct RefineEntry {
    index: usize,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    input: QuadRecord,
    refined: QuadRecord,
    kept_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<MixtureModel>,
    log_likelihood: Vec<f64>,
}

#[derive(Serialize)]
struct RefineSummary {
    cloud: String,
    quads: String,
    normals_estimated: bool,
    points: usize,
    entries: Vec<RefineEntry>,
}

fn refine(config: &RunConfig, seed: u64, out: &Path, cloud_path: &Path, quads_path: &Path, normal_k: usize) -> Result<()> {
    let mut cloud = read_ply(cloud_path)?;
    let quads = load_quads(quads_path)?;
    let normals_estimated = !cloud.has_normals();
    if normals_estimated {
        cloud = estimate_normals(&cloud, normal_k)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut refined_quads = Vec::with_capacity(quads.len());
    let mut masks = Vec::with_capacity(quads.len());
    let mut entries = Vec::with_capacity(quads.len());
    for (index, q) in quads.iter().enumerate() {
        let mut mask = vec![false; cloud.len()];
        let entry = match gmf_refine(q, &cloud, &config.refine, rng.next_u64()) {
            Ok(r) => {
                for &i in &r.kept {
                    mask[i] = true;
                }
                refined_quads.push(*r.refined.quad());
                RefineEntry {
                    index,
                    status: "ok",
                    error: None,
                    input: q.into(),
                    refined: r.refined.quad().into(),
                    kept_count: r.kept.len(),
                    model: Some(r.model),
                    log_likelihood: r.log_likelihood,
                }
            }
            Err(e) => {
                eprintln!("warning: quad {index} not refined: {e}");
                refined_quads.push(*q);
                RefineEntry {
                    index,
                    status: "failed",
                    error: Some(e.to_string()),
                    input: q.into(),
                    refined: q.into(),
                    kept_count: 0,
                    model: None,
                    log_likelihood: Vec::new(),
                }
            }
        };
        masks.push(mask);
        entries.push(entry);
    }

    save_quads(&out.join("refined_quads.json"), &refined_quads)?;
    let mask_path = out.join("kept_mask.csv");
    let mut w = csv::Writer::from_path(&mask_path)?;
    let mut header = vec!["point".to_string()];
    header.extend((0..quads.len()).map(|i| format!("quad{i}")));
    w.write_record(&header)?;
    for p in 0..cloud.len() {
        let mut row = vec![p.to_string()];
        row.extend(masks.iter().map(|m| if m[p] { "1" } else { "0" }.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(&mask_path, e))?;

    let ok = entries.iter().filter(|e| e.status == "ok").count();
    println!("refine: {ok}/{} quads refined -> {}", quads.len(), out.display());
    write_json(
        &out.join("refine_report.json"),
        &Report {
            command: "refine",
            seed,
            config,
            result: RefineSummary {
                cloud: cloud_path.display().to_string(),
                quads: quads_path.display().to_string(),
                normals_estimated,
                points: cloud.len(),
                entries,
            },
        },
    )
}

#[derive(Serialize)]
struct EvalSummary {
    pred: String,
    gt: String,
    report: EvalReport,
    pairs: Vec<(usize, usize)>,
}

fn eval(config: &RunConfig, seed: u64, out: &Path, pred_path: &Path, gt_path: &Path) -> Result<()> {
    let pred = load_quads(pred_path)?;
    let gt = load_quads(gt_path)?;
    let report = prf1(&pred, &gt, &config.eval);
    let pairs = match_predictions(&pred, &gt, &config.eval).pairs;
    println!(
        "precision {} recall {} f1 {}",
        report.precision, report.recall, report.f1
    );
    write_json(
        &out.join("eval_report.json"),
        &Report {
            command: "eval",
            seed,
            config,
            result: EvalSummary {
                pred: pred_path.display().to_string(),
                gt: gt_path.display().to_string(),
                report,
                pairs,
            },
        },
    )
}

#[derive(Serialize)]
struct DemoSummary {
    initial: EvalReport,
    #[serde(rename = "final")]
    final_: EvalReport,
    first_total: f64,
    last_total: f64,
}

fn demo(config: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    let outcome = run_demo(config, seed)?;
    write_loss_csv(&out.join("loss.csv"), &outcome.log)?;
    let summary = DemoSummary {
        initial: outcome.initial_report,
        final_: outcome.final_report,
        first_total: outcome.log.first().map_or(0.0, |r| r.total),
        last_total: outcome.log.last().map_or(0.0, |r| r.total),
    };
    println!(
        "demo-train: f1 {} -> {}, loss {} -> {}",
        summary.initial.f1, summary.final_.f1, summary.first_total, summary.last_total
    );
    write_json(
        &out.join("demo_report.json"),
        &Report {
            command: "demo-train",
            seed,
            config,
            result: summary,
        },
    )
}

fn plot(seed: u64, out: &Path, cloud: &Path, quads: &Path, gt: Option<&Path>, name: &str) -> Result<()> {
    let cloud = read_ply(cloud)?;
    let quads = load_quads(quads)?;
    let gt = gt.map(load_quads).transpose()?.unwrap_or_default();
    let path = out.join(name);
    write_svg(&path, &render_svg(&cloud, &quads, &gt, seed))?;
    println!("plot: {}", path.display());
    Ok(())
}
