//! Single-binary pipeline driver: template tools, database build,
//! calibration, evaluation and the synthetic displacement experiment.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration/usage error.

mod config;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use fieldcal::camera::CameraPose;
use fieldcal::db::{build_database, encode_database, load_database, query_nearest};
use fieldcal::error::Error;
use fieldcal::eval::{MetricChoice, iou_report, run_displacement_experiment};
use fieldcal::hog::hog_features;
use fieldcal::lk::refine_pose;
use fieldcal::render::{DEFAULT_LINE_WIDTH, binarize, render_edge_image, resize_area};
use fieldcal::sampler::sample_poses_with_stats;
use fieldcal::template::load_template;

use config::PipelineConfig;
use files::{CliError, read_eval_items, read_gray, write_atomic, write_image};

#[derive(Parser)]
#[command(name = "fieldcal", version, about = "Sports camera calibration from edge images")]
struct Cli {
    /// Worker threads (default: hardware parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Field template tools.
    Template {
        #[command(subcommand)]
        cmd: TemplateCmd,
    },
    /// Feature-pose database tools.
    Db {
        #[command(subcommand)]
        cmd: DbCmd,
    },
    /// Calibrate a single edge image against a database.
    Calibrate {
        #[arg(long)]
        db: PathBuf,
        /// Binary edge image (PGM P5 or grayscale PNG).
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Retrieval-only mode: skip Lucas-Kanade refinement.
        #[arg(long)]
        no_refine: bool,
        /// Retrieval depth reported in diagnostics.
        #[arg(long, short = 'k', default_value_t = 1)]
        k: usize,
    },
    /// Score estimated poses against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = MetricArg::Both)]
        metric: MetricArg,
    },
    /// Run the synthetic camera-displacement experiment.
    SynthExperiment {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output CSV; per-item lines go to `<out>.items.jsonl`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Subcommand)]
enum TemplateCmd {
    /// Parse a template file and check its invariants.
    Validate { path: PathBuf },
    /// Render a template under a pose into an edge image.
    Render {
        path: PathBuf,
        #[arg(long)]
        pose: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_LINE_WIDTH)]
        line_width: f64,
    },
}

#[derive(Subcommand)]
enum DbCmd {
    /// Sample poses, render, extract features and save the database.
    Build {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Number of poses (overrides the config's sampling.count).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Print database header information.
    Info { db: PathBuf },
}

#[derive(Copy, Clone, ValueEnum)]
enum MetricArg {
    Whole,
    Part,
    Both,
}

impl From<MetricArg> for MetricChoice {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Whole => MetricChoice::Whole,
            MetricArg::Part => MetricChoice::Part,
            MetricArg::Both => MetricChoice::Both,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().is_err() {
            eprintln!("warning: thread pool already initialized");
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.exit)
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Template { cmd } => match cmd {
            TemplateCmd::Validate { path } => cmd_template_validate(&path),
            TemplateCmd::Render { path, pose, out, line_width } => {
                cmd_template_render(&path, &pose, &out, line_width)
            }
        },
        Command::Db { cmd } => match cmd {
            DbCmd::Build { config, out, seed, count } => {
                cmd_db_build(config.as_deref(), &out, seed, count)
            }
            DbCmd::Info { db } => cmd_db_info(&db),
        },
        Command::Calibrate { db, image, out, config, no_refine, k } => {
            cmd_calibrate(&db, &image, &out, config.as_deref(), no_refine, k)
        }
        Command::Eval { pred, gt, out, config, metric } => {
            cmd_eval(&pred, &gt, &out, config.as_deref(), metric.into())
        }
        Command::SynthExperiment { config, out, seed } => {
            cmd_synth_experiment(config.as_deref(), &out, seed)
        }
    }
}

fn cmd_template_validate(path: &std::path::Path) -> Result<(), CliError> {
    let t = load_template(path).map_err(CliError::config)?;
    println!(
        "{}: ok ({} x {} m, {} segments, {} arcs)",
        t.name,
        t.length_m,
        t.width_m,
        t.segments.len(),
        t.arcs.len()
    );
    Ok(())
}

fn cmd_template_render(
    path: &std::path::Path,
    pose_path: &std::path::Path,
    out: &std::path::Path,
    line_width: f64,
) -> Result<(), CliError> {
    let template = load_template(path).map_err(CliError::config)?;
    let pose: CameraPose = files::read_json(pose_path).map_err(CliError::config)?;
    let image = render_edge_image(&template, &pose, line_width).map_err(CliError::runtime)?;
    write_image(&image.as_gray(), out)?;
    println!("wrote {} ({} edge pixels)", out.display(), image.edge_count());
    Ok(())
}

fn cmd_db_build(
    config_path: Option<&std::path::Path>,
    out: &std::path::Path,
    seed: Option<u64>,
    count: Option<usize>,
) -> Result<(), CliError> {
    let start = Instant::now();
    let mut cfg = PipelineConfig::load(config_path).map_err(CliError::config)?;
    if let Some(seed) = seed {
        cfg.sampling.seed = seed;
    }
    let template = cfg.template.resolve().map_err(CliError::config)?;
    let dist = cfg.sampling.distribution();
    dist.validate().map_err(CliError::config)?;
    cfg.features.validate().map_err(CliError::config)?;
    let n = count.unwrap_or(cfg.sampling.count);

    let (poses, rejected) = sample_poses_with_stats(&dist, n).map_err(CliError::config)?;
    if rejected > 0 {
        eprintln!("note: resampled {rejected} below-ground camera centers");
    }
    let line_width = (DEFAULT_LINE_WIDTH * dist.image_size[0] as f64 / 1280.0).max(1.0);
    let snapshot = format!(
        "{}|{}|{line_width}",
        serde_json::to_string(&dist).expect("serializable"),
        serde_json::to_string(&cfg.features).expect("serializable"),
    );
    let db = build_database(&poses, &template, line_width, &cfg.features, Some(snapshot))
        .map_err(CliError::runtime)?;
    write_atomic(out, &encode_database(&db))?;
    println!(
        "wrote {}: {} records, feature dim {}, {:.2}s",
        out.display(),
        db.record_count(),
        db.feature_dim(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn cmd_db_info(path: &std::path::Path) -> Result<(), CliError> {
    let db = load_database(path).map_err(CliError::runtime)?;
    let bytes = std::fs::metadata(path).map(|m| m.len()).unwrap_or(0);
    println!("records:      {}", db.record_count());
    println!("feature dim:  {}", db.feature_dim());
    println!("pose dim:     9");
    println!("config hash:  {:016x}", db.metadata.config_hash);
    println!("file size:    {bytes} bytes");
    println!("checksum:     ok");
    Ok(())
}

fn cmd_calibrate(
    db_path: &std::path::Path,
    image_path: &std::path::Path,
    out: &std::path::Path,
    config_path: Option<&std::path::Path>,
    no_refine: bool,
    k: usize,
) -> Result<(), CliError> {
    let start = Instant::now();
    let cfg = PipelineConfig::load(config_path).map_err(CliError::config)?;
    let template = cfg.template.resolve().map_err(CliError::config)?;
    let db = load_database(db_path).map_err(CliError::runtime)?;

    let raster = read_gray(image_path)?;
    let (img_w, img_h) = (raster.width, raster.height);
    let edge = binarize(&raster, 128);
    let edge_pixels = edge.edge_count();
    let small = resize_area(&edge, cfg.features.input_size[0], cfg.features.input_size[1]);
    let feature = hog_features(&small, &cfg.features).map_err(CliError::config)?;
    if feature.dim() != db.feature_dim() {
        return Err(CliError::config(Error::DimMismatch {
            expected: db.feature_dim(),
            got: feature.dim(),
        }));
    }

    let hits = query_nearest(&db, &feature, k.max(1)).map_err(CliError::runtime)?;
    let best = hits[0].clone();
    let retrieved = best.pose.to_pose(img_w, img_h);

    let mut warning: Option<String> = None;
    if edge_pixels == 0 {
        warning = Some("input image has no edge pixels; retrieval is unconstrained".into());
    }

    let (pose, diagnostics) = if no_refine {
        (retrieved.clone(), serde_json::json!({
            "retrieval_distance": best.distance,
            "retrieval_index": best.index,
            "candidates": candidates_json(&hits),
            "refined": false,
            "converged": true,
            "warning": warning,
            "wall_time_ms": start.elapsed().as_secs_f64() * 1e3,
        }))
    } else {
        let result = refine_pose(&edge, &retrieved, &template, &cfg.refine);
        let converged = result.converged && warning.is_none();
        (result.pose.clone(), serde_json::json!({
            "retrieval_distance": best.distance,
            "retrieval_index": best.index,
            "candidates": candidates_json(&hits),
            "refined": result.fallback.is_none(),
            "converged": converged,
            "iterations": result.iterations,
            "residual_before": result.residual_before,
            "residual_after": result.residual_after,
            "fallback": result.fallback,
            "warning": warning,
            "wall_time_ms": start.elapsed().as_secs_f64() * 1e3,
        }))
    };

    let doc = serde_json::json!({ "pose": pose, "diagnostics": diagnostics });
    write_atomic(out, (serde_json::to_string_pretty(&doc).expect("serializable") + "\n").as_bytes())?;
    println!(
        "pose: f={:.1}px pan={:.2}° tilt={:.2}° center=({:.1}, {:.1}, {:.1})",
        pose.focal_length, pose.pan_deg, pose.tilt_deg, pose.center.x, pose.center.y, pose.center.z
    );
    Ok(())
}

fn candidates_json(hits: &[fieldcal::db::QueryHit]) -> serde_json::Value {
    serde_json::Value::Array(
        hits.iter()
            .map(|h| serde_json::json!({ "index": h.index, "distance": h.distance }))
            .collect(),
    )
}

fn cmd_eval(
    pred_path: &std::path::Path,
    gt_path: &std::path::Path,
    out: &std::path::Path,
    config_path: Option<&std::path::Path>,
    metric: MetricChoice,
) -> Result<(), CliError> {
    let cfg = PipelineConfig::load(config_path).map_err(CliError::config)?;
    let template = cfg.template.resolve().map_err(CliError::config)?;
    let pred = read_eval_items(pred_path)?;
    let gt = read_eval_items(gt_path)?;

    let gt_by_id: std::collections::BTreeMap<&str, &files::EvalItem> =
        gt.iter().map(|item| (item.id.as_str(), item)).collect();
    let pred_ids: std::collections::BTreeSet<&str> =
        pred.iter().map(|item| item.id.as_str()).collect();
    let orphan_pred: Vec<&str> =
        pred_ids.iter().filter(|id| !gt_by_id.contains_key(**id)).copied().collect();
    let orphan_gt: Vec<&str> =
        gt_by_id.keys().filter(|id| !pred_ids.contains(**id)).copied().collect();
    if !orphan_pred.is_empty() || !orphan_gt.is_empty() {
        return Err(CliError::config(Error::Config(format!(
            "id mismatch between files; only in predictions: [{}], only in ground truth: [{}]",
            orphan_pred.join(", "),
            orphan_gt.join(", ")
        ))));
    }

    let pairs: Vec<(String, CameraPose, CameraPose, bool)> = pred
        .iter()
        .map(|p| {
            let g = gt_by_id[p.id.as_str()];
            (p.id.clone(), g.pose.clone(), p.pose.clone(), p.converged.unwrap_or(true))
        })
        .collect();
    let report = iou_report(&pairs, &template, metric).map_err(CliError::runtime)?;
    write_atomic(
        out,
        (serde_json::to_string_pretty(&report).expect("serializable") + "\n").as_bytes(),
    )?;
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    println!(
        "IoU_whole mean {} median {} | IoU_part mean {} median {} ({} items)",
        fmt(report.mean_iou_whole),
        fmt(report.median_iou_whole),
        fmt(report.mean_iou_part),
        fmt(report.median_iou_part),
        report.items.len()
    );
    Ok(())
}

fn cmd_synth_experiment(
    config_path: Option<&std::path::Path>,
    out: &std::path::Path,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let start = Instant::now();
    let cfg = PipelineConfig::load(config_path).map_err(CliError::config)?;
    let template = cfg.template.resolve().map_err(CliError::config)?;
    let mut exp = cfg.experiment_config();
    if let Some(seed) = seed {
        exp.seed = seed;
        exp.distribution.seed = seed;
    }
    exp.validate().map_err(CliError::config)?;

    let report = run_displacement_experiment(&exp, &template, &cfg.features, &cfg.refine)
        .map_err(CliError::runtime)?;
    write_atomic(out, report.to_csv().as_bytes())?;
    let items_path = files::with_suffix(out, ".items.jsonl");
    write_atomic(&items_path, report.items_jsonl().as_bytes())?;
    print!("{}", report.curves_text());
    println!(
        "wrote {} and {} ({:.1}s)",
        out.display(),
        items_path.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
