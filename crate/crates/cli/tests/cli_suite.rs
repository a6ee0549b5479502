//! End-to-end command-line tests: build a small database, calibrate a
//! rendered image, evaluate poses, and check exit codes and determinism.

use std::path::{Path, PathBuf};
use std::process::Command;

use fieldcal::camera::CameraPose;
use fieldcal::template::{builtin_soccer, save_template};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fieldcal"))
}

struct TempDir(PathBuf);

impl TempDir {
    fn new(tag: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("fieldcal-cli-{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        TempDir(dir)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }
}

impl Drop for TempDir {
    fn drop(&mut self) {
        std::fs::remove_dir_all(&self.0).ok();
    }
}

fn write_config(path: &Path, count: usize, seed: u64) {
    std::fs::write(
        path,
        format!(
            "[sampling]\ncount = {count}\nseed = {seed}\ncenter_stddev = [0.0, 0.0, 0.0]\n"
        ),
    )
    .unwrap();
}

fn test_pose() -> CameraPose {
    CameraPose::new(2400.0, 7.0, -11.0, nalgebra::Vector3::new(52.0, -45.0, 17.0), 1280, 720)
}

#[test]
fn template_validate_render_calibrate_eval() {
    let dir = TempDir::new("pipeline");
    let template_path = dir.path("soccer.json");
    save_template(&builtin_soccer(), &template_path).unwrap();

    // template validate
    let out = bin().args(["template", "validate"]).arg(&template_path).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // template render
    let pose_path = dir.path("pose.json");
    std::fs::write(&pose_path, serde_json::to_string(&test_pose()).unwrap()).unwrap();
    let image_path = dir.path("edges.pgm");
    let out = bin()
        .args(["template", "render"])
        .arg(&template_path)
        .arg("--pose")
        .arg(&pose_path)
        .arg("--out")
        .arg(&image_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let pgm = std::fs::read(&image_path).unwrap();
    assert!(pgm.starts_with(b"P5\n1280 720\n255\n"));

    // db build
    let config_path = dir.path("cfg.toml");
    write_config(&config_path, 700, 11);
    let db_path = dir.path("test.fpdb");
    let out = bin()
        .args(["db", "build", "--config"])
        .arg(&config_path)
        .arg("--out")
        .arg(&db_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // db info
    let out = bin().args(["db", "info"]).arg(&db_path).output().unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("records:      700"), "{stdout}");
    assert!(stdout.contains("checksum:     ok"), "{stdout}");

    // calibrate
    let result_path = dir.path("result.json");
    let out = bin()
        .args(["calibrate", "--db"])
        .arg(&db_path)
        .arg("--image")
        .arg(&image_path)
        .arg("--out")
        .arg(&result_path)
        .arg("-k")
        .arg("3")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&result_path).unwrap()).unwrap();
    let pose: CameraPose = serde_json::from_value(doc["pose"].clone()).unwrap();
    assert_eq!(doc["diagnostics"]["candidates"].as_array().unwrap().len(), 3);
    // The database holds poses pinned at the mean, so the estimate should
    // land near the rendered ground truth.
    let gt = test_pose();
    assert!((pose.pan_deg - gt.pan_deg).abs() < 3.0, "pan {}", pose.pan_deg);
    assert!((pose.tilt_deg - gt.tilt_deg).abs() < 2.0, "tilt {}", pose.tilt_deg);

    // calibrate --no-refine returns the retrieved pose
    let nr_path = dir.path("result_nr.json");
    let out = bin()
        .args(["calibrate", "--db"])
        .arg(&db_path)
        .arg("--image")
        .arg(&image_path)
        .arg("--out")
        .arg(&nr_path)
        .arg("--no-refine")
        .output()
        .unwrap();
    assert!(out.status.success());
    let doc_nr: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&nr_path).unwrap()).unwrap();
    assert_eq!(doc_nr["diagnostics"]["refined"], serde_json::Value::Bool(false));

    // eval: prediction against ground truth by id
    let gt_items = serde_json::json!([
        { "id": "frame-1", "pose": serde_json::to_value(&gt).unwrap() }
    ]);
    let pred_items = serde_json::json!([
        { "id": "frame-1", "pose": doc["pose"].clone(), "converged": doc["diagnostics"]["converged"] }
    ]);
    let gt_path = dir.path("gt.json");
    let pred_path = dir.path("pred.json");
    std::fs::write(&gt_path, gt_items.to_string()).unwrap();
    std::fs::write(&pred_path, pred_items.to_string()).unwrap();
    let report_path = dir.path("report.json");
    let out = bin()
        .args(["eval", "--pred"])
        .arg(&pred_path)
        .arg("--gt")
        .arg(&gt_path)
        .arg("--out")
        .arg(&report_path)
        .arg("--metric")
        .arg("both")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    let mean_part = report["mean_iou_part"].as_f64().unwrap();
    assert!(mean_part > 0.75, "mean IoU_part {mean_part}");
    assert_eq!(report["items"].as_array().unwrap().len(), 1);
}

/// An edge image rendered from an actual database pose calibrates back to
/// (almost exactly) that pose.
#[test]
fn calibrate_self_retrieval() {
    let dir = TempDir::new("selfret");
    let config_path = dir.path("cfg.toml");
    write_config(&config_path, 120, 21);
    let db_path = dir.path("db.fpdb");
    assert!(
        bin()
            .args(["db", "build", "--config"])
            .arg(&config_path)
            .arg("--out")
            .arg(&db_path)
            .output()
            .unwrap()
            .status
            .success()
    );

    // Reproduce the database sampling to pick a stored pose.
    let dist = fieldcal::sampler::PoseDistribution {
        seed: 21,
        center_stddev: [0.0; 3],
        ..Default::default()
    };
    let stored = fieldcal::sample_poses(&dist, 120).unwrap().remove(37);
    let edge = fieldcal::render_edge_image(&builtin_soccer(), &stored, 4.0).unwrap();
    let image_path = dir.path("query.pgm");
    fieldcal::image_io::write_pgm(&edge.as_gray(), &image_path).unwrap();

    let result_path = dir.path("result.json");
    let out = bin()
        .args(["calibrate", "--db"])
        .arg(&db_path)
        .arg("--image")
        .arg(&image_path)
        .arg("--out")
        .arg(&result_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&result_path).unwrap()).unwrap();
    let pose: CameraPose = serde_json::from_value(doc["pose"].clone()).unwrap();
    assert_eq!(doc["diagnostics"]["retrieval_index"].as_u64(), Some(37));
    // Output within the pose-similarity thresholds of the stored pose.
    assert!((pose.pan_deg - stored.pan_deg).abs() <= 1.0);
    assert!((pose.tilt_deg - stored.tilt_deg).abs() <= 0.5);
    assert!((pose.focal_length - stored.focal_length).abs() <= 30.0);
}

#[test]
fn eval_identical_files_score_one() {
    let dir = TempDir::new("eval-id");
    let gt = test_pose();
    let items = serde_json::json!([
        { "id": "a", "pose": serde_json::to_value(&gt).unwrap() },
        { "id": "b", "pose": serde_json::to_value(&test_pose()).unwrap() }
    ]);
    let path = dir.path("poses.json");
    std::fs::write(&path, items.to_string()).unwrap();
    let report_path = dir.path("report.json");
    let out = bin()
        .args(["eval", "--pred"])
        .arg(&path)
        .arg("--gt")
        .arg(&path)
        .arg("--out")
        .arg(&report_path)
        .output()
        .unwrap();
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["mean_iou_whole"].as_f64().unwrap(), 1.0);
    assert_eq!(report["median_iou_part"].as_f64().unwrap(), 1.0);
}

#[test]
fn eval_id_mismatch_lists_orphans() {
    let dir = TempDir::new("eval-orphan");
    let pose = serde_json::to_value(test_pose()).unwrap();
    std::fs::write(
        dir.path("pred.json"),
        serde_json::json!([{ "id": "x", "pose": pose.clone() }]).to_string(),
    )
    .unwrap();
    std::fs::write(
        dir.path("gt.json"),
        serde_json::json!([{ "id": "y", "pose": pose }]).to_string(),
    )
    .unwrap();
    let out = bin()
        .args(["eval", "--pred"])
        .arg(dir.path("pred.json"))
        .arg("--gt")
        .arg(dir.path("gt.json"))
        .arg("--out")
        .arg(dir.path("r.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains('x') && err.contains('y'), "{err}");
    assert!(!dir.path("r.json").exists(), "no partial output on failure");
}

#[test]
fn db_build_is_deterministic_across_runs_and_threads() {
    let dir = TempDir::new("determinism");
    let config_path = dir.path("cfg.toml");
    write_config(&config_path, 60, 5);

    let mut bytes = Vec::new();
    for (i, threads) in ["1", "4", "1"].iter().enumerate() {
        let db_path = dir.path(&format!("db{i}.fpdb"));
        let out = bin()
            .args(["--threads", threads, "db", "build", "--config"])
            .arg(&config_path)
            .arg("--out")
            .arg(&db_path)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        bytes.push(std::fs::read(&db_path).unwrap());
    }
    assert_eq!(bytes[0], bytes[1], "thread count changed the database bytes");
    assert_eq!(bytes[0], bytes[2], "repeat run changed the database bytes");

    // Seed override changes the result.
    let db_path = dir.path("db_seed.fpdb");
    let out = bin()
        .args(["db", "build", "--config"])
        .arg(&config_path)
        .arg("--out")
        .arg(&db_path)
        .args(["--seed", "6"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_ne!(bytes[0], std::fs::read(&db_path).unwrap());
}

#[test]
fn synth_experiment_writes_csv_and_is_deterministic() {
    let dir = TempDir::new("synth");
    let config_path = dir.path("cfg.toml");
    std::fs::write(
        &config_path,
        "[experiment]\ndb_size = 80\ntest_size = 10\nseed = 3\n",
    )
    .unwrap();
    let mut outputs = Vec::new();
    for i in 0..2 {
        let csv_path = dir.path(&format!("exp{i}.csv"));
        let out = bin()
            .args(["synth-experiment", "--config"])
            .arg(&config_path)
            .arg("--out")
            .arg(&csv_path)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push(std::fs::read_to_string(&csv_path).unwrap());
        let items = std::fs::read_to_string(dir.path(&format!("exp{i}.csv.items.jsonl"))).unwrap();
        assert_eq!(items.lines().count(), 10);
    }
    assert_eq!(outputs[0], outputs[1]);
    let header = outputs[0].lines().next().unwrap();
    assert_eq!(
        header,
        "bin_low_m,bin_high_m,n,retrieval_mean,retrieval_std,refined_mean,refined_std"
    );
    assert_eq!(outputs[0].lines().count(), 13, "header plus one row per bin");
    for row in outputs[0].lines().skip(1) {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 7);
        let mean: f64 = fields[5].parse().unwrap();
        assert!((0.0..=1.0).contains(&mean));
    }
}

#[test]
fn missing_or_invalid_config_exits_two() {
    let out = bin()
        .args(["db", "build", "--config", "/nonexistent/config.toml", "--out", "/tmp/x.fpdb"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let dir = TempDir::new("badcfg");
    let config_path = dir.path("bad.toml");
    std::fs::write(&config_path, "[sampling]\nunknown_key = 3\n").unwrap();
    let out = bin()
        .args(["db", "build", "--config"])
        .arg(&config_path)
        .arg("--out")
        .arg(dir.path("x.fpdb"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("unknown_key"), "{err}");
    assert!(!dir.path("x.fpdb").exists());

    // Template file that fails invariants is a config error too.
    let tpl = dir.path("bad_template.json");
    std::fs::write(
        &tpl,
        r#"{"name":"x","length_m":10,"width_m":5,"segments":[[0,0,10,0]],"arcs":[[5,2,-1,0,90]]}"#,
    )
    .unwrap();
    let out = bin().args(["template", "validate"]).arg(&tpl).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn calibrate_blank_image_warns_and_succeeds() {
    let dir = TempDir::new("blank");
    let config_path = dir.path("cfg.toml");
    write_config(&config_path, 40, 2);
    let db_path = dir.path("db.fpdb");
    assert!(
        bin()
            .args(["db", "build", "--config"])
            .arg(&config_path)
            .arg("--out")
            .arg(&db_path)
            .output()
            .unwrap()
            .status
            .success()
    );
    // All-black PGM.
    let blank = fieldcal::render::GrayRaster::new(1280, 720);
    let image_path = dir.path("blank.pgm");
    fieldcal::image_io::write_pgm(&blank, &image_path).unwrap();
    let result_path = dir.path("result.json");
    let out = bin()
        .args(["calibrate", "--db"])
        .arg(&db_path)
        .arg("--image")
        .arg(&image_path)
        .arg("--out")
        .arg(&result_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&result_path).unwrap()).unwrap();
    assert_eq!(doc["diagnostics"]["converged"], serde_json::Value::Bool(false));
    assert!(doc["diagnostics"]["warning"].is_string());
}
