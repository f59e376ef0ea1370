use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mobipose::occupancy::OccupancyGrid;
use mobipose::scoring::read_jsonl;
use serde_json::Value;

const SMALL: &str = "[bo]\nn_init = 40\nn_iter = 2\n[synthetic.scene]\ndensity = 60.0\n";

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mobipose")).current_dir(dir).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(out.stderr.trim_ascii()).unwrap_or_else(|e| panic!("stderr is not json ({e}): {}", String::from_utf8_lossy(&out.stderr)))
}

#[test]
fn optimize_writes_three_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "run.toml", SMALL);
    let out = run(dir.path(), &["--config", "run.toml", "--out", "o", "optimize"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let o = dir.path().join("o");
    let trace = read_jsonl(&std::fs::read_to_string(o.join("trace.jsonl")).unwrap()).unwrap();
    assert_eq!(trace.len(), 40 + 2 * 5);
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(o.join("summary.json")).unwrap()).unwrap();
    let best = summary["best_score"].as_f64().unwrap();
    assert_eq!(best, trace.iter().map(|r| r.combined).fold(0.0, f64::max));
    assert_eq!(summary["profile"], "sim");
    assert!(summary["oracle"].is_object());
    let map = image::open(o.join("score_map.png")).unwrap();
    assert_eq!((map.width(), map.height()), (800, 800));
}

#[test]
fn missing_dataset_exits_2_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "run.toml", "[paths]\ndataset = \"no-such-dir\"\n");
    let out = run(dir.path(), &["--config", "run.toml", "--out", "o", "optimize"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "dataset not found");
    assert_eq!(err["code"], 2);
    assert!(!dir.path().join("o").exists());
}

#[test]
fn bad_config_and_flags_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "typo.toml", "[bo]\nn_inti = 3\n");
    let out = run(dir.path(), &["--config", "typo.toml", "optimize"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "invalid config");

    let out = run(dir.path(), &["--config", "absent.toml", "optimize"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "config not found");

    write(dir.path(), "small.toml", SMALL);
    let out = run(dir.path(), &["--config", "small.toml", "--views", "left,right", "optimize"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "unknown view");

    let out = run(dir.path(), &["--profile", "lab", "optimize"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seeded_optimize_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "run.toml", SMALL);
    for o in ["a", "b"] {
        assert!(run(dir.path(), &["--config", "run.toml", "--seed", "0", "--out", o, "optimize"]).status.success());
    }
    for f in ["trace.jsonl", "score_map.png"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
    assert!(run(dir.path(), &["--config", "run.toml", "--seed", "1", "--out", "c", "optimize"]).status.success());
    assert_ne!(std::fs::read(dir.path().join("a/trace.jsonl")).unwrap(), std::fs::read(dir.path().join("c/trace.jsonl")).unwrap());
}

#[test]
fn height_optimization_records_heights() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "run.toml", SMALL);
    let out = run(dir.path(), &["--config", "run.toml", "--height-opt", "--out", "o", "optimize"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = read_jsonl(&std::fs::read_to_string(dir.path().join("o/trace.jsonl")).unwrap()).unwrap();
    assert!(trace.iter().all(|r| r.height.is_some_and(|h| (-0.3..=0.3).contains(&h))));
}

#[test]
fn metrics_from_noiseless_samples() {
    let dir = tempfile::tempdir().unwrap();
    let samples: Vec<(f64, f64)> = (0..9).map(|i| i as f64 * 0.05).map(|s| (s, 0.8 * (-5.0 * s).exp())).collect();
    write(dir.path(), "samples.json", &serde_json::to_string(&samples).unwrap());
    // Four 4×4 views, each with 4 of 16 mask pixels set.
    let mut views = String::new();
    for i in 0..4 {
        let mask = image::GrayImage::from_fn(4, 4, |x, y| image::Luma([if (x + 4 * y + i) % 4 == 0 { 255 } else { 0 }]));
        mask.save(dir.path().join(format!("m{i}.png"))).unwrap();
        image::RgbImage::new(4, 4).save(dir.path().join(format!("v{i}.png"))).unwrap();
        views += &format!("[[metrics.views]]\nimage = \"v{i}.png\"\nmask = \"m{i}.png\"\n");
    }
    write(dir.path(), "run.toml", &format!("[metrics]\nsamples = \"samples.json\"\n{views}"));
    let out = run(dir.path(), &["--config", "run.toml", "--out", "o", "metrics"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let decay: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("o/decay.json")).unwrap()).unwrap();
    let phi = decay["fit"]["phi"].as_f64().unwrap();
    assert!((phi - std::f64::consts::LN_2 / 5.0).abs() < 1e-9, "{phi}");
    let visual: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("o/visual.json")).unwrap()).unwrap();
    assert_eq!(visual["s_v"].as_f64().unwrap(), 0.25);
    let plot: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("o/decay_plot.json")).unwrap()).unwrap();
    assert_eq!(plot["curve"].as_array().unwrap().len(), 50);
}

#[test]
fn metrics_empty_samples_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "samples.json", "[]");
    write(dir.path(), "run.toml", "[metrics]\nsamples = \"samples.json\"\n");
    let out = run(dir.path(), &["--config", "run.toml", "--out", "o", "metrics"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("o").exists());
    write(dir.path(), "samples.json", "");
    assert_eq!(run(dir.path(), &["--config", "run.toml", "--out", "o", "metrics"]).status.code(), Some(2));
}

#[test]
fn metrics_on_synthetic_room() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "run.toml", "[synthetic.scene]\ndensity = 60.0\n[metrics]\nepisodes_per_sigma = 60\nn_views = 4\n");
    let out = run(dir.path(), &["--config", "run.toml", "--out", "o", "metrics"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let decay: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("o/decay.json")).unwrap()).unwrap();
    assert_eq!(decay["source"], "synthetic");
    assert_eq!(decay["samples"].as_array().unwrap().len(), 9);
    let visual: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("o/visual.json")).unwrap()).unwrap();
    let s_v = visual["s_v"].as_f64().unwrap();
    assert!(s_v > 0.0 && s_v < 1.0 && visual["n_views"] == 4);
}

#[test]
fn render_grid_and_score_map_commands() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "run.toml", SMALL);
    let out = run(dir.path(), &["--config", "run.toml", "--out", "r", "render", "--pose", "0,-1,-1.57"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rgb = image::open(dir.path().join("r/rgb_main.png")).unwrap();
    let depth = image::open(dir.path().join("r/depth_main.png")).unwrap();
    assert_eq!((rgb.width(), rgb.height()), (128, 96));
    assert_eq!(depth.color(), image::ColorType::L16);
    assert!(dir.path().join("r/mask_main.png").exists());

    assert!(run(dir.path(), &["--config", "run.toml", "--out", "g", "build-grid"]).status.success());
    let grid = OccupancyGrid::load(&dir.path().join("g/grid.ogrd")).unwrap();
    assert_eq!(grid.dims(), (100, 100));
    let png = image::open(dir.path().join("g/grid.png")).unwrap();
    assert_eq!((png.width(), png.height()), (100, 100));

    assert!(run(dir.path(), &["--config", "run.toml", "--out", "o", "optimize"]).status.success());
    let out = run(dir.path(), &["--out", "s", "score-map", "--trace", "o/trace.jsonl", "--grid", "g/grid.ogrd", "--start", "0,-1.5,1.57"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let map = image::open(dir.path().join("s/score_map.png")).unwrap().to_rgb8();
    assert!(map.pixels().any(|p| *p == mobipose_cli::score_map::START));

    let out = run(dir.path(), &["score-map", "--trace", "missing.jsonl", "--grid", "g/grid.ogrd"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "trace not found");
}

#[test]
fn evaluate_small_suite() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "run.toml",
        "[harness]\nscenes = 1\nseeds = [0, 1]\nepisodes_per_scene = 4\nmethods = [\"naive\", \"teleport\"]\n[harness.scene]\ndensity = 60.0\n",
    );
    let out = run(dir.path(), &["--config", "run.toml", "--out", "o", "evaluate"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("o/report.json")).unwrap()).unwrap();
    assert_eq!(report["total_episodes"], 8);
    let reports = report["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[1]["method"], "teleport");
    assert_eq!(reports[1]["per_seed"].as_array().unwrap().len(), 2);
    let lines = std::fs::read_to_string(dir.path().join("o/episodes.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 16);

    let out = run(dir.path(), &["--config", "run.toml", "--seed", "7", "--out", "p", "evaluate"]);
    assert!(out.status.success());
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("p/report.json")).unwrap()).unwrap();
    assert_eq!(report["total_episodes"], 4);
}
