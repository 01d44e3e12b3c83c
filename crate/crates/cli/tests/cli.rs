use std::path::Path;
use std::process::{Command, Output};

use lidarprop::ingest::{generate_scene, random_scene_spec, write_velodyne, RandomSceneConfig};
use lidarprop::PointCloud;

fn lidarprop(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lidarprop"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

fn csv_rows(path: impl AsRef<Path>) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect()
}

const SMALL_NET: &str = "n_points = 32\npoint_widths = 16 32\nhead_widths = 16\nlearning_rate = 0.005\naugment = false\n";

/// A car on open ground plus a pole, both well sampled.
const ONE_CAR: &str = "object = car 9 5 box 4.2 1.8 1.5 0 0.3\nobject = background 12 -6 cylinder 0.12 4\n";

#[test]
fn empty_cloud_gives_header_only_csv() {
    let dir = tempfile::tempdir().unwrap();
    write_velodyne(dir.path().join("empty.bin"), &PointCloud::new(Vec::new())).unwrap();
    let out = lidarprop(dir.path(), &["detect", "--no-classify", "empty.bin", "-o", "out"]);
    ok(&out);
    let text = read(dir.path().join("out/detections/empty.csv"));
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("proposal_id,class,probability"));
}

#[test]
fn no_classify_marks_proposals_unclassified() {
    let dir = tempfile::tempdir().unwrap();
    ok(&lidarprop(dir.path(), &["detect", "--synthetic", "1", "--no-classify", "--bev", "-o", "out"]));
    let rows = csv_rows(dir.path().join("out/detections/000000.csv"));
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r[1] == "unclassified" && r[2].is_empty()));
    assert!(dir.path().join("out/bev/000000.png").is_file());
    let manifest: serde_json::Value = serde_json::from_str(&read(dir.path().join("out/manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "detect");
    assert_eq!(manifest["input_digest"].as_str().unwrap().len(), 64);
}

#[test]
fn detection_without_model_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = lidarprop(dir.path(), &["detect", "--synthetic", "1", "-o", "out"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--no-classify"));
}

#[test]
fn bad_file_fails_its_frame_only() {
    let dir = tempfile::tempdir().unwrap();
    let scene = generate_scene(&random_scene_spec(&RandomSceneConfig::default(), 3), 3).unwrap();
    std::fs::create_dir(dir.path().join("in")).unwrap();
    write_velodyne(dir.path().join("in/a.bin"), &scene.cloud).unwrap();
    std::fs::write(dir.path().join("in/b.bin"), [0u8; 10]).unwrap();
    let out = lidarprop(dir.path(), &["detect", "--no-classify", "in", "-o", "out"]);
    assert!(!out.status.success());
    let rows = csv_rows(dir.path().join("out/summary.csv"));
    assert_eq!((rows[0][0].as_str(), rows[0][1].as_str()), ("a", "ok"));
    assert_eq!((rows[1][0].as_str(), rows[1][1].as_str()), ("b", "failed"));
    assert!(dir.path().join("out/detections/a.csv").is_file());
    assert!(dir.path().join("out/manifest.json").is_file());
}

#[test]
fn detection_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for o in ["a", "b"] {
        ok(&lidarprop(dir.path(), &["detect", "--synthetic", "2", "--seed", "5", "--no-classify", "-o", o]));
    }
    for f in ["000000.csv", "000001.csv"] {
        assert_eq!(read(dir.path().join("a/detections").join(f)), read(dir.path().join("b/detections").join(f)));
    }
}

#[test]
fn overfit_model_labels_the_car() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("net.conf"), SMALL_NET).unwrap();
    std::fs::write(dir.path().join("scene.conf"), ONE_CAR).unwrap();
    let scene = ["--synthetic", "1", "--scene", "scene.conf"];
    let mut args = vec!["train", "-c", "net.conf", "--epochs", "300", "-o", "model"];
    args.extend(scene);
    ok(&lidarprop(dir.path(), &args));
    let mut args = vec!["detect", "-c", "net.conf", "--model", "model/model.bin", "-o", "det"];
    args.extend(scene);
    ok(&lidarprop(dir.path(), &args));
    let rows = csv_rows(dir.path().join("det/detections/000000.csv"));
    let cars: Vec<_> = rows.iter().filter(|r| r[1] == "car").collect();
    assert_eq!(cars.len(), 1, "{rows:?}");
    let (min_x, max_x): (f64, f64) = (cars[0][3].parse().unwrap(), cars[0][6].parse().unwrap());
    assert!(min_x > 6.0 && max_x < 12.0);
    assert!(cars[0][2].parse::<f64>().unwrap() > 0.9, "{rows:?}");
}

#[test]
fn tune_history_and_tuned_config_feed_detect() {
    let dir = tempfile::tempdir().unwrap();
    ok(&lidarprop(dir.path(), &["tune", "--synthetic", "5", "--particles", "5", "--generations", "10", "-o", "tune"]));
    let rows = csv_rows(dir.path().join("tune/history.csv"));
    assert_eq!(rows.len(), 10);
    let best: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(best.windows(2).all(|w| w[1] >= w[0]), "{best:?}");
    assert!(read(dir.path().join("tune/tuned.conf")).contains("h_d = "));
    ok(&lidarprop(dir.path(), &["detect", "-c", "tune/tuned.conf", "--synthetic", "1", "--no-classify", "-o", "det"]));
}

#[test]
fn eval_writes_recall_report() {
    let dir = tempfile::tempdir().unwrap();
    ok(&lidarprop(dir.path(), &["eval", "--synthetic", "2", "--iou", "0.25", "-o", "ev"]));
    let rows = csv_rows(dir.path().join("ev/recall.csv"));
    let total = rows.last().unwrap();
    assert_eq!(total[0], "total");
    let (tp, fn_): (f64, f64) = (total[1].parse().unwrap(), total[2].parse().unwrap());
    let recall: f64 = total[4].parse().unwrap();
    assert!((recall - tp / (tp + fn_)).abs() < 1e-6);
    assert!(dir.path().join("ev/recall_unfiltered.csv").is_file());
}

#[test]
fn eval_needs_labels() {
    let dir = tempfile::tempdir().unwrap();
    write_velodyne(dir.path().join("x.bin"), &PointCloud::new(Vec::new())).unwrap();
    assert!(!lidarprop(dir.path(), &["eval", "x.bin", "-o", "ev"]).status.success());
    assert!(!lidarprop(dir.path(), &["eval", "-o", "ev"]).status.success());
}

#[test]
fn bench_records_one_thread() {
    let dir = tempfile::tempdir().unwrap();
    ok(&lidarprop(dir.path(), &["bench", "--synthetic", "4", "--threads", "1", "-o", "b"]));
    let text = read(dir.path().join("b/timing.csv"));
    assert!(text.lines().any(|l| l == "threads,1"), "{text}");
    assert!(text.lines().any(|l| l == "frames,1"));
}

#[test]
fn unknown_settings_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.conf"), "hd = 0.4\n").unwrap();
    let out = lidarprop(dir.path(), &["detect", "-c", "bad.conf", "--synthetic", "1", "--no-classify"]);
    assert!(!out.status.success());
    let out = lidarprop(dir.path(), &["detect", "--set", "hd=0.4", "--synthetic", "1", "--no-classify"]);
    assert!(!out.status.success());
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.conf"), "d_o = 0.4\nh_d = 0.3\n").unwrap();
    let args = ["detect", "-c", "a.conf", "--set", "d_o=0.2", "--seed", "9", "--synthetic", "1", "--no-classify", "-o", "o"];
    ok(&lidarprop(dir.path(), &args));
    let conf = read(dir.path().join("o/settings.conf"));
    assert!(conf.contains("d_o = 0.2\n") && conf.contains("h_d = 0.3\n") && conf.contains("seed = 9\n"), "{conf}");
}
