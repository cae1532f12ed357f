use std::path::Path;
use std::process::{Command, Output};

use overload_core::costmodel::{gen_synthetic, Scenario};
use overload_lab::formats;
use serde_json::Value;
use tempfile::TempDir;

fn overload(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_overload")).args(args).env_remove("OVERLOAD_SEED").output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = overload(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_is_deterministic_and_parses_back() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&["gen", "--n", "500", "--k-classes", "5", "--seed", "3", "--out", s(d)]);
    }
    for sc in Scenario::ALL {
        let name = format!("{}.csv", sc.name());
        assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap());
        let parsed = formats::read_candidates(&a.join(&name)).unwrap();
        assert_eq!(parsed.candidates, gen_synthetic(sc, 500, 5, 3).candidates);
    }
    assert_eq!(json(&a.join("manifest.json"))["command"], "gen");
}

#[test]
fn nms_threshold_sweep_and_cap() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    ok(&["gen", "--n", "1500", "--scenario", "worst,random", "--out", s(&data)]);

    let sweep = dir.path().join("sweep");
    ok(&["nms", "--input", s(&data.join("random.csv")), "--tiou", "0,0.45,0.8,1.0", "--out", s(&sweep)]);
    let reports = json(&sweep.join("reports.json"));
    let pairs: Vec<u64> = reports.as_array().unwrap().iter().map(|r| r["n_pairwise"].as_u64().unwrap()).collect();
    assert_eq!(pairs, vec![1500 * 1499 / 2; 4]);

    let capped = dir.path().join("capped");
    ok(&["nms", "--input", s(&data.join("worst.csv")), "--max-candidates", "1000", "--out", s(&capped)]);
    let r = &json(&capped.join("reports.json"))[0];
    assert_eq!(r["n_pairwise"].as_u64(), Some(499_500));
    assert_eq!(r["capped"], true);

    let greedy = dir.path().join("greedy");
    ok(&["nms", "--input", s(&data.join("random.csv")), "--kernel", "greedy", "--out", s(&greedy)]);
    assert_eq!(json(&greedy.join("reports.json"))[0]["kept"], reports[1]["kept"]);
}

#[test]
fn nms_on_empty_file() {
    let dir = TempDir::new().unwrap();
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    ok(&["nms", "--input", s(&empty), "--out", s(dir.path())]);
    let r = &json(&dir.path().join("reports.json"))[0];
    assert_eq!(r["n_input"], 0);
    assert_eq!(r["n_kept"], 0);
    assert_eq!(r["n_pairwise"], 0);
}

#[test]
fn bench_writes_samples_and_fit() {
    let dir = TempDir::new().unwrap();
    ok(&["bench", "--sizes", "100,1000,5000,10000", "--scenario", "worst", "--out", s(dir.path())]);
    let samples = formats::read_samples(&dir.path().join("samples.csv")).unwrap();
    assert_eq!(samples.iter().map(|t| t.n).collect::<Vec<_>>(), [100, 1000, 5000, 10000]);
    let fit: formats::FitRecord = formats::read_json(&dir.path().join("fit_worst.json")).unwrap();
    assert!(fit.alpha > 0.0 && fit.n_break > 100);
}

#[test]
fn bench_with_one_size_is_degenerate() {
    let dir = TempDir::new().unwrap();
    let out = overload(&["bench", "--sizes", "10", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(4));
    assert!(dir.path().join("samples.csv").exists());
}

#[test]
fn attack_outputs_and_manifest_replay() {
    let dir = TempDir::new().unwrap();
    let first = dir.path().join("first");
    ok(&["attack", "--seed-image", "9", "--k", "20", "--eps", "0.0314", "--loss", "log", "--out", s(&first)]);
    let summary = json(&first.join("summary.json"));
    assert!(summary["linf"].as_f64().unwrap() <= 0.0314);
    assert_eq!(summary["steps"], 20);
    let trace = std::fs::read_to_string(first.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 21);
    let manifest = json(&first.join("manifest.json"));
    assert_eq!(manifest["settings"]["epsilon"], 0.0314);
    assert_eq!(manifest["settings"]["steps"], 20);

    let replay = dir.path().join("replay");
    ok(&["attack", "--config", s(&first.join("manifest.json")), "--out", s(&replay)]);
    assert_eq!(std::fs::read(first.join("x_adv.ovl1")).unwrap(), std::fs::read(replay.join("x_adv.ovl1")).unwrap());

    let x_adv = formats::read_tensor(&first.join("x_adv.ovl1")).unwrap();
    assert_eq!((x_adv.height, x_adv.width, x_adv.channels), (64, 64, 3));
}

#[test]
fn attack_flags_and_ensemble() {
    let dir = TempDir::new().unwrap();
    ok(&["attack", "--k", "3", "--no-spatial-attention", "--loss", "neg_log_one_minus", "--out", s(dir.path())]);
    let m = json(&dir.path().join("manifest.json"));
    assert_eq!(m["settings"]["spatial_attention"], false);
    assert_eq!(m["settings"]["loss"], "neg_log_one_minus");

    let ens = dir.path().join("ens");
    ok(&["attack", "--k", "3", "--ensemble", "1,2", "--ensemble-mode", "round-robin", "--out", s(&ens)]);
    let summary = json(&ens.join("summary.json"));
    assert_eq!(summary["adv_counts"].as_array().unwrap().len(), 2);
    assert!(std::fs::read_to_string(ens.join("trace.csv")).unwrap().starts_with("step,loss,linf,in_range,min_weight,count_0,count_1"));
}

#[test]
fn attack_rejects_bad_image() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.ovl1");
    std::fs::write(&bad, b"OVL0").unwrap();
    assert_eq!(overload(&["attack", "--image", s(&bad), "--out", s(dir.path())]).status.code(), Some(3));
}

#[test]
fn simulate_baseline_and_sweep() {
    let dir = TempDir::new().unwrap();
    let base = dir.path().join("base");
    ok(&["simulate", "--ratio", "0", "--t-infer-ms", "20", "--t-base-ms", "1", "--t-trans-ms", "4", "--out", s(&base)]);
    let fps = json(&base.join("summary.json"))[0]["fps"].as_f64().unwrap();
    assert!((fps - 1.0 / 0.025).abs() / (1.0 / 0.025) < 1e-9);

    let sweep = dir.path().join("sweep");
    ok(&["simulate", "--n", "400", "--adv-candidates", "20000", "--timeout", "0.5", "--out", s(&sweep)]);
    let rows = json(&sweep.join("summary.json"));
    let means: Vec<f64> = rows.as_array().unwrap().iter().map(|r| r["mean_ms"].as_f64().unwrap()).collect();
    assert!(means.windows(2).all(|w| w[1] > w[0]), "{means:?}");
    let trace = std::fs::read_to_string(sweep.join("trace_r1.csv")).unwrap();
    assert!(trace.lines().skip(1).all(|l| l.ends_with(",true")));
}

#[test]
fn simulate_uses_fit_file_and_measured_mode() {
    let dir = TempDir::new().unwrap();
    let fit = dir.path().join("fit.json");
    std::fs::write(&fit, r#"{"alpha": 1e-8, "t_base_us": 2000.0, "n_break": 300, "r2": 1.0}"#).unwrap();
    ok(&["simulate", "--fit", s(&fit), "--ratio", "0", "--t-infer-ms", "10", "--out", s(dir.path())]);
    let m = json(&dir.path().join("manifest.json"));
    assert_eq!(m["settings"]["n_break"], 300);
    assert_eq!(m["settings"]["t_base_ms"], 2.0);

    let live = dir.path().join("live");
    ok(&["simulate", "--measured", "--n", "20", "--ratios", "0,1", "--adv-candidates", "2000", "--out", s(&live)]);
    let rows = json(&live.join("summary.json"));
    assert!(rows[1]["mean_ms"].as_f64() > rows[0]["mean_ms"].as_f64());
}

#[test]
fn config_file_and_precedence() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"n": 7, "k_classes": 2, "scenarios": ["best"], "seed": 5}"#).unwrap();
    ok(&["gen", "--config", s(&cfg), "--n", "9", "--out", s(dir.path())]);
    let m = json(&dir.path().join("manifest.json"));
    assert_eq!(m["settings"]["n"], 9);
    assert_eq!(m["settings"]["k_classes"], 2);
    assert_eq!(m["settings"]["seed"], 5);
    assert_eq!(formats::read_candidates(&dir.path().join("best.csv")).unwrap().len(), 9);
}

#[test]
fn seed_from_environment() {
    let dir = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_overload"))
        .args(["gen", "--what", "image", "--out", s(dir.path())])
        .env("OVERLOAD_SEED", "42")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(json(&dir.path().join("manifest.json"))["settings"]["seed"], 42);
    let img = formats::read_tensor(&dir.path().join("image.ovl1")).unwrap();
    assert_eq!(img, overload_core::detector::ImageTensor::noise(64, 64, 3, 42));
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    assert_eq!(overload(&["simulate", "--ratio", "1.5", "--out", s(dir.path())]).status.code(), Some(2));
    assert_eq!(overload(&["nms", "--out", s(dir.path())]).status.code(), Some(2));
    assert_eq!(overload(&["attack", "--eps", "0", "--out", s(dir.path())]).status.code(), Some(2));
    assert_eq!(overload(&["nms", "--input", "/definitely/missing.csv", "--out", s(dir.path())]).status.code(), Some(3));
    let bad_cfg = dir.path().join("bad.json");
    std::fs::write(&bad_cfg, "{not json").unwrap();
    assert_eq!(overload(&["gen", "--config", s(&bad_cfg), "--out", s(dir.path())]).status.code(), Some(2));
    assert_eq!(overload(&["frobnicate"]).status.code(), Some(2));
}
