use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn kpseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kpseg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn error_json(o: &Output) -> Value {
    let err = String::from_utf8_lossy(&o.stderr);
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "expected one error line, got {err:?}");
    serde_json::from_str(lines[0]).expect("error line is JSON")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small, fast scenes for command plumbing tests.
fn small_data(dir: &Path, scenes: usize, seed: u64) {
    let o = kpseg(&[
        "gen-data",
        "--scenes",
        &scenes.to_string(),
        "--seed",
        &seed.to_string(),
        "--extent",
        "12",
        "--density",
        "6",
        "--out",
        p(dir),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().into_string().unwrap(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn gen_data_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    small_data(&a, 2, 7);
    small_data(&b, 2, 7);
    let (fa, fb) = (read_dir_sorted(&a), read_dir_sorted(&b));
    assert_eq!(fa.len(), 4);
    assert_eq!(fa, fb);
}

#[test]
fn usage_errors_exit_two() {
    let o = kpseg(&["gen-data", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(kpseg(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(kpseg(&["gen-data"]).status.code(), Some(2), "missing --out");
}

#[test]
fn config_errors_name_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    small_data(&data, 1, 1);
    for (text, key) in [
        (r#"{"stack_depth": 0}"#, "stack_depth"),
        (r#"{"stack_dpeth": 2}"#, "stack_dpeth"),
        (r#"{"lr": "high"}"#, "lr"),
    ] {
        let cfg = tmp.path().join("cfg.json");
        fs::write(&cfg, text).unwrap();
        let o = kpseg(&[
            "train",
            "--config",
            p(&cfg),
            "--data",
            p(&data),
            "--steps",
            "1",
            "--out",
            p(&tmp.path().join("run")),
        ]);
        assert_eq!(o.status.code(), Some(1));
        let e = error_json(&o);
        assert_eq!(e["error"], "config");
        assert!(e["message"].as_str().unwrap().contains(key), "{e}");
    }
}

#[test]
fn missing_input_is_a_json_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = kpseg(&[
        "grid-sample",
        "--input",
        p(&tmp.path().join("nope.kpc")),
        "--out",
        p(&tmp.path().join("x.kpc")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_json(&o)["error"], "io");
}

#[test]
fn grad_check_passes() {
    let o = kpseg(&["grad-check", "--seed", "3"]);
    assert!(o.status.success());
    let lines: Vec<Value> = stdout(&o)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(lines.len() >= 7);
    for l in &lines {
        assert_eq!(l["pass"], true, "{l}");
        assert!(l["max_rel_error"].as_f64().unwrap() < 1e-4);
    }
    assert!(lines.iter().any(|l| l["layer"] == "kpconv"));
}

#[test]
fn pattern_coverage_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("cov.json");
    let o = kpseg(&[
        "pattern",
        "--duration",
        "0.1",
        "--coverage",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success());
    let report: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    let c = report["coverage"].as_f64().unwrap();
    assert!((0.15..=0.25).contains(&c), "{c}");
    assert_eq!(report["grid_res"], 64);
    assert_eq!(fs::read_to_string(&out).unwrap().trim(), stdout(&o).trim());

    let dirs = tmp.path().join("dirs.xyz");
    let o = kpseg(&["pattern", "--duration", "0.01", "--out", p(&dirs)]);
    assert!(o.status.success());
    assert_eq!(
        fs::read_to_string(&dirs)
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with('#'))
            .count(),
        1000
    );
}

#[test]
fn grid_sample_writes_cloud() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    small_data(&data, 1, 2);
    let out = tmp.path().join("sub.ply");
    let o = kpseg(&[
        "grid-sample",
        "--input",
        p(&data.join("scene_000.kpc")),
        "--cell",
        "0.5",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success());
    let v: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert!(v["output_points"].as_u64().unwrap() < v["input_points"].as_u64().unwrap());
    assert!(fs::read_to_string(&out).unwrap().starts_with("ply"));
}

#[test]
fn train_eval_predict_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    small_data(&data, 1, 4);
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"batch_spheres": 2, "sphere_radius": 3.0}"#).unwrap();
    let train = |run: &str| {
        let out = tmp.path().join(run);
        let o = kpseg(&[
            "train",
            "--preset",
            "tiny",
            "--config",
            p(&cfg),
            "--data",
            p(&data),
            "--steps",
            "3",
            "--seed",
            "7",
            "--workers",
            "1",
            "--out",
            p(&out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let first: Value = serde_json::from_str(stdout(&o).lines().next().unwrap()).unwrap();
        assert_eq!(
            first["config"]["channels"],
            serde_json::json!([8, 16, 32, 64, 128])
        );
        assert_eq!(first["config"]["batch_spheres"], 2);
        out
    };
    let (a, b) = (train("a"), train("b"));
    let log = fs::read_to_string(a.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert_eq!(log, fs::read_to_string(b.join("train_log.jsonl")).unwrap());
    assert_eq!(
        fs::read(a.join("checkpoint.kpck")).unwrap(),
        fs::read(b.join("checkpoint.kpck")).unwrap()
    );

    let ck = a.join("checkpoint.kpck");
    let metrics = tmp.path().join("m");
    let o = kpseg(&[
        "eval",
        "--checkpoint",
        p(&ck),
        "--data",
        p(&data),
        "--out",
        p(&metrics),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: Value =
        serde_json::from_str(&fs::read_to_string(metrics.join("metrics.json")).unwrap()).unwrap();
    let oa = m["oa"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&oa));
    assert!(m["iou"]["natural"].is_number() || m["iou"]["natural"].is_null());
    assert!(fs::read_to_string(metrics.join("metrics.txt"))
        .unwrap()
        .contains("mIoU"));

    let pred = tmp.path().join("pred.xyz");
    let o = kpseg(&[
        "predict",
        "--checkpoint",
        p(&ck),
        "--input",
        p(&data.join("scene_000.kpc")),
        "--out",
        p(&pred),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    let n = v["points"].as_u64().unwrap() as usize;
    assert_eq!(
        fs::read_to_string(&pred)
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with('#'))
            .count(),
        n
    );

    // Resuming continues the step counter.
    let c = tmp.path().join("c");
    let o = kpseg(&[
        "train",
        "--preset",
        "tiny",
        "--config",
        p(&cfg),
        "--data",
        p(&data),
        "--steps",
        "1",
        "--seed",
        "7",
        "--resume",
        p(&ck),
        "--out",
        p(&c),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let line: Value = serde_json::from_str(
        fs::read_to_string(c.join("train_log.jsonl"))
            .unwrap()
            .trim(),
    )
    .unwrap();
    assert_eq!(line["step"], 3);
}
