use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SIX_ROWS: &str = "feature_0,treatment,conversion,profit,propensity
1,0,0,0,0.5
1,0,0,0,0.5
1,0,1,10,0.5
1,1,0,0,0.5
1,1,1,8,0.5
1,1,1,8,0.5
";

const SMALL: &str = "[campaign]\nn = 3000\ncontrol_conversion_rate = 0.2\n[gbm]\nmax_iterations = 30\n";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ipc-bench"));
    c.env("IPC_THREADS", "1");
    c
}

fn run(c: &mut Command) -> Output {
    c.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).display().to_string()
}

fn z_column(csv: &str) -> Vec<String> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().to_string())
        .collect()
}

#[test]
fn transform_six_rows() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "six.csv", SIX_ROWS);
    let out = path(&dir, "z.csv");

    let o = run(bin().args(["transform", "--data", &data, "--method", "ipc", "--out", &out]));
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next().unwrap(), "feature_0,z,source_row_index");
    assert_eq!(z_column(&text), ["-20", "16", "16"]);

    let o = run(bin().args(["transform", "--data", &data, "--method", "crvtw", "--out", &out]));
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 7);
}

#[test]
fn transform_without_conversions_warns() {
    let dir = TempDir::new().unwrap();
    let data = write(
        &dir,
        "none.csv",
        "feature_0,treatment,conversion,profit,propensity\n1,0,0,0,0.5\n1,1,0,0,0.5\n",
    );
    let out = path(&dir, "z.csv");
    let o = run(bin().args(["transform", "--data", &data, "--method", "ipc", "--out", &out]));
    assert!(o.status.success());
    assert!(stderr(&o).contains("warning"));
    assert_eq!(fs::read_to_string(&out).unwrap(), "feature_0,z,source_row_index\n");
}

#[test]
fn transform_rejects_other_methods_and_invalid_data() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "six.csv", SIX_ROWS);
    let out = path(&dir, "z.csv");
    let o = run(bin().args(["transform", "--data", &data, "--method", "tlearner", "--out", &out]));
    assert_eq!(o.status.code(), Some(1));

    let bad = write(
        &dir,
        "bad.csv",
        "feature_0,treatment,conversion,profit,propensity\n1,0,0,5,0.5\n1,1,1,2,1.0\n",
    );
    let o = run(bin().args(["transform", "--data", &bad, "--method", "ipc", "--out", &out]));
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("row 0") && err.contains("row 1"), "{err}");
    assert!(!Path::new(&out).exists());
}

#[test]
fn gen_writes_dataset_and_truth_reproducibly() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.toml", SMALL);
    let (a, b, t) = (path(&dir, "a.csv"), path(&dir, "b.csv"), path(&dir, "t.csv"));
    let o = run(bin().args(["gen", "--config", &cfg, "--seed", "4", "--out", &a, "--truth", &t]));
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("control") && stdout.contains("treated"));
    assert_eq!(fs::read_to_string(&a).unwrap().lines().count(), 3001);
    assert_eq!(fs::read_to_string(&t).unwrap().lines().count(), 3001);

    run(bin().args(["gen", "--config", &cfg, "--seed", "4", "--out", &b]));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    run(bin().args(["gen", "--config", &cfg, "--seed", "5", "--out", &b]));
    assert_ne!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn gen_with_zero_rows_writes_header_and_warns() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.toml", "[campaign]\nn = 0\n");
    let out = path(&dir, "d.csv");
    let o = run(bin().args(["gen", "--config", &cfg, "--out", &out]));
    assert!(o.status.success());
    assert!(stderr(&o).contains("warning"));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("feature_0,"));
}

#[test]
fn gen_to_unwritable_path_fails_cleanly() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.toml", SMALL);
    let missing = dir.path().join("no/such/dir/d.csv");
    let o = run(bin().args(["gen", "--config", &cfg, "--out", missing.to_str().unwrap()]));
    assert_eq!(o.status.code(), Some(1));
    assert!(!missing.exists());
    // nothing left beside the config
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn bad_config_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.toml", "[campaign]\nnn = 3\n");
    let o = run(bin().args(["gen", "--config", &cfg, "--out", &path(&dir, "d.csv")]));
    assert_eq!(o.status.code(), Some(1));
    let o = run(bin().args(["gen", "--config", &path(&dir, "absent.toml"), "--out", &path(&dir, "d.csv")]));
    assert_eq!(o.status.code(), Some(1));
}

fn generated(dir: &TempDir) -> (String, String, String) {
    let cfg = write(dir, "c.toml", SMALL);
    let (data, truth) = (path(dir, "d.csv"), path(dir, "t.csv"));
    let o = run(bin().args(["gen", "--config", &cfg, "--seed", "1", "--out", &data, "--truth", &truth]));
    assert!(o.status.success());
    (cfg, data, truth)
}

#[test]
fn bench_report_shape_and_config_echo() {
    let dir = TempDir::new().unwrap();
    let (cfg, data, truth) = generated(&dir);
    let (report, curves) = (path(&dir, "r.json"), path(&dir, "q.csv"));
    let o = run(bin().args([
        "bench", "--data", &data, "--config", &cfg, "--methods", "ipc,tlearner", "--folds", "5", "--out", &report,
        "--curves", &curves, "--truth", &truth,
    ]));
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("ipc") && stdout.contains("tlearner") && stdout.contains("vs ipc"));

    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let methods = v["methods"].as_array().unwrap();
    let names: Vec<&str> = methods.iter().map(|m| m["method"].as_str().unwrap()).collect();
    assert_eq!(names, ["ipc", "tlearner", "random", "oracle"]);
    for m in methods {
        let folds = m["folds"].as_array().unwrap();
        assert_eq!(folds.len(), 5);
        for f in folds {
            assert!(f["qini"].is_f64());
            assert!(f["seconds"].as_f64().unwrap() > 0.0);
        }
    }
    assert_eq!(v["config"]["campaign"]["n"], 3000);
    assert_eq!(v["config"]["gbm"]["max_iterations"], 30);
    assert_eq!(v["config"]["gbm"]["learning_rate"], 0.1);
    assert_eq!(v["config"]["folds"], 5);

    let curve_text = fs::read_to_string(&curves).unwrap();
    assert_eq!(curve_text.lines().next().unwrap(), "method,fraction,value,normalized_value");
    assert!(curve_text.lines().any(|l| l.starts_with("tlearner,1,")));
}

#[test]
fn bench_holdout_and_oracle() {
    let dir = TempDir::new().unwrap();
    let (_, data, truth) = generated(&dir);
    let report = path(&dir, "r.json");
    let o = run(bin().args([
        "bench", "--data", &data, "--methods", "ipc,oracle", "--holdout", "0.3", "--truth", &truth, "--out",
        &report,
    ]));
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    for m in v["methods"].as_array().unwrap() {
        assert_eq!(m["folds"].as_array().unwrap().len(), 1);
    }
    assert_eq!(v["split"]["holdout"], 0.3);
}

#[test]
fn bench_non_timing_output_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let (cfg, data, _) = generated(&dir);
    let strip = |p: &str| {
        let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap();
        for m in v["methods"].as_array_mut().unwrap() {
            for f in m["folds"].as_array_mut().unwrap() {
                f["seconds"] = serde_json::Value::Null;
            }
        }
        v["config"]["output"] = serde_json::Value::Null;
        v
    };
    let (a, b) = (path(&dir, "a.json"), path(&dir, "b.json"));
    let (ca, cb) = (path(&dir, "a.csv"), path(&dir, "b.csv"));
    for (r, c) in [(&a, &ca), (&b, &cb)] {
        let o = run(bin().args([
            "bench", "--data", &data, "--config", &cfg, "--methods", "ipc,retro", "--seed", "9", "--out", r,
            "--curves", c,
        ]));
        assert!(o.status.success());
    }
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(fs::read(&ca).unwrap(), fs::read(&cb).unwrap());
}

#[test]
fn bench_unknown_method_names_it() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "six.csv", SIX_ROWS);
    let o = run(bin().args(["bench", "--data", &data, "--methods", "ipc,causal-forest"]));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("causal-forest"));
}

#[test]
fn bench_oracle_without_truth_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let (_, data, _) = generated(&dir);
    let o = run(bin().args(["bench", "--data", &data, "--methods", "oracle"]));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bench_all_methods_failing_exits_3() {
    let dir = TempDir::new().unwrap();
    let (cfg, data, _) = generated(&dir);
    // propensity 0.4 everywhere: RDT cannot run
    let text = fs::read_to_string(&data).unwrap();
    let skewed: String = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i == 0 {
                format!("{l}\n")
            } else {
                let (head, _) = l.rsplit_once(',').unwrap();
                format!("{head},0.4\n")
            }
        })
        .collect();
    let data = write(&dir, "skewed.csv", &skewed);
    let report = path(&dir, "r.json");
    let o = run(bin().args([
        "bench", "--data", &data, "--config", &cfg, "--methods", "rdt", "--folds", "2", "--out", &report,
    ]));
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    // the failures are still reported
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert!(v["methods"][0]["folds"][0]["error"].is_string());

    let o = run(bin().args([
        "bench", "--data", &data, "--config", &cfg, "--methods", "rdt,ipc", "--folds", "2",
    ]));
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn bench_invalid_data_exits_2() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "bad.csv", "feature_0,treatment,conversion,profit,propensity\n1,2,0,0,0.5\n");
    let o = run(bin().args(["bench", "--data", &data, "--methods", "ipc"]));
    assert_eq!(o.status.code(), Some(2));
}
