use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn avb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avb"))
        .args(args)
        .env("AVB_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SBM: &str = r#"
kind = "sbm"
[data]
source = "builtin"
n = 24
blocks = 2
p_in = 0.9
p_out = 0.1
[grid]
components = [1, 2, 3]
[seeds]
master = 4
repeats = 2
"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn run_then_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sbm.toml", SBM);
    let out = dir.path().join("out");
    let o = avb(&["run", &cfg, "--jobs", "1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["run_000.json", "run_001.json", "summary.json", "labels_000.csv"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("run_000.json")).unwrap()).unwrap();
    assert_eq!(run["schema_version"], 1);

    let r = avb(&["replay", out.join("run_001.json").to_str().unwrap()]);
    assert!(r.status.success());
    assert!(stdout(&r).contains("consistent"));
}

#[test]
fn seed_override_changes_the_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sbm.toml", SBM);
    let read = |seed: &str| {
        let out = dir.path().join(format!("s{seed}"));
        let o = avb(&["run", &cfg, "--seed", seed, "--out", out.to_str().unwrap()]);
        assert!(o.status.success());
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("run_000.json")).unwrap()).unwrap();
        v["seed"].clone()
    };
    assert_ne!(read("1"), read("2"));
}

#[test]
fn replay_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sbm.toml", SBM);
    let out = dir.path().join("out");
    assert!(avb(&["run", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let path = out.join("run_000.json");
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    let e = v["models"][0]["elbo"]["total"].as_f64().unwrap();
    v["models"][0]["elbo"]["total"] = serde_json::json!(e - 50.0);
    fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
    let r = avb(&["replay", path.to_str().unwrap()]);
    assert!(!r.status.success());
    assert!(stdout(&r).contains("INCONSISTENT"));
}

#[test]
fn validate_accepts_shipped_configs() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(root).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            let o = avb(&["validate", p.to_str().unwrap()]);
            assert!(o.status.success(), "{}: {}", p.display(), String::from_utf8_lossy(&o.stderr));
            seen += 1;
        }
    }
    assert!(seen >= 4);
}

#[test]
fn validate_rejects_bad_configs() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write(dir.path(), "a.toml", &SBM.replace("[seeds]", "[seeds]\nmastr = 3"));
    let empty = write(dir.path(), "b.toml", &SBM.replace("components = [1, 2, 3]", "components = []"));
    for cfg in [unknown, empty] {
        let o = avb(&["validate", &cfg]);
        assert!(!o.status.success());
        assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    }
}

#[test]
fn csv_regression_input() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("x,y\n");
    for i in 0..60 {
        let x = i as f64 / 59.0;
        text += &format!("{x},{}\n", (3.0 * x).sin());
    }
    write(dir.path(), "data.csv", &text);
    let cfg = write(
        dir.path(),
        "reg.toml",
        r#"
kind = "deep_regression"
[data]
source = "csv"
path = "data.csv"
target = "y"
[grid]
depths = [2]
widths = [2, 3]
[optimizer]
epochs = 20
[seeds]
master = 1
"#,
    );
    let out = dir.path().join("out");
    let o = avb(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("run_000.json")).unwrap()).unwrap();
    assert_eq!(v["standardization"]["columns"][0], "x");
    assert!(out.join("predictive_000.csv").is_file());

    write(dir.path(), "data.csv", "x,y\n0.1,0.2\n0.3,oops\n");
    let o = avb(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}
