use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

fn case(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("cases").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_safegauge")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Nine-bus certificate synthesized once and shared by the tests.
fn nine_bus_cert() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    let dir = DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        let o = run(&["synth", "--case", case("nine_bus.json").to_str().unwrap(), "--out", out]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        dir
    });
    dir.path()
}

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.json");
    let cfg = serde_json::json!({
        "train": { "episodes": 2, "steps_per_episode": 30, "batch_size": 16, "warmup": 20, "hidden": [16, 16] },
        "eval": { "episodes": 3, "steps": 20 }
    });
    fs::write(&path, cfg.to_string()).unwrap();
    path
}

#[test]
fn scalar_synth_gives_the_full_interval() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["synth", "--case", case("scalar_toy.json").to_str().unwrap(), "--out", out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cert = read_json(&dir.path().join("certificate.json"));
    let vs = cert["Vs"][0][0].as_f64().unwrap();
    let s = cert["s_bar"][0].as_f64().unwrap();
    assert!((s / vs.abs() - 1.0).abs() < 1e-12);
    assert_eq!(cert["K"][0][0].as_f64().unwrap(), 0.0);
    assert!(dir.path().join("synth_report.json").exists());
}

#[test]
fn disconnected_case_is_invalid_input() {
    let dir = tempfile::tempdir().unwrap();
    let mut value = read_json(&case("nine_bus.json"));
    let lines = value["lines"].as_array().unwrap()[..2].to_vec();
    value["lines"] = Value::Array(lines);
    let path = dir.path().join("broken.json");
    fs::write(&path, value.to_string()).unwrap();
    let o = run(&["synth", "--case", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn unknown_flag_is_invalid_input() {
    assert_eq!(code(&run(&["synth", "--no-such-flag"])), 2);
    assert_eq!(code(&run(&["verify"])), 2);
}

#[test]
fn verify_accepts_and_rejects() {
    let certdir = nine_bus_cert();
    let nine = case("nine_bus.json");
    let cert = certdir.join("certificate.json");
    let o = run(&["verify", "--case", nine.to_str().unwrap(), "--cert", cert.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("certificate valid"));

    let dir = tempfile::tempdir().unwrap();
    let mut value = read_json(&cert);
    for s in value["s_bar"].as_array_mut().unwrap() {
        *s = Value::from(s.as_f64().unwrap() * 2.0);
    }
    let tampered = dir.path().join("tampered.json");
    fs::write(&tampered, value.to_string()).unwrap();
    let o = run(&["verify", "--case", nine.to_str().unwrap(), "--cert", tampered.to_str().unwrap()]);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stdout).contains("violated"));
}

#[test]
fn smoke_train_eval_rollout() {
    let certdir = nine_bus_cert();
    let nine = case("nine_bus.json");
    let cert = certdir.join("certificate.json");
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("run");
    let base = ["--case", nine.to_str().unwrap(), "--cert", cert.to_str().unwrap(), "--config", cfg.to_str().unwrap()];
    let with = |extra: &[&str], out: &Path| {
        let mut args: Vec<&str> = extra.to_vec();
        args.extend(base);
        args.extend(["--out", out.to_str().unwrap()]);
        let o = run(&args);
        assert_eq!(code(&o), 0, "{:?}: {}", extra, String::from_utf8_lossy(&o.stderr));
        o
    };

    with(&["train", "--episodes", "1", "--steps", "1"], &out);
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert!(lines[0].starts_with("# config_hash="));
    assert_eq!(lines[1], "episode,accum_cost,max_angle_dev,violations,wallclock_s");
    assert_eq!(lines.len(), 3);

    // Reproducible byte for byte.
    let again = dir.path().join("again");
    with(&["train"], &out);
    with(&["train"], &again);
    for f in ["metrics.csv", "max_angle.csv", "actor.json", "summary.json"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["total_violations"].as_u64(), Some(0));

    let actor = out.join("actor.json");
    let eval_dir = dir.path().join("eval");
    let o = with(&["eval", "--paired", "--actor", actor.to_str().unwrap()], &eval_dir);
    assert!(String::from_utf8_lossy(&o.stdout).contains("safe"));
    let es = read_json(&eval_dir.join("eval_summary.json"));
    let policies = es["policies"].as_array().unwrap();
    assert_eq!(policies.len(), 2);
    for p in policies {
        assert_eq!(p["total_violations"].as_u64(), Some(0));
    }
    assert!(eval_dir.join("paired_costs.csv").exists() && eval_dir.join("angle_trajectories.csv").exists());

    // The linear policy evaluated on its own matches its paired column.
    let lin_dir = dir.path().join("lin");
    with(&["eval", "--policy", "linear"], &lin_dir);
    let lin = read_json(&lin_dir.join("eval_summary.json"));
    assert_eq!(lin["policies"][0]["mean_cost"], policies[0]["mean_cost"]);

    let roll = dir.path().join("roll");
    with(&["rollout", "--policy", "safe", "--actor", actor.to_str().unwrap(), "--steps", "5"], &roll);
    let traj = fs::read_to_string(roll.join("trajectory_safe.csv")).unwrap();
    assert_eq!(traj.lines().count(), 2 + 5);
}

#[test]
fn checkpoint_from_another_certificate_is_rejected() {
    let certdir = nine_bus_cert();
    let nine = case("nine_bus.json");
    let cert = certdir.join("certificate.json");
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let common = ["--case", nine.to_str().unwrap(), "--config", cfg.to_str().unwrap()];
    let mut args = vec!["train", "--episodes", "1", "--steps", "1", "--cert", cert.to_str().unwrap()];
    args.extend(common);
    args.extend(["--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&run(&args)), 0);
    // Same certificate content, different bytes.
    let copy = dir.path().join("cert_copy.json");
    let pretty = serde_json::to_string_pretty(&read_json(&cert)).unwrap() + "\n\n";
    fs::write(&copy, pretty).unwrap();
    let actor = dir.path().join("actor.json");
    let mut args = vec!["eval", "--policy", "safe", "--actor", actor.to_str().unwrap(), "--cert", copy.to_str().unwrap()];
    args.extend(common);
    args.extend(["--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&run(&args)), 2);
}
