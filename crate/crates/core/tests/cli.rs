use std::path::Path;
use std::process::Command;

const SMALL: &str = r#"
[train]
steps = 20
batch_size = 64
test_size = 1024
eval_every = 5
phi = 0.4

[train.calibration]
steps = 20
batch_size = 64

[oracle.grid]
num_space = 400
num_time = 200

[dynkin]
penalty = 1e4
"#;

fn optstop(dir: &Path, args: &[&str]) -> std::process::Output {
    let config = dir.join("config.toml");
    if !config.exists() {
        std::fs::write(&config, SMALL).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_optstop"))
        .arg("--config")
        .arg(&config)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn train_is_reproducible_and_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = optstop(tmp.path(), &["train", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let curve = read(a.join("train/learning_curve.csv"));
    assert_eq!(curve, read(b.join("train/learning_curve.csv")));
    assert!(curve.starts_with("step,loss,p_stopping,p_control,rel_err_stopping,rel_err_control,min_accuracy,elapsed_s"));
    assert_eq!(curve.lines().count(), 1 + 4);
    assert!(a.join("train/checkpoint").is_dir());
    let manifest: serde_json::Value = serde_json::from_str(&read(a.join("train/manifest.json"))).unwrap();
    assert_eq!(manifest["train_seed"], 1);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);

    let o = optstop(
        tmp.path(),
        &["price", "--checkpoint", a.join("train/checkpoint").to_str().unwrap(), "--out", a.to_str().unwrap()],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(report["p_stopping"].as_f64().unwrap() > 0.0);
}

#[test]
fn dynkin_demo_with_disabled_upper_matches_oracle_file() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let out_s = out.to_str().unwrap();
    assert!(optstop(tmp.path(), &["oracle", "--K", "1e4", "--out", out_s]).status.success());
    assert!(optstop(tmp.path(), &["dynkin-demo", "--out", out_s]).status.success());
    let oracle: serde_json::Value = serde_json::from_str(&read(out.join("oracle/oracle.json"))).unwrap();
    let demo: serde_json::Value = serde_json::from_str(&read(out.join("dynkin_demo/dynkin.json"))).unwrap();
    let (a, b) = (oracle["price"].as_f64().unwrap(), demo["price"].as_f64().unwrap());
    assert!((a - b).abs() <= 1e-6, "oracle {a} game {b}");
    assert!(read(out.join("oracle/boundary.csv")).starts_with("t,x_f"));
    assert!(read(out.join("dynkin_demo/game_t0.csv")).starts_with("x,w,nu,mu"));
}

#[test]
fn calibrate_phi_with_zero_steps_writes_initial_row() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = optstop(tmp.path(), &["calibrate-phi", "--steps", "0", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let trace = read(out.join("calibrate_phi/phi_trace.csv"));
    assert_eq!(trace.lines().count(), 2, "{trace}");
    assert!(trace.starts_with("step,phi,loss"));
}

#[test]
fn invalid_penalty_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let o = optstop(tmp.path(), &["train", "--K", "100", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("K"));
}

#[test]
fn unknown_config_key_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("config.toml"), "[train]\nstepz = 3\n").unwrap();
    let o = optstop(tmp.path(), &["oracle"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_writes_one_row_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = optstop(tmp.path(), &["sweep", "--axis", "K", "--values", "1,10", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = read(out.join("sweep_K/sweep.csv"));
    assert_eq!(table.lines().count(), 3, "{table}");
}
