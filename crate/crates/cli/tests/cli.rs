use std::path::Path;
use std::process::{Command, Output};

fn lpre(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lpre"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("spawn lpre")
}

#[test]
fn calibrate_writes_params() {
    let dir = tempfile::tempdir().unwrap();
    let o = lpre(&["calibrate"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("params.json").exists());
    assert!(dir.path().join("config.json").exists());
}

#[test]
fn refgen_writes_equilibrium() {
    let dir = tempfile::tempdir().unwrap();
    let o = lpre(&["refgen", "--pcc", "0.7"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let eq = std::fs::read_to_string(dir.path().join("equilibrium.csv")).unwrap();
    assert!(eq.lines().count() > 1);
}

#[test]
fn invalid_ratio_is_a_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = lpre(&["refgen", "--mr-cc", "-1"], dir.path());
    assert!(!o.status.success());
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert!(err["error"].is_string());
}

#[test]
fn unknown_config_key_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"closure": "nope", "bogus": 1}"#).unwrap();
    let o = lpre(&["calibrate", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(!o.status.success());
}

#[test]
fn unknown_controller_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = lpre(&["run", "--controller", "bangbang"], dir.path());
    assert!(!o.status.success());
}

#[test]
fn open_loop_run_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = lpre(&["run", "--controller", "ol", "--seed", "3"], d.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["trajectory.csv", "indicators.csv", "config.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
}
