//! Subcommands, file formats and exit codes of the binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("lorentz-lens-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lorentz-lens"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("LLENS_CONFIG")
        .env_remove("LLENS_RTOL")
        .output()
        .unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn default_config_parses_back() {
    let dir = scratch("default");
    let o = run(&dir, &["default-config"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let path = dir.with_extension("toml");
    std::fs::write(&path, &text).unwrap();
    let o = run(&dir, &["--config", path.to_str().unwrap(), "check"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let _ = std::fs::remove_file(path);
    let _ = std::fs::remove_dir_all(dir);
}

#[test]
fn bad_config_exits_two_and_names_the_line() {
    let dir = scratch("bad");
    let path = dir.with_extension("toml");
    let text = String::from_utf8(run(&dir, &["default-config"]).stdout).unwrap();
    std::fs::write(&path, text.replace("directions = 9", "directions = -9")).unwrap();
    let o = run(&dir, &["--config", path.to_str().unwrap(), "check"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line"), "{err}");
    let _ = std::fs::remove_file(path);
}

#[test]
fn invalid_tolerance_override_is_an_error() {
    let dir = scratch("env");
    let o = Command::new(env!("CARGO_BIN_EXE_lorentz-lens"))
        .arg("--out")
        .arg(&dir)
        .arg("check")
        .env("LLENS_RTOL", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("LLENS_RTOL"));
}

#[test]
fn artifacts_are_listed_in_the_manifest() {
    let dir = scratch("artifacts");
    for cmd in ["check", "trace", "synth"] {
        let o = run(&dir, &["--strict", cmd]);
        assert!(
            o.status.success(),
            "{cmd}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let manifest = json(&dir.join("manifest.json"));
    assert_eq!(manifest["schema"], "lorentz-lens/manifest@1");
    for name in [
        "admissibility.json",
        "trajectories.csv",
        "events.csv",
        "trajectories.svg",
        "blinded.json",
        "truth.json",
    ] {
        let entry = &manifest["files"][name];
        let bytes = std::fs::read(dir.join(name)).unwrap();
        assert_eq!(entry["bytes"].as_u64(), Some(bytes.len() as u64), "{name}");
        assert_eq!(entry["sha256"].as_str().map(str::len), Some(64), "{name}");
    }
    assert_eq!(json(&dir.join("admissibility.json"))["pass"], true);
    assert_eq!(
        json(&dir.join("blinded.json"))["schema"],
        "lorentz-lens/blinded@1"
    );
    let events = std::fs::read_to_string(dir.join("events.csv")).unwrap();
    let header: Vec<&str> = events.lines().next().unwrap().split(',').collect();
    assert_eq!(&header[..3], &["traj_id", "k", "s"]);
    assert!(header.contains(&"shell_at_hit"));
    let svg = std::fs::read_to_string(dir.join("trajectories.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    let _ = std::fs::remove_dir_all(dir);
}

#[test]
fn reconstruct_reports_deltas_only_with_a_sidecar() {
    let dir = scratch("truth");
    assert!(run(&dir, &["synth"]).status.success());
    let truth = dir.join("truth.json");
    let o = run(&dir, &["reconstruct", "--truth", truth.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rec = json(&dir.join("reconstruction.json"));
    assert_eq!(rec["schema"], "lorentz-lens/reconstruction@1");
    assert_eq!(rec["summary"]["truth_available"], true);
    assert!(rec["summary"]["max_cone_delta"].as_f64().unwrap() < 1e-3);
    std::fs::remove_file(&truth).unwrap();
    let o = run(&dir, &["reconstruct", "--truth", truth.to_str().unwrap()]);
    assert!(o.status.success());
    let rec = json(&dir.join("reconstruction.json"));
    assert_eq!(rec["summary"]["truth_available"], false);
    assert!(rec["cones"]
        .as_array()
        .unwrap()
        .iter()
        .all(|c| c["delta"].is_null()));
    let _ = std::fs::remove_dir_all(dir);
}
