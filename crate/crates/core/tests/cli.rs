//! Behaviour of the `dmimo` binary: exit codes, JSON errors, manifests and
//! the read-only treatment of inputs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dmimo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dmimo")).args(args).env("DMIMO_THREADS", "1").output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr_json(o: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|_| panic!("stderr is not JSON: {text}"))
}

/// Short cluttered walk written as scene, raw archive and, optionally, without truth.
fn simulate(dir: &Path, no_truth: bool) -> PathBuf {
    let scene = dir.join("scene.json");
    let out = dmimo(&["scene", "--preset", "ref", "--duration", "1", "--uplink-only", "--out", s(&scene)]);
    assert!(out.status.success(), "{out:?}");
    let archive = dir.join(if no_truth { "blind.dmimo" } else { "raw.dmimo" });
    let mut args = vec!["simulate", "--scene", s(&scene), "--out", s(&archive), "--seed", "5"];
    if no_truth {
        args.push("--no-truth");
    }
    let out = dmimo(&args);
    assert!(out.status.success(), "{out:?}");
    archive
}

#[test]
fn help_and_version_exit_zero() {
    for flag in ["--help", "--version"] {
        let o = dmimo(&[flag]);
        assert_eq!(o.status.code(), Some(0));
        assert!(!o.stdout.is_empty());
    }
}

#[test]
fn usage_errors_exit_two_with_json() {
    let o = dmimo(&["track", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"]["code"], "usage");
    let o = dmimo(&["scene", "--preset", "nowhere", "--out", "/dev/null"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_json(&o)["error"]["message"].as_str().unwrap().contains("nowhere"));
}

#[test]
fn broken_archives_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.dmimo");
    std::fs::write(&bad, b"not an archive").unwrap();
    let o = dmimo(&["stats", "--archive", s(&bad), "--out-dir", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(stderr_json(&o)["error"]["code"], "bad_magic");

    let good = simulate(dir.path(), false);
    let bytes = std::fs::read(&good).unwrap();
    let cut = dir.path().join("cut.dmimo");
    std::fs::write(&cut, &bytes[..bytes.len() - 100]).unwrap();
    let o = dmimo(&["stats", "--archive", s(&cut), "--out-dir", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(stderr_json(&o)["error"]["code"], "truncated");
}

#[test]
fn inputs_are_never_overwritten() {
    let dir = tempfile::tempdir().unwrap();
    let raw = simulate(dir.path(), false);
    let before = std::fs::read(&raw).unwrap();
    let o = dmimo(&["calibrate", "--archive", s(&raw), "--out", s(&raw)]);
    assert_eq!(o.status.code(), Some(2));
    let cal = dir.path().join("cal.dmimo");
    let o = dmimo(&["calibrate", "--archive", s(&raw), "--out", s(&cal)]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(std::fs::read(&raw).unwrap(), before);
    assert!(dir.path().join("cal.dmimo.calibration.json").exists());
}

#[test]
fn manifest_records_seed_and_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let raw = simulate(dir.path(), false);
    let m: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("raw.dmimo.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["seed"], 5);
    let hash = dmimo_core::cli::config_hash(&dmimo_core::SoundingConfig::default());
    assert_eq!(m["config_sha256"], hash.as_str());
    assert_eq!(m["outputs"][0], s(&raw));
}

#[test]
fn tracking_without_truth_warns_and_leaves_error_empty() {
    let dir = tempfile::tempdir().unwrap();
    let blind = simulate(dir.path(), true);
    let out_dir = dir.path().join("track");

    // no truth to start from: the initial position is mandatory
    let o = dmimo(&["track", "--archive", s(&blind), "--out-dir", s(&out_dir)]);
    assert_eq!(o.status.code(), Some(2));

    let o = dmimo(&[
        "track", "--archive", s(&blind), "--out-dir", s(&out_dir), "--init", "10.2,6.2", "--particles", "200", "--stride", "10",
    ]);
    assert!(o.status.success(), "{o:?}");
    let w = stderr_json(&o);
    assert!(w["warning"].as_str().unwrap().contains("ground truth"), "{w}");
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("track_summary.json")).unwrap()).unwrap();
    assert!(summary["rmse_m"].is_null());
    let csv = std::fs::read_to_string(out_dir.join("track.csv")).unwrap();
    let row = csv.lines().nth(1).unwrap();
    assert!(row.ends_with(",,,"), "{row}");
}

#[test]
fn export_writes_all_slices() {
    let dir = tempfile::tempdir().unwrap();
    let raw = simulate(dir.path(), false);
    let out_dir = dir.path().join("export");
    let o = dmimo(&[
        "export", "--archive", s(&raw), "--out-dir", s(&out_dir), "--start", "10", "--span", "1", "--step", "0.5",
        "--velocity-span", "0.5", "--velocity-step", "0.25",
    ]);
    assert!(o.status.success(), "{o:?}");
    for stem in ["position_joint", "position_delay_only", "position_doppler_only", "velocity_joint"] {
        let meta: serde_json::Value =
            serde_json::from_slice(&std::fs::read(out_dir.join(format!("{stem}.json"))).unwrap()).unwrap();
        let bin = std::fs::read(out_dir.join(format!("{stem}.bin"))).unwrap();
        let shape = meta["shape"].as_array().unwrap();
        let cells = shape[0].as_u64().unwrap() * shape[1].as_u64().unwrap();
        assert_eq!(bin.len() as u64, cells * 8, "{stem}");
    }
    let o = dmimo(&["export", "--archive", s(&raw), "--out-dir", s(&out_dir), "--start", "100000"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn schedule_prints_slot_table() {
    let o = dmimo(&["schedule", "--snapshot", "2"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["snapshot"], 2);
    assert_eq!(v["slots"].as_array().unwrap().len(), 13);
}
