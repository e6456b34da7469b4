use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_isonrsfm"))
}

fn run(args: &[&str], cwd: &Path) -> (i32, Value) {
    let out = bin().args(args).current_dir(cwd).output().unwrap();
    let code = out.status.code().unwrap();
    let dir = args
        .iter()
        .position(|a| *a == "-o")
        .map(|i| args[i + 1])
        .unwrap();
    let report = fs::read_to_string(cwd.join(dir).join("report.json"))
        .map(|t| serde_json::from_str(&t).unwrap())
        .unwrap_or_else(|_| serde_json::from_slice(&out.stderr).unwrap());
    (code, report)
}

#[test]
fn synth_reconstruct_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(run(&["synth", "-o", "bundle"], d).0, 0);
    let args = [
        "reconstruct",
        "--tracks",
        "bundle/tracks.csv",
        "--intrinsics",
        "bundle/intrinsics.json",
    ];
    let (code, rep) = run(&[&args[..], &["-o", "rec"]].concat(), d);
    assert_eq!(code, 0, "{rep}");
    assert!(rep["result"]["budget_residual"].as_f64().unwrap() < 1e-7);
    assert_eq!(rep["inputs"].as_array().unwrap().len(), 2);
    let (code, rep) = run(
        &["eval", "--recon", "rec", "--truth", "bundle", "-o", "ev"],
        d,
    );
    assert_eq!(code, 0, "{rep}");
    assert!(rep["result"]["relative_error"].as_f64().unwrap() < 0.01);
    // identical inputs reproduce identical numeric artifacts
    assert_eq!(run(&[&args[..], &["-o", "rec2"]].concat(), d).0, 0);
    assert_eq!(
        fs::read(d.join("rec/depths.csv")).unwrap(),
        fs::read(d.join("rec2/depths.csv")).unwrap()
    );
}

#[test]
fn calibrate_without_intrinsics_uses_default_camera() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(run(&["synth", "-o", "bundle"], d).0, 0);
    let (code, rep) = run(
        &["calibrate", "--tracks", "bundle/tracks.csv", "-o", "cal"],
        d,
    );
    assert_eq!(code, 0, "{rep}");
    let k0 = &rep["result"]["initial"];
    assert_eq!(k0["fx"].as_f64(), Some(280.0));
    assert_eq!(
        (k0["cx"].as_f64(), k0["cy"].as_f64()),
        (Some(320.0), Some(240.0))
    );
    assert!(d.join("cal/sweep.json").exists());
}

#[test]
fn one_point_view_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("t.csv"),
        "view,point,x,y,visible\n0,0,1,2,1\n0,1,3,4,1\n1,0,5,6,1\n",
    )
    .unwrap();
    let (code, rep) = run(
        &[
            "reconstruct",
            "--tracks",
            "t.csv",
            "--image",
            "640x480",
            "-o",
            "out",
        ],
        d,
    );
    assert_eq!(code, 3);
    assert_eq!(rep["status"], "error");
    assert_eq!(rep["error"]["kind"], "invalid_input");
}

#[test]
fn bad_config_is_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("c.json"), r#"{"neighbours": 3}"#).unwrap();
    let out = bin()
        .args(["synth", "--config", "c.json", "-o", "x"])
        .current_dir(d)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "config");
}

#[test]
fn malformed_tracks_name_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("t.csv"),
        "view,point,x,y,visible\n0,0,1,2,1\n0,1,x,4,1\n",
    )
    .unwrap();
    let (code, rep) = run(
        &[
            "reconstruct",
            "--tracks",
            "t.csv",
            "--image",
            "640x480",
            "-o",
            "out",
        ],
        d,
    );
    assert_eq!(code, 3);
    assert_eq!(rep["error"]["kind"], "parse");
    assert!(
        rep["error"]["message"].as_str().unwrap().contains(":3:"),
        "{rep}"
    );
}
