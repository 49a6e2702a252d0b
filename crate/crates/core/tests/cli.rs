use std::fs;
use std::process::Command;

use kgscatter::harness::{execute, ConfigSource};
use kgscatter::io::{load_field, Field};
use kgscatter::scattering::OperatorKind;

fn kgscatter() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kgscatter"))
}

#[test]
fn passing_check_exits_zero_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = kgscatter()
        .args(["hyperboloid-duality", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("PASS hyperboloid-duality"), "{stdout}");
    let json: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("hyperboloid-duality.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(json["pass"], true);
    assert!(json["params"]["config"].is_object());
}

#[test]
fn failing_check_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = kgscatter()
        .args(["smallness", "--set", "amplitude=3", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(out.status.code(), Some(1), "{stdout}");
    assert!(stdout.starts_with("FAIL smallness"), "{stdout}");
}

#[test]
fn config_errors_exit_two() {
    let out = kgscatter()
        .args(["cr-scan", "--set", "no_such_key=1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = kgscatter().args(["no-such-check"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("ERROR no-such-check"), "{stdout}");
}

#[test]
fn short_box_is_rejected_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let out = kgscatter()
        .args([
            "tangent-symplectic",
            "--set",
            "box_length=16",
            "--set",
            "n=256",
            "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("no-wrap"), "{stdout}");
    assert!(fs::read_dir(dir.path()).unwrap().next().is_none());
}

#[test]
fn config_file_overlays_desk_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    fs::write(
        &path,
        "# small run\ncoupling = 0\nj-commutator-scan.horizon = 2\nmodes = 4\n",
    )
    .unwrap();
    let out = kgscatter()
        .arg("j-commutator-scan")
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let json: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("j-commutator-scan.json")).unwrap(),
    )
    .unwrap();
    for kind in ["wave", "scattering"] {
        for c in json["measured"][format!("{kind}.commutators")]
            .as_array()
            .unwrap()
        {
            assert!(c.as_f64().unwrap() < 1e-10);
        }
    }
    assert_eq!(json["params"]["config"]["horizon"], "2");
}

#[test]
fn reports_are_byte_identical_for_a_fixed_seed() {
    let mut source = ConfigSource::desk();
    source.set("modes", "4").unwrap();
    source.set("probes", "200").unwrap();
    source.set("horizon", "2").unwrap();
    let cfg = source.resolve("cone-positivity").unwrap();
    let a = execute(&cfg).unwrap().0.to_json().unwrap();
    let b = execute(&cfg).unwrap().0.to_json().unwrap();
    assert_eq!(a, b);
    source.set("seed", "2").unwrap();
    let c = execute(&source.resolve("cone-positivity").unwrap())
        .unwrap()
        .0
        .to_json()
        .unwrap();
    assert_ne!(a, c);
}

#[test]
fn dumped_tangent_matrix_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let out = kgscatter()
        .arg("tangent-symplectic")
        .args([
            "--set",
            "modes=4",
            "--set",
            "horizon=2",
            "--set",
            "amplitude_ladder=0.1",
            "--set",
            "operator=wave",
        ])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let Field::Tangent(m) = load_field(dir.path().join("tangent-wave.fld")).unwrap() else {
        panic!("expected a tangent matrix");
    };
    assert_eq!(m.kind, OperatorKind::Wave);
    assert_eq!((m.modes(), m.horizon, m.dt), (4, 2.0, 1e-3));
    assert!(m.symplectic_defect() < 1e-9);
    let csv = fs::read_to_string(dir.path().join("tangent-symplectic.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}
