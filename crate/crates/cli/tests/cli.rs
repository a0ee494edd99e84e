use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use surface_fixtures::io::{read_scalar_field, read_vector_field, write_cloud, CloudData, PlyFormat};
use surface_fixtures::Vec3;

const VALUES: &str = r#"{"kind":"value","regions":{"1":{"role":"value","value":5},"2":{"role":"value","value":5}},"k":12,"tolerance":1e-9}"#;
const GUIDANCE: &str = r#"{"kind":"guidance","regions":{"1":{"role":"obstacle"},"2":{"role":"target"}},"k":12,"tolerance":1e-9,"seed":11}"#;

/// 30 × 30 plane; region 1 a disk obstacle in the middle, region 2 the right edge.
fn write_plane(dir: &Path) -> PathBuf {
    let mut positions = Vec::new();
    let mut labels = Vec::new();
    for j in 0..30 {
        for i in 0..30 {
            let p = Vec3::new(i as f64 * 0.02, j as f64 * 0.02, 0.0);
            let obstacle = (p - Vec3::new(0.3, 0.3, 0.0)).norm() < 0.08;
            labels.push(if i >= 28 { 2 } else if obstacle { 1 } else { 0 });
            positions.push(p);
        }
    }
    let path = dir.join("plane.ply");
    let data = CloudData {
        positions,
        labels,
        ..CloudData::default()
    };
    write_cloud(std::fs::File::create(&path).unwrap(), &data, PlyFormat::BinaryLittleEndian).unwrap();
    path
}

fn write_spec(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn fixtures(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fixtures"))
        .args(args)
        .env("FIXTURES_THREADS", "2")
        .output()
        .unwrap()
}

fn summary(output: &Output) -> Value {
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert_eq!(stdout.lines().count(), 1, "{stdout}");
    serde_json::from_str(stdout.trim()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn info_reports_regions() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = write_plane(dir.path());
    let output = fixtures(&["info", "--cloud", s(&cloud)]);
    assert!(output.status.success());
    let summary = summary(&output);
    assert_eq!(summary["points"], 900);
    assert_eq!(summary["components"], 1);
    assert_eq!(summary["regions"]["2"], 60);
    assert_eq!(summary["open_boundary_points"], 4 * 29);
}

#[test]
fn boundaries_writes_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = write_plane(dir.path());
    let out = dir.path().join("flags.ply");
    let output = fixtures(&["boundaries", "--cloud", s(&cloud), "--out", s(&out)]);
    assert!(output.status.success());
    assert_eq!(summary(&output)["flagged"], 116);
    let flags = read_scalar_field(std::io::BufReader::new(std::fs::File::open(&out).unwrap())).unwrap();
    assert_eq!(flags.values.iter().filter(|&&v| v == 1.0).count(), 116);
}

#[test]
fn solve_values_constant() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = write_plane(dir.path());
    let spec = write_spec(dir.path(), "forces.json", VALUES);
    let out = dir.path().join("field.ply");
    let output = fixtures(&["solve-values", "--cloud", s(&cloud), "--spec", s(&spec), "--out", s(&out)]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let summary = summary(&output);
    assert_eq!(summary["undefined_count"], 0);
    let field = read_scalar_field(std::io::BufReader::new(std::fs::File::open(&out).unwrap())).unwrap();
    assert!(field.values.iter().all(|v| (v - 5.0).abs() <= 1e-9));
}

#[test]
fn solve_guidance_writes_unit_vectors() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = write_plane(dir.path());
    let spec = write_spec(dir.path(), "guide.json", GUIDANCE);
    let out = dir.path().join("dirs.ply");
    let scalar = dir.path().join("u.ply");
    let output = fixtures(&[
        "solve-guidance",
        "--cloud",
        s(&cloud),
        "--spec",
        s(&spec),
        "--out",
        s(&out),
        "--scalar-out",
        s(&scalar),
        "--ascii",
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    assert_eq!(summary(&output)["free_undefined"], 0);
    let field = read_vector_field(std::io::BufReader::new(std::fs::File::open(&out).unwrap())).unwrap();
    for (v, d) in field.vectors.iter().zip(&field.defined) {
        if *d {
            assert!((v.norm() - 1.0).abs() < 1e-8);
        } else {
            assert!(v.x.is_nan());
        }
    }
    assert!(scalar.exists());
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = write_plane(dir.path());
    let spec = write_spec(dir.path(), "guide.json", GUIDANCE);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        let output = fixtures(&[
            "simulate", "--cloud", s(&cloud), "--spec", s(&spec), "--starts", "100", "--seed", "7", "--out", s(out),
        ]);
        assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
        let summary = summary(&output);
        assert_eq!(summary["agents"], 100);
        assert_eq!(summary["success"], 100);
    }
    let first = std::fs::read(&a).unwrap();
    assert_eq!(first, std::fs::read(&b).unwrap());
    let text = String::from_utf8(first).unwrap();
    assert!(text.starts_with("agent_id,step,x,y,z,outcome\n"));
}

#[test]
fn missing_spec_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = write_plane(dir.path());
    let missing = dir.path().join("nope.json");
    let out = dir.path().join("field.ply");
    let output = fixtures(&["solve-values", "--cloud", s(&cloud), "--spec", s(&missing), "--out", s(&out)]);
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("nope.json"));
    assert!(output.stdout.is_empty());
}

#[test]
fn spec_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = write_plane(dir.path());
    let out = dir.path().join("field.ply");
    let absent = write_spec(dir.path(), "absent.json", &VALUES.replace("\"2\":", "\"9\":"));
    let output = fixtures(&["solve-values", "--cloud", s(&cloud), "--spec", s(&absent), "--out", s(&out)]);
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("regions.9"));
    let kind = write_spec(dir.path(), "kind.json", GUIDANCE);
    let output = fixtures(&["solve-values", "--cloud", s(&cloud), "--spec", s(&kind), "--out", s(&out)]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn solver_failure_exits_3() {
    // Two patches far apart: the free patch never touches the value patch.
    let dir = tempfile::tempdir().unwrap();
    let mut positions = Vec::new();
    let mut labels = Vec::new();
    for (offset, label) in [(0.0, 0), (10.0, 1)] {
        for j in 0..6 {
            for i in 0..6 {
                positions.push(Vec3::new(offset + i as f64 * 0.1, j as f64 * 0.1, 0.0));
                labels.push(label);
            }
        }
    }
    let cloud = dir.path().join("split.ply");
    let data = CloudData {
        positions,
        labels,
        ..CloudData::default()
    };
    write_cloud(std::fs::File::create(&cloud).unwrap(), &data, PlyFormat::Ascii).unwrap();
    let spec = write_spec(
        dir.path(),
        "one.json",
        r#"{"kind":"value","regions":{"1":{"role":"value","value":2}},"k":12,"tolerance":1e-9}"#,
    );
    let out = dir.path().join("field.ply");
    let output = fixtures(&["solve-values", "--cloud", s(&cloud), "--spec", s(&spec), "--out", s(&out)]);
    assert_eq!(output.status.code(), Some(3), "{}", String::from_utf8_lossy(&output.stderr));
}
