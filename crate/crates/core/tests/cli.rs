use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SPHERE: &str = r#"{
    "domain": {"dim": 2, "box": [[0, "2*pi"], [0, "2*pi"]], "periodic": [true, true]},
    "target": {"catalog": "sphere", "radius": 1.0},
    "map": ["0.5*sin(x1) + 0.3*cos(x2)", "0.4*cos(x1)*sin(x2)"],
    "orders": [2, 3],
    "grid": {"nodes": 32},
    "samples": {"count": 50, "seed": 11},
    "omega": [["0.2*cos(x1)", "0.1*sin(x2)"], ["0.1*sin(x2)", "0.3"]],
    "diffeo": {"forward": ["x1 + 0.2*sin(x1 + x2)", "x2 + 0.15*sin(x1)"]}
}"#;

const SINE_FLOW: &str = r#"{
    "domain": {"dim": 1},
    "target": {"catalog": "euclidean"},
    "map": ["sin(x1) + 0.1*cos(2*x1)"],
    "orders": [2],
    "grid": {"nodes": 16},
    "samples": {"count": 4, "seed": 2},
    "flow": {"eta": 0.1, "max_steps": 10000, "tol": 1e-6}
}"#;

fn write(dir: &TempDir, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polystress")).args(args).output().unwrap()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn verify_sphere_passes_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "sphere.json", SPHERE);
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for out in [&a, &b] {
        let o = run(&["verify", "--config", arg(&cfg), "--out", arg(out), "--format", "csv"]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("check,k,point_or_integral,residual,scale,relative,tolerance,pass"));
    let rows: Vec<&str> = lines.collect();
    let conservation = rows.iter().filter(|r| r.starts_with("conservation,")).count();
    assert_eq!(conservation, 100);
    for check in ["trace_pointwise,", "trace_integral,", "first_variation,", "diffeo_tension,", "diffeo_laplacian,", "diffeo_energy,"] {
        assert!(rows.iter().any(|r| r.starts_with(check)), "missing {check}");
    }
    assert!(rows.iter().all(|r| r.ends_with(",pass")));
}

#[test]
fn verify_text_to_stdout() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "sphere.json", SPHERE);
    let o = run(&["verify", "--config", arg(&cfg)]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("worst offenders:") && text.contains(" 0 failed"), "{text}");
}

#[test]
fn under_resolved_grid_fails_a_check() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "coarse.json",
        r#"{"domain": {"dim": 1}, "target": {"catalog": "sphere"},
            "map": ["0.5*sin(x1) + 0.3*cos(3*x1)", "0.2*sin(2*x1)"],
            "orders": [2], "grid": {"nodes": 3}, "samples": {"count": 4, "seed": 9}}"#,
    );
    let o = run(&["verify", "--config", arg(&cfg), "--format", "csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8(o.stdout).unwrap().contains("trace_integral,2,integral,"));
}

#[test]
fn config_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let bad = write(&dir, "bad.json", r#"{"domain": {"dim": 1}}"#);
    assert_eq!(run(&["verify", "--config", arg(&bad)]).status.code(), Some(2));
    assert_eq!(run(&["verify", "--config", "/definitely/missing.json"]).status.code(), Some(2));
    let unknown = write(&dir, "u.json", &SINE_FLOW.replace("euclidean", "klein"));
    assert_eq!(run(&["energy", "--config", arg(&unknown), "-k", "2"]).status.code(), Some(2));
    let cfg = write(&dir, "sine.json", SINE_FLOW);
    assert_eq!(run(&["energy", "--config", arg(&cfg), "-k", "9"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn chart_exit_is_numeric_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "hyp.json", &SINE_FLOW.replace("euclidean", "hyperbolic").replace("sin(x1) + 0.1*cos(2*x1)", "1.5*sin(x1)"));
    let o = run(&["verify", "--config", arg(&cfg)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("outside the unit ball"));
}

#[test]
fn energy_of_sine() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "sine.json", &SINE_FLOW.replace("sin(x1) + 0.1*cos(2*x1)", "sin(x1)"));
    for k in ["2", "3"] {
        let o = run(&["energy", "--config", arg(&cfg), "-k", k]);
        assert_eq!(o.status.code(), Some(0));
        let e: f64 = String::from_utf8(o.stdout).unwrap().trim().parse().unwrap();
        assert!((e - std::f64::consts::PI).abs() < 1e-12, "{e}");
    }
}

#[test]
fn flow_writes_monotone_trajectory() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "sine.json", SINE_FLOW);
    let out = dir.path().join("traj.csv");
    let o = run(&["flow", "--config", arg(&cfg), "--out", arg(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8(o.stdout).unwrap().contains("converged"));
    let mut rdr = csv::Reader::from_path(&out).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["step", "eta", "energy", "max_tension", "max_conservation"]);
    let energies: Vec<f64> = rdr.records().map(|r| r.unwrap()[2].parse().unwrap()).collect();
    assert!(energies.len() > 1);
    assert!(energies.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn flow_requires_flow_block() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "sphere.json", SPHERE);
    let out = dir.path().join("t.csv");
    assert_eq!(run(&["flow", "--config", arg(&cfg), "--out", arg(&out)]).status.code(), Some(2));
}
