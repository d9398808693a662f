use serde_json::Value;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SCALAR: &str = r#"
s = 1
N = 3
terminal_mode = "point"
system.kind = "custom"
system.a = { shape = [1, 1], data = [0.5] }
system.b = { shape = [1, 1], data = [1.0] }
system.k_fb = { shape = [1, 1], data = [0.0] }
system.w_generators = { shape = [1, 1], data = [1.0] }
system.x_lower = [-10.0]
system.x_upper = [10.0]
system.u_lower = [-1.0]
system.u_upper = [1.0]
"#;

const DI: &str = r#"
x0 = [-7.0, -2.0]
seed = 7
simulate.steps = 8
simulate.runs = 2
"#;

fn ztube(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("scenario.toml");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_ztube"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn scalar_rpi_scaling() {
    let dir = tempfile::tempdir().unwrap();
    ok(&ztube(dir.path(), SCALAR, &["rpi"]));
    let rpi = json(&dir.path().join("out/rpi.json"));
    let delta: Vec<f64> = serde_json::from_value(rpi["delta"]["data"].clone())
        .or_else(|_| serde_json::from_value(rpi["delta"][0].clone()))
        .unwrap_or_else(|_| panic!("unexpected layout {}", rpi["delta"]));
    assert_eq!(delta.len(), 2);
    assert!((delta[0] - 2.0).abs() < 1e-6, "{delta:?}");
    assert!(delta[1].abs() < 1e-6, "{delta:?}");
}

fn pipeline(dir: &Path) {
    for cmd in ["rpi", "terminal", "solve", "simulate"] {
        ok(&ztube(dir, DI, &[cmd]));
    }
}

#[test]
fn solve_writes_one_polygon_per_node() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path());
    let out = dir.path().join("out");
    let polys = json(&out.join("polygons.json"));
    let list = polys["polygons"].as_array().unwrap();
    assert_eq!(list.len(), 13);
    for (k, p) in list.iter().enumerate() {
        assert_eq!(p["k"].as_u64().unwrap() as usize, k);
        assert!(!p["vertices"].as_array().unwrap().is_empty());
    }
    let svg = fs::read_to_string(out.join("tube.svg")).unwrap();
    assert_eq!(svg.matches("<polygon").count(), 13);
    assert_eq!(svg.matches("stroke-width=\"2\"").count(), 3);
    let sol = json(&out.join("solution.json"));
    assert_eq!(sol["status"], "optimal");
    let sim = json(&out.join("sim_summary.json"));
    assert_eq!(sim["completed_runs"], 2);
    assert_eq!(sim["tube_violations"], 0);
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 9);
}

#[test]
fn repeated_runs_are_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    let names = [
        "rpi.json",
        "offline.json",
        "solution.json",
        "polygons.json",
        "tube.svg",
        "trace.csv",
        "sim_summary.json",
        "sim_polygons.json",
        "traces/run_0000.csv",
        "traces/run_0001.csv",
    ];
    for name in names {
        let x = fs::read(a.path().join("out").join(name)).unwrap();
        let y = fs::read(b.path().join("out").join(name)).unwrap();
        assert!(x == y, "{name} differs between runs");
    }
    let ma = json(&a.path().join("out/manifest.json"));
    let mb = json(&b.path().join("out/manifest.json"));
    assert_eq!(ma["artifacts"], mb["artifacts"]);
}

#[test]
fn seed_flag_changes_the_disturbances() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path());
    let first = fs::read(dir.path().join("out/trace.csv")).unwrap();
    ok(&ztube(dir.path(), DI, &["--seed", "8", "simulate"]));
    let second = fs::read(dir.path().join("out/trace.csv")).unwrap();
    assert_ne!(first, second);
}

#[test]
fn offline_artifact_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    ok(&ztube(dir.path(), DI, &["rpi"]));
    ok(&ztube(dir.path(), DI, &["terminal"]));
    let path = dir.path().join("out/offline.json");
    let text = fs::read_to_string(&path).unwrap();
    let off: ztube::tube::OfflineData = serde_json::from_str(&text).unwrap();
    assert_eq!(off.offline_time, std::time::Duration::ZERO);
    let again = serde_json::to_string_pretty(&off).unwrap() + "\n";
    assert_eq!(again, text);
}

#[test]
fn missing_or_tampered_prerequisites_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = ztube(dir.path(), DI, &["solve"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ztube rpi"));

    ok(&ztube(dir.path(), DI, &["rpi"]));
    let out = ztube(dir.path(), DI, &["solve"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ztube terminal"));

    ok(&ztube(dir.path(), DI, &["terminal"]));
    let path = dir.path().join("out/rpi.json");
    let mut text = fs::read_to_string(&path).unwrap();
    text.push(' ');
    fs::write(&path, text).unwrap();
    let out = ztube(dir.path(), DI, &["terminal"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hash"));
}

#[test]
fn changed_config_invalidates_offline_data() {
    let dir = tempfile::tempdir().unwrap();
    ok(&ztube(dir.path(), DI, &["rpi"]));
    ok(&ztube(dir.path(), DI, &["terminal"]));
    let changed = format!("{DI}\ns = 4\n");
    let out = ztube(dir.path(), &changed, &["solve"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("different inputs"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = ztube(dir.path(), "horizon = 12\n", &["rpi"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("horizon"));
    let out = ztube(dir.path(), DI, &["--variant", "elastic-psi-c", "rpi"]);
    assert_eq!(out.status.code(), Some(2));
    let out = ztube(dir.path(), DI, &["nonsense"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn infeasible_start_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let far = DI.replace("[-7.0, -2.0]", "[9.5, 1.9]");
    for cmd in ["rpi", "terminal"] {
        ok(&ztube(dir.path(), &far, &[cmd]));
    }
    let out = ztube(dir.path(), &far, &["--variant", "rigid-phi0-c", "solve"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let sol = json(&dir.path().join("out/solution.json"));
    assert_eq!(sol["status"], "infeasible");
}

#[test]
fn unstable_plant_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SCALAR.replace("data = [0.5]", "data = [1.5]");
    let out = ztube(dir.path(), &cfg, &["rpi"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn complexity_prints_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = ztube(dir.path(), "complexity.n_nodes = 26\ncomplexity.d = 13\n", &["complexity"]);
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("N=26 n=2 m=1 D=13"));
    assert_eq!(text.lines().count(), 2 + 12);
}
