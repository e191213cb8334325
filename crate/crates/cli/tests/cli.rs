use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_crowdsim"))
}

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env("CROWDSIM_LOG", "quiet").output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const SMALL_SCENE: &str = r#"{
  "width": 12.0,
  "height": 4.0,
  "obstacles": [[5.0, 0.0, 6.0, 1.5]],
  "entrances": [{"rect": [0.0, 1.0, 1.0, 3.0], "rate": 2.0, "capacity": 8}],
  "exits": [{"rect": [11.0, 0.0, 12.0, 4.0], "cap": null}]
}"#;

const SMALL_CONFIG: &str = r#"
seed = 3
t_max = 12.0
initial_count = 5
"#;

#[test]
fn run_writes_the_five_metric_files() {
    let dir = tempfile::tempdir().unwrap();
    let scene = write(dir.path(), "s.json", SMALL_SCENE);
    let config = write(dir.path(), "c.toml", SMALL_CONFIG);
    let out = dir.path().join("out");
    let o = run(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--scene",
        scene.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["particles.csv", "heatmap.csv", "series.csv", "mde.csv", "manifest.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 3"));
}

#[test]
fn seed_determines_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let scene = write(dir.path(), "s.json", SMALL_SCENE);
    let config = write(dir.path(), "c.toml", SMALL_CONFIG);
    let outs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|n| dir.path().join(n)).collect();
    for (out, seed) in outs.iter().zip(["9", "9", "10"]) {
        let o = run(&[
            "run",
            "--config",
            config.to_str().unwrap(),
            "--scene",
            scene.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            seed,
            "--mode",
            "combined",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let read = |d: &Path| std::fs::read(d.join("particles.csv")).unwrap();
    assert_eq!(read(&outs[0]), read(&outs[1]));
    assert_ne!(read(&outs[0]), read(&outs[2]));
}

#[test]
fn missing_scene_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let o = run(&["run", "--scene", missing.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.json"));
}

#[test]
fn bad_config_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let scene = write(dir.path(), "s.json", SMALL_SCENE);
    for text in ["dt = -1.0\n", "no_such_key = 1\n", "dt = \"fast\"\n"] {
        let config = write(dir.path(), "c.toml", text);
        let o = run(&[
            "run",
            "--config",
            config.to_str().unwrap(),
            "--scene",
            scene.to_str().unwrap(),
            "--out",
            dir.path().join("o").to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(2), "{text}");
    }
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["run"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["run", "--scene", "x", "--out", "y", "--mode", "walk"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
}

#[test]
fn probe_lcp_reports_deviation() {
    let o = run(&["probe-lcp", "--n", "8", "--trials", "1000", "--seed", "7"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("max deviation ≤ 1e-6"), "{text}");
}

#[test]
fn probes_pass() {
    let o = run(&["probe-kernel"]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 3);
    let o = run(&["probe-eikonal", "--n", "50"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn validate_scene_reports() {
    for name in ["corridor", "plaza", "funnel", "through_traffic"] {
        let path = repo(&format!("scenarios/{name}.json"));
        let o = run(&["validate-scene", "--scene", path.to_str().unwrap()]);
        assert!(o.status.success(), "{name}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stdout).contains("valid"));
    }
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", r#"{"width": 10, "height": 10, "exits": [{"rect": [5, 5, 20, 6]}]}"#);
    let o = run(&["validate-scene", "--scene", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn shipped_config_parses() {
    let dir = tempfile::tempdir().unwrap();
    let config = repo("configs/default.toml");
    let scene = repo("scenarios/corridor.json");
    let o = run(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--scene",
        scene.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}
