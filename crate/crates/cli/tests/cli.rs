use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_ldpnet");

fn ldpnet(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("LDPNET_OUT")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

// Tiny density: every node keeps only its self-loop with overwhelming probability.
const MINIMAL: &str = r#"{
  "kernel": {"type": "constant", "c": 1.0},
  "model": {"dim": 1, "drift": {"name": "linear", "rate": 1.0},
            "coupling": {"name": "sine", "strength": 0.5},
            "lift": {"type": "angle"}, "horizon": 1.0},
  "graph": {"n": 1, "rho": 1e-12, "seed": 3},
  "run": {"steps": 4}
}"#;

const FULL: &str = r#"{
  "kernel": {"type": "cosine", "base": 1.0, "amplitude": 0.5},
  "model": {"dim": 2, "drift": {"name": "tanh", "gain": 1.0, "scale": 0.5},
            "coupling": {"name": "sine", "strength": 1.0},
            "lift": {"type": "embedding", "radius": 1.0}, "horizon": 1.0},
  "graph": {"n": 12, "n_grid": [50, 200], "schedule": {"c": 1.0, "beta": 0.5}, "seed": 42},
  "run": {"pipeline": ["sample", "simulate", "measures", "pushforward", "rates", "ldp_scan"],
          "steps": 2, "tol": 0.02, "trials": 2000},
  "scan": {"event": {"target": 0, "event": {"type": "degree_mass", "mass": 0.5}},
           "mode": "monte_carlo"}
}"#;

#[test]
fn minimal_config_writes_manifest_and_csvs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "cfg.json", MINIMAL);
    let o = ldpnet(&["run", "--config", &cfg, "--out", "res"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = tmp.path().join("res");
    for f in ["manifest.json", "graph.txt", "degrees.csv", "trajectories.csv", "marginal.csv", "rates.csv"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let graph = fs::read_to_string(out.join("graph.txt")).unwrap();
    assert!(graph.contains("\n-1: -1\n0: 0\n1: 1\n"), "{graph}");

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["schema"], "ldpnet.manifest/1");
    let outputs = manifest["outputs"].as_array().unwrap();
    assert!(!outputs.is_empty());
    for rec in outputs {
        let bytes = fs::read(out.join(rec["file"].as_str().unwrap())).unwrap();
        assert_eq!(rec["bytes"].as_u64().unwrap(), bytes.len() as u64);
        let sha = rec["sha256"].as_str().unwrap();
        assert_eq!(sha.len(), 64);
    }
    let stages: Vec<&str> = manifest["stages"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["stage"].as_str().unwrap())
        .collect();
    assert_eq!(stages, ["sample", "simulate", "measures", "rates"]);
}

#[test]
fn missing_seed_is_a_schema_error_naming_the_field() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "cfg.json",
        r#"{"kernel": {"type": "constant", "c": 1.0}, "graph": {"n": 1, "rho": 0.5}}"#,
    );
    let o = ldpnet(&["run", "--config", &cfg], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("graph.seed"), "{}", stderr(&o));
}

#[test]
fn unknown_registry_name_is_a_schema_error() {
    let tmp = TempDir::new().unwrap();
    let text = MINIMAL.replace(r#""name": "linear""#, r#""name": "cubic""#);
    let cfg = write(tmp.path(), "cfg.json", &text);
    let o = ldpnet(&["run", "--config", &cfg], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model.drift"), "{}", stderr(&o));
}

#[test]
fn cap_breach_exits_3() {
    let tmp = TempDir::new().unwrap();
    let text = MINIMAL.replace(r#""n": 1,"#, r#""n": 600000,"#);
    let cfg = write(tmp.path(), "cfg.json", &text);
    let o = ldpnet(&["sample-graph", "--config", &cfg], tmp.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn unconverged_pushforward_exits_4() {
    let tmp = TempDir::new().unwrap();
    let text = FULL.replace(r#""tol": 0.02"#, r#""tol": 1e-12, "max_steps": 8"#);
    let cfg = write(tmp.path(), "cfg.json", &text);
    let o = ldpnet(&["pushforward-check", "--config", &cfg], tmp.path());
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("no convergence"), "{}", stderr(&o));
}

fn data_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn repeated_runs_are_byte_identical_across_thread_counts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "cfg.json", FULL);
    let a = ldpnet(&["run", "--config", &cfg, "--out", "a", "--threads", "1"], tmp.path());
    assert!(a.status.success(), "{}", stderr(&a));
    let b = ldpnet(&["run", "--config", &cfg, "--out", "b", "--threads", "4"], tmp.path());
    assert!(b.status.success(), "{}", stderr(&b));
    let fa = data_files(&tmp.path().join("a"));
    let fb = data_files(&tmp.path().join("b"));
    assert_eq!(fa.len(), 11);
    assert_eq!(fa, fb);

    let c = ldpnet(&["run", "--config", &cfg, "--out", "c", "--seed", "43"], tmp.path());
    assert!(c.status.success());
    assert_ne!(fa, data_files(&tmp.path().join("c")));
}

#[test]
fn output_dir_precedence() {
    let tmp = TempDir::new().unwrap();
    let text = MINIMAL.replace(r#""run""#, r#""outputs": {"dir": "from_config"}, "run""#);
    let cfg = write(tmp.path(), "cfg.json", &text);
    let run = |extra: &[&str], env: Option<&str>| {
        let mut cmd = Command::new(BIN);
        cmd.args(["sample-graph", "--config", &cfg]).args(extra).current_dir(tmp.path());
        cmd.env_remove("LDPNET_OUT");
        if let Some(e) = env {
            cmd.env("LDPNET_OUT", e);
        }
        assert!(cmd.output().unwrap().status.success());
    };
    run(&[], None);
    assert!(tmp.path().join("from_config/manifest.json").is_file());
    run(&[], Some("from_env"));
    assert!(tmp.path().join("from_env/manifest.json").is_file());
    run(&["--out", "from_flag"], Some("from_env2"));
    assert!(tmp.path().join("from_flag/manifest.json").is_file());
    assert!(!tmp.path().join("from_env2").exists());
}

#[test]
fn verify_list_prints_ids_without_running() {
    let tmp = TempDir::new().unwrap();
    let o = ldpnet(&["verify", "--list"], tmp.path());
    assert!(o.status.success());
    let text = stdout(&o);
    let ids: Vec<u8> = text
        .lines()
        .map(|l| l.split_whitespace().next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(ids, (1..=10).collect::<Vec<u8>>());
    assert!(!text.contains("PASS") && !text.contains("FAIL"));
}

#[test]
fn verify_passes_on_fast_criteria() {
    let tmp = TempDir::new().unwrap();
    let o = ldpnet(&["verify", "--only", "1", "--only", "4"], tmp.path());
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(stdout(&o).matches("PASS").count(), 2);
}

#[test]
fn verify_coarse_grid_fails_with_named_tolerance() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "acc.json", r#"{"grid_bins": 4}"#);
    let o = ldpnet(&["verify", "--config", &cfg, "--only", "9"], tmp.path());
    assert_eq!(o.status.code(), Some(4));
    let line = stdout(&o);
    assert!(line.contains("FAIL"), "{line}");
    assert!(line.contains("tol"), "{line}");
}

#[test]
fn verify_rejects_unknown_criterion() {
    let tmp = TempDir::new().unwrap();
    let o = ldpnet(&["verify", "--only", "11"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn shipped_configs_run() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let tmp = TempDir::new().unwrap();
    for name in ["minimal", "desk", "arc-scan"] {
        let cfg = configs.join(format!("{name}.json"));
        let o = ldpnet(&["run", "--config", cfg.to_str().unwrap(), "--out", name], tmp.path());
        assert!(o.status.success(), "{name}: {}", stderr(&o));
        assert!(tmp.path().join(name).join("manifest.json").is_file());
    }
    let coarse = configs.join("acceptance-coarse.json");
    let o = ldpnet(&["verify", "--config", coarse.to_str().unwrap(), "--only", "9"], tmp.path());
    assert_eq!(o.status.code(), Some(4));
}
