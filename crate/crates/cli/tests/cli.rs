use serde_json::Value;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn rwre(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rwre")).args(args).output().expect("binary runs")
}

fn run_kind(kind: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![kind, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    rwre(&args)
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

fn error_kind(out: &Output) -> String {
    let line = String::from_utf8_lossy(&out.stderr).lines().last().unwrap_or_default().to_string();
    let v: Value = serde_json::from_str(&line).expect("stderr ends with an error document");
    v["error"]["kind"].as_str().unwrap().to_string()
}

fn csv_digests(dir: &Path) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().to_string();
            (name, hex::encode(Sha256::digest(std::fs::read(&p).unwrap())))
        })
        .collect();
    out.sort();
    out
}

#[test]
fn solve_fixture_reproduces_gamblers_ruin() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_kind("solve", &fixture("solve_slab.json"), tmp.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = read_json(&tmp.path().join("summary.json"));
    let h = s["h_start"].as_f64().unwrap();
    let ruin = (1.0 - 0.5f64.powi(8)) / (1.0 - 0.5f64.powi(16));
    assert!((h - ruin).abs() < 1e-10, "h = {h}, ruin = {ruin}");
    assert!(s["rho"].as_f64().unwrap() > 0.0);
    assert!(s["iterations"].as_u64().unwrap() > 0);
    assert!(s["residual"].as_f64().unwrap() < 1e-10);
}

#[test]
fn unknown_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_kind("ladder", &fixture("unknown_key.json"), tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "config");
    assert!(!tmp.path().join("manifest.json").exists());
}

#[test]
fn unknown_key_inside_params_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = read_json(&fixture("solve_slab.json"));
    cfg["params"]["foo"] = 1.into();
    let path = tmp.path().join("cfg.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let out = run_kind("solve", &path, &tmp.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn subcommand_must_match_config_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_kind("walk", &fixture("solve_slab.json"), tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "config");
}

#[test]
fn bad_arguments_and_missing_files_are_config_errors() {
    let out = rwre(&["solve", "--config"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "config");
    let out = rwre(&["solve", "--config", "/nonexistent/cfg.json"]);
    assert_eq!(out.status.code(), Some(2));
    let out = rwre(&["solve", "--config", fixture("solve_slab.json").to_str().unwrap(), "--workers", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_model_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = read_json(&fixture("solve_slab.json"));
    cfg["model"]["kappa"] = 0.3.into();
    let path = tmp.path().join("cfg.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let out = run_kind("solve", &path, &tmp.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solver_failure_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = read_json(&fixture("solve_slab.json"));
    cfg["solver"] = serde_json::json!({ "max_iterations": 1 });
    let path = tmp.path().join("cfg.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let out = run_kind("solve", &path, &tmp.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_kind(&out), "runtime");
}

#[test]
fn every_kind_writes_a_complete_manifest() {
    let dir = fixture("kinds");
    let mut kinds: Vec<PathBuf> = std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    kinds.sort();
    assert_eq!(kinds.len(), 16);
    let tmp = tempfile::tempdir().unwrap();
    for cfg in kinds {
        let kind = cfg.file_stem().unwrap().to_str().unwrap().to_string();
        let out_dir = tmp.path().join(&kind);
        let out = run_kind(&kind, &cfg, &out_dir, &["--workers", "2"]);
        assert!(out.status.success(), "{kind}: {}", String::from_utf8_lossy(&out.stderr));
        let manifest = read_json(&out_dir.join("manifest.json"));
        assert_eq!(manifest["run"]["kind"], kind.as_str());
        assert_eq!(manifest["run"]["config_sha256"].as_str().unwrap().len(), 64);
        let files = manifest["files"].as_array().unwrap();
        let listed: Vec<&str> = files.iter().map(|f| f["name"].as_str().unwrap()).collect();
        assert!(listed.contains(&"summary.json"), "{kind}");
        assert!(listed.iter().any(|n| n.ends_with(".csv")), "{kind}");
        for f in files {
            let bytes = std::fs::read(out_dir.join(f["name"].as_str().unwrap())).unwrap();
            assert_eq!(f["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)), "{kind}");
            if let Some(cols) = f["columns"].as_array() {
                let header = String::from_utf8_lossy(&bytes).lines().next().unwrap().to_string();
                let names: Vec<&str> = cols.iter().map(|c| c.as_str().unwrap()).collect();
                assert_eq!(header, names.join(","), "{kind}");
            }
        }
        let on_disk = std::fs::read_dir(&out_dir).unwrap().count();
        assert_eq!(on_disk, files.len() + 1, "{kind}: stray files");
    }
}

#[test]
fn csv_artifacts_do_not_depend_on_worker_count() {
    let tmp = tempfile::tempdir().unwrap();
    for kind in ["walk", "tails", "criterion-search", "intersections", "floor"] {
        let cfg = fixture(&format!("kinds/{kind}.json"));
        let one = tmp.path().join(format!("{kind}-1"));
        let eight = tmp.path().join(format!("{kind}-8"));
        assert!(run_kind(kind, &cfg, &one, &["--workers", "1"]).status.success());
        assert!(run_kind(kind, &cfg, &eight, &["--workers", "8"]).status.success());
        let a = csv_digests(&one);
        assert!(!a.is_empty());
        assert_eq!(a, csv_digests(&eight), "{kind}");
        let s1 = std::fs::read(one.join("summary.json")).unwrap();
        let s8 = std::fs::read(eight.join("summary.json")).unwrap();
        assert_eq!(s1, s8, "{kind} summary");
    }
}

#[test]
fn seed_flag_overrides_the_model_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture("walk_dirichlet.json");
    let dirs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|n| tmp.path().join(n)).collect();
    assert!(run_kind("walk", &cfg, &dirs[0], &["--seed", "9"]).status.success());
    assert!(run_kind("walk", &cfg, &dirs[1], &[]).status.success());
    assert!(run_kind("walk", &cfg, &dirs[2], &["--seed", "10"]).status.success());
    assert_eq!(csv_digests(&dirs[0]), csv_digests(&dirs[1]));
    assert_ne!(csv_digests(&dirs[0]), csv_digests(&dirs[2]));
    let m0 = read_json(&dirs[0].join("manifest.json"));
    let m2 = read_json(&dirs[2].join("manifest.json"));
    assert_ne!(m0["run"]["config_sha256"], m2["run"]["config_sha256"]);
}
