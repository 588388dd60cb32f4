use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dmkit::dataset::BatchDataset;
use dmkit::env::{build_model, EnvDims, EnvHyper, EnvKind, Environment, EnvironmentModel};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dmkit"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> serde_json::Value {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path, name: &str, n: usize, seed: u64) -> PathBuf {
    let out = dir.join(name);
    let scenario = configs().join("ward_css.json");
    ok(&["generate", "--scenario", s(&scenario), "--n", &n.to_string(), "--seed", &seed.to_string(), "--out", s(&out)]);
    out
}

#[test]
fn generate_writes_requested_trajectories_and_digest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.jsonl");
    let scenario = configs().join("ward_css.json");
    let v = ok(&["generate", "--scenario", s(&scenario), "--n", "500", "--seed", "7", "--out", s(&out)]);
    let d = BatchDataset::load(&out).unwrap();
    assert_eq!(d.len(), 500);
    assert_eq!(v["trajectories"], 500);
    assert_eq!(v["digest"], d.digest().unwrap());
    assert_eq!(d.seed, 7);
    d.validate().unwrap();
}

#[test]
fn generate_is_repeatable_for_any_job_count() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = configs().join("ward_css.json");
    let mut bytes = Vec::new();
    for (i, jobs) in ["1", "3", "1"].iter().enumerate() {
        let out = dir.path().join(format!("d{i}.jsonl"));
        ok(&["generate", "--scenario", s(&scenario), "--n", "60", "--seed", "3", "--out", s(&out), "--jobs", jobs]);
        bytes.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
    assert_eq!(bytes[0], bytes[2]);
}

#[test]
fn generate_zero_is_valid() {
    let dir = tempfile::tempdir().unwrap();
    let out = generate(dir.path(), "empty.jsonl", 0, 1);
    let d = BatchDataset::load(&out).unwrap();
    assert!(d.is_empty());
}

#[test]
fn bad_config_names_the_key_and_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(configs().join("ward_css.json")).unwrap()).unwrap();
    v["horizn"] = serde_json::json!(3);
    std::fs::write(&cfg, v.to_string()).unwrap();
    let out = run(&["generate", "--scenario", s(&cfg), "--n", "1", "--seed", "1", "--out", s(&dir.path().join("o.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("horizn"));
}

#[test]
fn seed_is_mandatory() {
    let out = run(&["generate", "--scenario", "x.json", "--n", "1", "--out", "o.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
}

fn checkpoint_model(p: &Path) -> EnvironmentModel {
    Environment::load(p).unwrap().model
}

#[test]
fn zero_epoch_training_returns_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "d.jsonl", 20, 2);
    let ckpt = dir.path().join("css.json");
    let v = ok(&["train", "--env", "css", "--data", s(&data), "--epochs", "0", "--seed", "5", "--out", s(&ckpt)]);
    assert_eq!(v["kind"], "css");
    let d = BatchDataset::load(&data).unwrap();
    let dims = EnvDims::from_schema(&d.visible_schema().unwrap());
    let mut init = build_model(EnvKind::Css, dims, &EnvHyper::default(), 5).unwrap();
    let trained = checkpoint_model(&ckpt);
    // the automatic objective choice is the only field training may set
    if let (EnvironmentModel::Css(a), EnvironmentModel::Css(b)) = (&mut init, &trained) {
        a.objective = b.objective;
    }
    assert_eq!(trained, init);
    let curve = std::fs::read_to_string(format!("{}.curve.csv", s(&ckpt))).unwrap();
    assert_eq!(curve.lines().count(), 1);
}

#[test]
fn zero_noise_private_training_equals_plain_training() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "d.jsonl", 16, 2);
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let common = ["train", "--env", "tforce", "--data", s(&data), "--epochs", "2", "--seed", "1"];
    ok(&[&common[..], &["--out", s(&a), "--dp-clip", "1", "--dp-noise", "0"]].concat());
    ok(&[&common[..], &["--out", s(&b)]].concat());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let curve = std::fs::read_to_string(dir.path().join("b.json.curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 2);
    assert!(curve.starts_with("epoch,loss\n"));

    let c = dir.path().join("c.json");
    ok(&[&common[..], &["--out", s(&c), "--dp-clip", "1", "--dp-noise", "0.5"]].concat());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn training_without_out_uses_cache_dir() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "d.jsonl", 8, 2);
    let cache = dir.path().join("cache");
    let out = bin()
        .args(["train", "--env", "svae", "--data", s(&data), "--epochs", "1", "--seed", "1"])
        .env("DMKIT_CACHE", &cache)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let path = PathBuf::from(v["checkpoint"].as_str().unwrap());
    assert!(path.starts_with(&cache) && path.exists());
}

#[test]
fn discriminative_same_generator_is_low() {
    let dir = tempfile::tempdir().unwrap();
    let a = generate(dir.path(), "a.jsonl", 300, 1);
    let b = generate(dir.path(), "b.jsonl", 300, 2);
    let v = ok(&["evaluate", "--metric", "discriminative", "--synthetic", s(&a), "--real", s(&b), "--seed", "4", "--epochs", "20"]);
    assert_eq!(v["metric"], "discriminative");
    assert!(v["value"].as_f64().unwrap() <= 0.1, "{v}");
    assert!(v["config_digest"].is_string());
}

#[test]
fn ground_truth_compare_of_identical_exports_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g.json");
    let v = ok(&["inspect", s(&configs().join("ward_css.json")), "--export-ground-truth", s(&g)]);
    assert_eq!(v["type"], "scenario");
    let r = ok(&["evaluate", "--metric", "ground-truth", "--estimate", s(&g), "--truth", s(&g), "--seed", "0"]);
    assert_eq!(r["value"], 0.0);
    for c in r["details"]["components"].as_array().unwrap() {
        assert_eq!(c["beta_abs_error"], 0.0);
        assert_eq!(c["mask_jaccard"], 1.0);
        assert_eq!(c["lag_delta"], 0);
        assert_eq!(c["decider_max_abs_error"], 0.0);
    }
}

#[test]
fn action_match_on_identical_policies() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g.json");
    ok(&["inspect", s(&configs().join("ward_tforce_untrained.json")), "--export-ground-truth", s(&g)]);
    let probes = dir.path().join("p.jsonl");
    ok(&["generate", "--scenario", s(&configs().join("ward_tforce_untrained.json")), "--n", "5", "--seed", "1", "--out", s(&probes)]);
    let r = ok(&["evaluate", "--metric", "action-match", "--policy-a", s(&g), "--policy-b", s(&g), "--probes", s(&probes), "--seed", "0"]);
    assert_eq!(r["details"]["agreement"], 1.0);
    assert_eq!(r["details"]["mean_tv"], 0.0);
}

#[test]
fn usage_errors_exit_two() {
    let out = run(&["evaluate", "--metric", "discriminative", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--synthetic"));
    let out = run(&["evaluate", "--metric", "discriminative", "--seed", "1", "--synthetic", "nope.jsonl", "--real", "nope.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["evaluate", "--metric", "perplexity", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("d.jsonl");
    std::fs::write(&bad, "not json\n").unwrap();
    let out = run(&["train", "--env", "tforce", "--data", s(&bad), "--seed", "1", "--epochs", "1", "--out", s(&dir.path().join("c.json"))]);
    assert!(matches!(out.status.code(), Some(1) | Some(2)));
    let data = generate(dir.path(), "ok.jsonl", 4, 1);
    let out = run(&["train", "--env", "tforce", "--data", s(&data), "--seed", "1", "--epochs", "3", "--batch-size", "1", "--learning-rate", "1e300", "--out", s(&dir.path().join("c.json"))]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch"));
}

#[test]
fn inspect_and_project() {
    let dir = tempfile::tempdir().unwrap();
    let a = generate(dir.path(), "a.jsonl", 10, 1);
    let b = generate(dir.path(), "b.jsonl", 12, 2);
    let v = ok(&["inspect", s(&a)]);
    assert_eq!(v["type"], "dataset");
    assert_eq!(v["hidden_columns"], serde_json::json!(["lactate", "inr"]));
    let csv = dir.path().join("p.csv");
    let v = ok(&["project", "--real", s(&a), "--synthetic", s(&b), "--out", s(&csv)]);
    let rows = BatchDataset::load(&a).unwrap().total_steps() + BatchDataset::load(&b).unwrap().total_steps();
    assert_eq!(v["points"], rows);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), rows + 1);

    let ckpt = dir.path().join("c.json");
    ok(&["train", "--env", "balanced", "--data", s(&a), "--epochs", "1", "--seed", "1", "--out", s(&ckpt)]);
    let v = ok(&["inspect", s(&ckpt)]);
    assert_eq!(v["type"], "checkpoint");
    assert_eq!(v["kind"], "balanced");

    let v = ok(&["inspect", s(&configs().join("ward_tforce_untrained.json")), "--markov-budget", "4"]);
    assert_eq!(v["policy"]["markovianity"], "1");
}
