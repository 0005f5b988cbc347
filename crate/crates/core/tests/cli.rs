use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use binpack_adversary::attack::CampaignResult;
use binpack_adversary::instances::Dataset;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_binpack-adversary");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("BINPACK_ADVERSARY_SEED")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Model that answers BF iff the item sum is even.
const PARITY_MODEL: &str = r#"
import json, sys
for line in sys.stdin:
    req = json.loads(line)
    p = 1.0 if sum(req["items"]) % 2 == 0 else 0.0
    print(json.dumps({"id": req["id"], "p_bf": p}), flush=True)
"#;

fn write_config(dir: &Path, model: serde_json::Value, dataset: serde_json::Value) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "campaign_id": "c",
        "dataset": dataset,
        "model": model,
        "ea": {"population_size": 10, "generations": 6, "runs_per_instance": 2},
        "probe": {"n_masks": 40},
        "output_dir": dir.join("out"),
        "seed": 3,
    });
    let path = dir.join("config.json");
    fs::write(&path, cfg.to_string()).unwrap();
    path
}

fn small_spec(n: usize, items: usize) -> serde_json::Value {
    serde_json::json!({"spec": {
        "n_instances": n, "n_items": items, "min_size": 20, "max_size": 100,
        "bin_capacity": 150, "balance": true, "seed": 5
    }})
}

fn surrogate() -> serde_json::Value {
    serde_json::json!({"surrogate": {"train": {"hidden_dim": 4, "epochs": 200}}})
}

#[test]
fn generate_requires_output() {
    let out = run(&["generate", "--n", "10"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn generate_is_deterministic_and_counts() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    ok(&["generate", "--n", "20", "--items", "30", "--seed", "7", "-o", p(&a)]);
    ok(&["generate", "--n", "20", "--items", "30", "--seed", "7", "-o", p(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let ds = Dataset::load(&a).unwrap();
    assert_eq!(ds.instances.len(), 20);
    assert!(ds.instances.iter().all(|li| li.items().len() == 30));
    assert_eq!(ds.count_winners(), (10, 10));
}

#[test]
fn generate_rejects_invalid_spec() {
    let dir = TempDir::new().unwrap();
    let out = run(&["generate", "--min-size", "90", "--max-size", "50", "-o", p(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn env_seed_used_when_flag_absent() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    let status = Command::new(BIN)
        .args(["generate", "--n", "4", "--items", "10", "-o", p(&a)])
        .env("BINPACK_ADVERSARY_SEED", "7")
        .status()
        .unwrap();
    assert!(status.success());
    ok(&["generate", "--n", "4", "--items", "10", "--seed", "7", "-o", p(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn attack_pipeline_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), surrogate(), small_spec(12, 30));
    let out = dir.path().join("out");
    let files = [
        "c.dataset.jsonl",
        "c.probe.jsonl",
        "c.campaign.jsonl",
        "c.archive.jsonl",
        "c.surrogate.json",
        "c.summary.json",
        "c.ks.csv",
        "c.trajectories.csv",
        "c.projection_matrix.csv",
    ];
    let mut snapshots = Vec::new();
    for jobs in ["1", "3"] {
        ok(&["attack", "--config", p(&cfg), "--no-timestamp", "--jobs", jobs]);
        ok(&["analyze", "--config", p(&cfg), "--no-timestamp", "--ks"]);
        ok(&["export", "--config", p(&cfg), "--no-timestamp", "--kind", "trajectories"]);
        ok(&["export", "--config", p(&cfg), "--no-timestamp", "--kind", "projection_matrix"]);
        snapshots.push(files.map(|f| fs::read(out.join(f)).unwrap()));
    }
    assert_eq!(snapshots[0], snapshots[1]);

    let probe = fs::read_to_string(out.join("c.probe.jsonl")).unwrap();
    let header: serde_json::Value = serde_json::from_str(probe.lines().next().unwrap()).unwrap();
    assert_eq!(header["config"]["seed"], 3);
    assert!(header.get("timestamp_unix").is_none());
    ok(&["probe", "--config", p(&cfg)]);
    let probe = fs::read_to_string(out.join("c.probe.jsonl")).unwrap();
    assert!(probe.lines().next().unwrap().contains("\"timestamp_unix\":"));
}

#[test]
fn seed_flag_changes_results() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), surrogate(), small_spec(8, 30));
    let out = dir.path().join("out");
    ok(&["probe", "--config", p(&cfg), "--no-timestamp"]);
    let a = fs::read_to_string(out.join("c.archive.jsonl")).unwrap();
    ok(&["probe", "--config", p(&cfg), "--no-timestamp", "--seed", "99"]);
    let b = fs::read_to_string(out.join("c.archive.jsonl")).unwrap();
    assert_ne!(a, b);
    assert!(b.lines().next().unwrap().contains("\"seed\":99"));
}

#[test]
fn all_fragile_dataset_gets_no_ea_runs() {
    let dir = TempDir::new().unwrap();
    let model = serde_json::json!({"external": {"endpoint": {"subprocess": {
        "command": "python3", "args": ["-c", PARITY_MODEL]
    }}}});
    let cfg = write_config(dir.path(), model, small_spec(10, 30));
    let out = dir.path().join("out");
    for cmd in ["probe", "attack"] {
        ok(&[cmd, "--config", p(&cfg), "--no-timestamp"]);
        let c = CampaignResult::read_from(
            fs::read(out.join("c.probe.jsonl")).unwrap().as_slice(),
            fs::read(out.join("c.campaign.jsonl")).unwrap().as_slice(),
            fs::read(out.join("c.archive.jsonl")).unwrap().as_slice(),
        )
        .unwrap();
        assert!(!c.probes.is_empty());
        assert!(c.probes.iter().all(|p| p.fragile), "{cmd}: some instance survived the probe");
        assert!(c.runs.is_empty());
        let body = fs::read_to_string(out.join("c.campaign.jsonl")).unwrap();
        assert_eq!(body.lines().count(), 1, "only the header line");
    }
    ok(&["analyze", "--config", p(&cfg), "--no-timestamp"]);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("c.summary.json")).unwrap()).unwrap();
    assert!(summary["summary"].is_null());
}

#[test]
fn unreachable_endpoint_exits_one() {
    let dir = TempDir::new().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let model = serde_json::json!({"external": {"endpoint": {"tcp": {"addr": format!("127.0.0.1:{port}")}}, "timeout_ms": 500}});
    let cfg = write_config(dir.path(), model, small_spec(4, 10));
    let out = run(&["attack", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("external model"), "{err}");
}

#[test]
fn config_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    assert_eq!(run(&["attack", "--config", "/nonexistent/config.json"]).status.code(), Some(2));
    let model = serde_json::json!({"native": {"weights": "/nonexistent/w.json"}});
    let cfg = write_config(dir.path(), model, small_spec(4, 10));
    assert_eq!(run(&["attack", "--config", p(&cfg)]).status.code(), Some(2));
    let cfg = write_config(dir.path(), surrogate(), small_spec(4, 10));
    let out = Command::new(BIN)
        .args(["probe", "--config", p(&cfg)])
        .env("BINPACK_ADVERSARY_SEED", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(run(&["attack", "--config", p(&cfg), "--population", "1"]).status.code(), Some(2));
}

#[test]
fn label_filter_and_train_round_trip() {
    let dir = TempDir::new().unwrap();
    let raw = dir.path().join("raw.jsonl");
    fs::write(
        &raw,
        "{\"id\":\"t\",\"items\":[75,75,75,75]}\n{\"id\":\"a\",\"items\":[60,60,70,40,80,30,50,90,20,45]}\n",
    )
    .unwrap();
    let labelled = dir.path().join("labelled.jsonl");
    let out = ok(&["label", "-i", p(&raw), "-o", p(&labelled)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("1 ties dropped"));
    assert_eq!(Dataset::load(&labelled).unwrap().instances.len(), 1);

    let ds = dir.path().join("ds.jsonl");
    ok(&["generate", "--n", "40", "--items", "30", "--seed", "2", "-o", p(&ds)]);
    let model = dir.path().join("model.json");
    ok(&["train-surrogate", "--dataset", p(&ds), "--hidden", "4", "--epochs", "300", "-o", p(&model)]);
    let kept = dir.path().join("kept.jsonl");
    ok(&["filter", "--dataset", p(&ds), "--surrogate", p(&model), "-o", p(&kept)]);
    let n = Dataset::load(&kept).unwrap().instances.len();
    assert!(n > 0 && n <= 40);
    assert_eq!(run(&["filter", "--dataset", p(&ds), "-o", p(&kept)]).status.code(), Some(2));
}
