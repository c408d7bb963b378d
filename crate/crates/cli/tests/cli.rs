use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpmfuse"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Value {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn hash_of(manifest: &Path, file: &str) -> String {
    let m: Value = serde_json::from_str(&fs::read_to_string(manifest).unwrap()).unwrap();
    m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["path"].as_str().unwrap().ends_with(file))
        .map(|e| e["sha256"].as_str().unwrap().to_string())
        .unwrap_or_else(|| panic!("{file} not in {}", manifest.display()))
}

/// A chirp original, a pulse-train reference, and a variant (a) ODE record.
struct Fixture {
    dir: TempDir,
    record: PathBuf,
    reference: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let original = dir.path().join("chirp.wav");
        let reference = dir.path().join("ref.wav");
        let record = dir.path().join("rec.jsonl");
        ok(&["gen", "--kind", "chirp", "--seed", "3", "--out", p(&original)]);
        ok(&["gen", "--kind", "pulse_train", "--seed", "4", "--out", p(&reference)]);
        ok(&["invert", "--in", p(&original), "--variant", "a", "--mode", "ode", "--out", p(&record)]);
        Self { dir, record, reference }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

#[test]
fn invert_verify_round_trips_x0() {
    let fx = Fixture::new();
    let out = fx.path("verified.jsonl");
    let v = ok(&["invert", "--in", p(&fx.path("chirp.wav")), "--variant", "a", "--mode", "ode",
        "--out", p(&out), "--verify"]);
    assert_eq!(v["verify"]["passed"], true);
    assert!(v["verify"]["replay_max_relative_deviation"].as_f64().unwrap() <= 1e-6);
    assert!(fx.path("verified.manifest.json").exists());
}

#[test]
fn t_max_zero_record_holds_only_x0() {
    let fx = Fixture::new();
    let out = fx.path("zero.jsonl");
    ok(&["invert", "--in", p(&fx.path("chirp.wav")), "--t-max", "0", "--out", p(&out)]);
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2, "header plus x0");
    assert_eq!(lines[0]["t_max"], 0);
    assert_eq!(lines[1]["t"], 0);
}

#[test]
fn exit_codes() {
    let fx = Fixture::new();
    let missing_in = run(&["invert", "--out", p(&fx.path("x.jsonl"))]);
    assert_eq!(missing_in.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing_in.stderr).contains("Usage"));

    let unreadable = run(&["invert", "--in", p(&fx.path("absent.wav")), "--out", p(&fx.path("x.jsonl"))]);
    assert_eq!(unreadable.status.code(), Some(3));

    let nan = fx.path("nan.json");
    fs::write(&nan, r#"{"values": [0.1, NaN]}"#).unwrap();
    assert_eq!(run(&["invert", "--in", p(&nan), "--out", p(&fx.path("x.jsonl"))]).status.code(), Some(3));
    // Finite input whose inverted latents overflow.
    fs::write(&nan, "[1e307, -1e307]").unwrap();
    let overflow = run(&["invert", "--in", p(&nan), "--mode", "sde", "--out", p(&fx.path("x.jsonl"))]);
    assert_eq!(overflow.status.code(), Some(4), "{}", String::from_utf8_lossy(&overflow.stderr));

    let absent_t = run(&["fuse", "--record", p(&fx.record), "--reference", p(&fx.reference),
        "--intervene-t", "250", "--out", p(&fx.path("f"))]);
    assert_eq!(absent_t.status.code(), Some(5));

    let bad_order = run(&["fuse", "--record", p(&fx.record), "--reference", p(&fx.reference),
        "--intervene-t", "10", "--order", "4", "--out", p(&fx.path("f"))]);
    assert_eq!(bad_order.status.code(), Some(2));
}

#[test]
fn intervening_at_zero_renders_the_original() {
    let fx = Fixture::new();
    let fused = fx.path("f0");
    let rt = fx.path("rt");
    ok(&["fuse", "--record", p(&fx.record), "--reference", p(&fx.reference), "--intervene-t", "0",
        "--out", p(&fused)]);
    ok(&["roundtrip", "--record", p(&fx.record), "--out", p(&rt)]);
    assert_eq!(
        fs::read(fused.join("fused.wav")).unwrap(),
        fs::read(rt.join("original.wav")).unwrap()
    );
    assert_eq!(
        hash_of(&fused.join("manifest.json"), "fused.wav"),
        hash_of(&rt.join("manifest.json"), "original.wav")
    );
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn fuse_list_writes_monotone_sweep() {
    let fx = Fixture::new();
    let out = fx.path("sweep");
    ok(&["fuse", "--record", p(&fx.record), "--reference", p(&fx.reference),
        "--intervene-t", "0,40,80,120,160,200", "--out", p(&out)]);
    let rows = csv_rows(&out.join("sweep.csv"));
    assert_eq!(rows.len(), 6);
    let col = |i: usize| -> Vec<f64> { rows.iter().map(|r| r[i].parse().unwrap()).collect() };
    let (orig, reference) = (col(3), col(4));
    assert!(orig.windows(2).all(|w| w[1] >= w[0]), "{orig:?}");
    assert!(reference.windows(2).all(|w| w[1] <= w[0]), "{reference:?}");
}

#[test]
fn history_policy_gives_distinct_outputs() {
    let fx = Fixture::new();
    let mut hashes = Vec::new();
    for policy in ["persist", "reset"] {
        let out = fx.path(policy);
        ok(&["fuse", "--record", p(&fx.record), "--reference", p(&fx.reference), "--intervene-t", "120",
            "--order", "3", "--history", policy, "--out", p(&out)]);
        hashes.push(hash_of(&out.join("manifest.json"), "trajectory.jsonl"));
    }
    assert_ne!(hashes[0], hashes[1]);
}

#[test]
fn roundtrip_reports_deviation() {
    let fx = Fixture::new();
    let v = ok(&["roundtrip", "--record", p(&fx.record)]);
    assert_eq!(v["passed"], true);
    assert!(v["max_relative_deviation"].as_f64().unwrap() <= 1e-6);

    let b = fx.path("b.jsonl");
    ok(&["invert", "--in", p(&fx.path("chirp.wav")), "--variant", "b", "--out", p(&b)]);
    assert_eq!(run(&["roundtrip", "--record", p(&b)]).status.code(), Some(2));
}

#[test]
fn compare_one_signal_one_seed() {
    let dir = TempDir::new().unwrap();
    let v = ok(&["compare", "--kinds", "chirp", "--trials", "1", "--out", p(dir.path())]);
    assert_eq!(v["rows"], 3);
    let rows = csv_rows(&dir.path().join("compare.csv"));
    assert_eq!(rows.iter().filter(|r| r[0] != "mean").count(), 3);
}

#[test]
fn sweep_cardinality() {
    let fx = Fixture::new();
    let out = fx.path("sw");
    let v = ok(&["sweep", "--record", p(&fx.record), "--reference", p(&fx.reference), "--orders", "1,2,3",
        "--t-values", "0,50,100,150,200", "--out", p(&out)]);
    assert_eq!(v["rows"], 15);
    assert_eq!(csv_rows(&out.join("sweep.csv")).len(), 15);
}

#[test]
fn identical_invocations_reproduce_hashes() {
    let fx = Fixture::new();
    let mut manifests = Vec::new();
    for name in ["one", "two"] {
        let out = fx.path(name);
        ok(&["fuse", "--record", p(&fx.record), "--reference", p(&fx.reference), "--intervene-t", "80",
            "--order", "2", "--mode", "sde", "--seed", "11", "--out", p(&out)]);
        manifests.push(out.join("manifest.json"));
    }
    for file in ["fused.wav", "trajectory.jsonl", "metrics.json"] {
        assert_eq!(hash_of(&manifests[0], file), hash_of(&manifests[1], file));
    }
}

#[test]
fn sample_with_oracle_config() {
    let fx = Fixture::new();
    let cfg = fx.path("oracle.json");
    fs::write(&cfg, r#"{"kind": "memorizing", "parameters": {"gamma": 0.5}, "reference_signal_path": "ref.wav"}"#)
        .unwrap();
    let out = fx.path("smp");
    let v = ok(&["sample", "--config", p(&cfg), "--cond", "reference", "--guidance", "2", "--order", "2",
        "--out", p(&out)]);
    assert_eq!(v["evaluations"], 400, "guidance doubles evaluations");
    let m: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config_path"], p(&cfg));
}
