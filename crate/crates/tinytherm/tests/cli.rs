//! End-to-end runs of the `tinytherm` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"
seed = 7

[arch]
widths = [8, 16, 32, 32]
kmeans_iterations = 20

[synth]
train_sequences = 2
val_sequences = 1
test_sequences = 1
frames_per_sequence = 24

[train]
max_iters = 60
val_every = 20

[prune]
max_iterations = 2
finetune_max_iters = 20
finetune_lr_drop_at = 10
"#;

struct Run {
    dir: TempDir,
    config: PathBuf,
}

impl Run {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let config = dir.path().join("small.toml");
        std::fs::write(&config, SMALL).unwrap();
        Self { dir, config }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn cmd(&self, args: &[&str]) -> Output {
        let config = self.config.to_str().unwrap();
        self.bare(&[&["--config", config], args].concat())
    }

    /// Without the small configuration.
    fn bare(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_tinytherm")).args(args).current_dir(self.dir.path()).output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.cmd(args);
        assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn manifest(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn full_chain() {
    let r = Run::new();
    r.ok(&["synth", "--out", "data"]);
    for split in ["train", "val", "test"] {
        assert!(r.path(&format!("data/{split}/seq_000/frame_000023.tiff")).exists());
        assert!(r.path(&format!("data/{split}/seq_000/annotations.jsonl")).exists());
    }
    let m = manifest(&r.path("data/manifest.json"));
    assert_eq!(m["command"], "synth");
    let hashed = m["outputs"].as_array().unwrap();
    assert!(hashed.iter().any(|f| f["path"].as_str().unwrap().ends_with("frame_000023.tiff")));
    r.ok(&["train", "--data", "data", "--out", "model.tpdm"]);
    let log = std::fs::read_to_string(r.path("model.tpdm.train.csv")).unwrap();
    assert!(log.starts_with("iter,lr,train_loss,val_loss"));

    let m = manifest(&r.path("model.tpdm.manifest.json"));
    assert_eq!(m["command"], "train");
    assert_eq!(m["seed"], 7);
    let out = &m["outputs"][0];
    let bytes = std::fs::read(r.path("model.tpdm")).unwrap();
    assert_eq!(out["sha256"], tinytherm::manifest::blob_hash(&bytes));

    r.ok(&["prune", "--data", "data", "--model", "model.tpdm", "--out-dir", "pruned"]);
    let ledger = std::fs::read_to_string(r.path("pruned/prune_ledger.csv")).unwrap();
    assert_eq!(ledger.lines().count(), 3, "{ledger}");
    assert!(r.path("pruned/iter_002.tpdm").exists());

    r.ok(&["quantize", "--data", "data", "--model", "pruned/pruned.tpdm", "--out", "model.tpdq", "--calibration", "10"]);

    let seq = "data/test/seq_000";
    r.ok(&["detect", "--model", "pruned/pruned.tpdm", "--input", seq, "--out", "f32.jsonl", "--timing", "timing.csv", "--bg-dump-every", "8"]);
    let timing = std::fs::read_to_string(r.path("timing.csv")).unwrap();
    for stage in ["normalize+bg_sub", "inference", "decode+nms", "bg_update"] {
        assert!(timing.contains(stage), "{timing}");
    }
    assert!(r.path("f32.jsonl.background/background_000015.tiff").exists());
    r.ok(&["detect", "--model", "model.tpdq", "--executor", "int8", "--input", seq, "--out", "int8.jsonl"]);

    for dets in ["f32.jsonl", "int8.jsonl"] {
        let ann = format!("{seq}/annotations.jsonl");
        let text = r.ok(&["eval", "--detections", dets, "--annotations", &ann]);
        assert!(text.starts_with("AP ") && text.contains("\nF1 "), "{text}");
    }
    let text = r.ok(&["eval", "--model", "model.tpdq", "--data", "data", "--split", "val", "--pr-csv", "pr.csv", "--pr-svg", "pr.svg"]);
    assert!(text.starts_with("AP "));
    assert!(std::fs::read_to_string(r.path("pr.svg")).unwrap().starts_with("<svg"));
    assert!(r.path("pr.csv.manifest.json").exists());

    let table = r.ok(&["report", "--model", "model.tpdq", "--csv", "report.csv"]);
    assert!(table.contains("int8"), "{table}");
    assert!(r.path("report.csv").exists());
}

#[test]
fn perfect_detections_score_full_marks() {
    let r = Run::new();
    r.ok(&["synth", "--out", "data", "--train", "0", "--val", "0", "--test", "1"]);
    let ann = std::fs::read_to_string(r.path("data/test/seq_000/annotations.jsonl")).unwrap();
    let mut dets = String::new();
    for line in ann.lines() {
        let mut v: serde_json::Value = serde_json::from_str(line).unwrap();
        v["score"] = 1.0.into();
        dets.push_str(&v.to_string());
        dets.push('\n');
    }
    assert!(!dets.is_empty());
    std::fs::write(r.path("perfect.jsonl"), dets).unwrap();
    let text = r.ok(&["eval", "--detections", "perfect.jsonl", "--annotations", "data/test/seq_000/annotations.jsonl"]);
    assert!(text.contains("AP 100.00%"), "{text}");
    assert!(text.contains("F1 100.00%"), "{text}");
}

#[test]
fn same_seed_same_bytes() {
    let r = Run::new();
    let files = |root: &str| {
        let mut v = Vec::new();
        for split in ["train", "val"] {
            for name in ["annotations.jsonl", "frame_000000.tiff", "frame_000017.tiff"] {
                v.push(std::fs::read(r.path(&format!("{root}/{split}/seq_000/{name}"))).unwrap());
            }
        }
        v
    };
    r.ok(&["synth", "--out", "a", "--test", "0"]);
    r.ok(&["synth", "--out", "b", "--test", "0"]);
    assert_eq!(files("a"), files("b"));
    r.ok(&["--seed", "8", "synth", "--out", "c", "--test", "0"]);
    assert_ne!(files("a"), files("c"));

    r.ok(&["train", "--data", "a", "--out", "m1.tpdm", "--iters", "20"]);
    r.ok(&["train", "--data", "b", "--out", "m2.tpdm", "--iters", "20"]);
    assert_eq!(std::fs::read(r.path("m1.tpdm")).unwrap(), std::fs::read(r.path("m2.tpdm")).unwrap());
}

#[test]
fn exit_codes_name_the_failure() {
    let r = Run::new();
    let missing = r.cmd(&["report", "--model", "nope.tpdm"]);
    assert_eq!(exit_code(&missing), 4);
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error[io]"));

    assert_eq!(exit_code(&r.cmd(&["report", "--frobnicate"])), 2);

    std::fs::write(r.path("typo.toml"), "[train]\nmax_iter = 3\n").unwrap();
    let bad = r.bare(&["--config", "typo.toml", "synth", "--out", "x"]);
    assert_eq!(exit_code(&bad), 3);

    r.ok(&["synth", "--out", "data", "--train", "1", "--val", "1", "--test", "0"]);
    r.ok(&["train", "--data", "data", "--out", "m.tpdm", "--iters", "2"]);
    let mut bytes = std::fs::read(r.path("m.tpdm")).unwrap();
    bytes[4] = 9;
    std::fs::write(r.path("future.tpdm"), &bytes).unwrap();
    assert_eq!(exit_code(&r.cmd(&["report", "--model", "future.tpdm"])), 7);

    std::fs::write(r.path("junk.tpdm"), b"not a model at all").unwrap();
    assert_eq!(exit_code(&r.cmd(&["report", "--model", "junk.tpdm"])), 5);

    let mismatch = r.cmd(&["detect", "--model", "m.tpdm", "--executor", "int8", "--input", "data/train/seq_000", "--out", "d.jsonl"]);
    assert_eq!(exit_code(&mismatch), 2);
}

/// Synth through eval on 500 frames (8 + 1 + 1 sequences of 50) against a
/// 30 minute budget, with the reduced-width detector.
#[test]
fn five_hundred_frame_chain_fits_the_budget() {
    let r = Run::new();
    std::fs::write(
        &r.config,
        format!("{SMALL}\n[quantize]\ncalibration_images = 100\n").replace("max_iters = 60", "max_iters = 400"),
    )
    .unwrap();
    let start = std::time::Instant::now();
    r.ok(&["synth", "--out", "data", "--train", "8", "--val", "1", "--test", "1", "--frames", "50"]);
    let frames = ["train", "val", "test"]
        .iter()
        .flat_map(|s| std::fs::read_dir(r.path(&format!("data/{s}"))).unwrap())
        .map(|seq| std::fs::read_dir(seq.unwrap().path()).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "tiff")).count())
        .sum::<usize>();
    assert_eq!(frames, 500);
    r.ok(&["train", "--data", "data", "--out", "model.tpdm"]);
    r.ok(&["prune", "--data", "data", "--model", "model.tpdm", "--out-dir", "pruned"]);
    r.ok(&["quantize", "--data", "data", "--model", "pruned/pruned.tpdm", "--out", "model.tpdq"]);
    let text = r.ok(&["eval", "--model", "model.tpdq", "--data", "data"]);
    let elapsed = start.elapsed();
    assert!(text.starts_with("AP "));
    assert!(elapsed.as_secs() < 30 * 60, "{elapsed:?}");
}
