use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn robdistill(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robdistill")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = robdistill(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn distill(dir: &Path, extra: &[&str]) -> Vec<u8> {
    let mut args = vec!["distill", "--preset", "tiny", "--seed", "5", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    ok(&args);
    fs::read(dir.join("metrics.jsonl")).unwrap()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = robdistill(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert!(out.stdout.is_empty());
}

#[test]
fn help_exits_zero() {
    assert_eq!(robdistill(&["--help"]).status.code(), Some(0));
}

#[test]
fn params_prints_counts() {
    let s = ok(&["params", "--preset", "toy"]);
    assert!(s.contains("teacher 420736"), "{s}");
    assert!(s.contains("student 98496"), "{s}");
}

#[test]
fn unknown_config_key_is_a_runtime_error_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"policy": {"snr_lo": 1}}"#).unwrap();
    let out = robdistill(&["params", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("policy.snr_lo"));
}

#[test]
fn distill_is_deterministic_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let a = distill(&dir.path().join("a"), &["--threads", "1"]);
    let b = distill(&dir.path().join("b"), &["--threads", "1"]);
    let c = distill(&dir.path().join("c"), &["--threads", "8"]);
    assert!(!a.is_empty());
    assert_eq!(a, b);
    assert_eq!(a, c);
    for f in ["config.json", "versions.json", "metrics.jsonl", "student.rdck", "teacher.rdck"] {
        assert!(dir.path().join("a").join(f).is_file(), "{f}");
    }
    let first: serde_json::Value = serde_json::from_slice(a.split(|&b| b == b'\n').next().unwrap()).unwrap();
    for key in ["step", "lr", "loss_distill", "loss_enh", "wall_ms"] {
        assert!(first.get(key).is_some(), "{key}");
    }

    // The emitted config alone reproduces the run.
    let cfg = dir.path().join("a").join("config.json");
    let d = dir.path().join("d");
    ok(&["distill", "--config", cfg.to_str().unwrap(), "--out", d.to_str().unwrap()]);
    assert_eq!(fs::read(d.join("metrics.jsonl")).unwrap(), a);
}

#[test]
fn ablation_flags_change_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let plain = distill(&dir.path().join("p"), &["--no-enh-head", "--no-augment", "--steps", "5"]);
    let text = String::from_utf8(plain).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().all(|l| l.contains("\"loss_enh\":null")));
    let cfg: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("p/config.json")).unwrap()).unwrap();
    assert_eq!(cfg["distill"]["beta_enh"], 0.0);
    assert_eq!(cfg["distill"]["augment"], false);
}

#[test]
fn eval_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    distill(&run, &["--steps", "4"]);
    let ckpt = run.join("student.rdck");
    let ev = dir.path().join("eval");
    let md = ok(&[
        "eval",
        "--preset",
        "tiny",
        "--model",
        ckpt.to_str().unwrap(),
        "--scenarios",
        "c,n,r,n+r",
        "--report",
        "md",
        "--out",
        ev.to_str().unwrap(),
    ]);
    assert!(md.starts_with("| Model | KS c | KS n | KS r | KS n+r | Overall |"), "{md}");
    assert!(ev.join("results.json").is_file() && ev.join("config.json").is_file());

    let base = dir.path().join("base");
    ok(&["eval", "--preset", "tiny", "--model", "logspec", "--scenarios", "c,n", "--out", base.to_str().unwrap()]);
    let merged = dir.path().join("merged.csv");
    ok(&[
        "report",
        ev.join("results.json").to_str().unwrap(),
        base.join("results.json").to_str().unwrap(),
        "--format",
        "csv",
        "--out",
        merged.to_str().unwrap(),
    ]);
    let csv = fs::read_to_string(&merged).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
    assert!(csv.lines().nth(2).unwrap().starts_with("logspec,"));

    let again = ok(&["report", merged.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(again, csv);

    let bd_dir = dir.path().join("bd");
    let bd = ok(&[
        "eval",
        "--preset",
        "tiny",
        "--model",
        "logspec",
        "--scenarios",
        "",
        "--breakdown",
        "room-size",
        "--out",
        bd_dir.to_str().unwrap(),
    ]);
    assert!(bd.contains("| room-size | Accuracy |") && bd.contains("| large |"), "{bd}");
    let bins: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(bd_dir.join("breakdown.json")).unwrap()).unwrap();
    assert_eq!(bins.as_object().unwrap().len(), 3);
}

#[test]
fn synth_corpus_feeds_augment() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    ok(&["synth-corpus", "--preset", "tiny", "--out", corpus.to_str().unwrap()]);
    let policy = dir.path().join("policy.json");
    fs::write(&policy, r#"{"snr_low_db": 5, "snr_high_db": 5, "action_weights": [0, 1, 0, 0]}"#).unwrap();
    let out = dir.path().join("aug");
    ok(&[
        "augment",
        "--preset",
        "tiny",
        "--seed",
        "3",
        "--manifest-speech",
        corpus.join("speech.jsonl").to_str().unwrap(),
        "--manifest-noise",
        corpus.join("noise_train.jsonl").to_str().unwrap(),
        "--manifest-rir",
        corpus.join("rir_train.jsonl").to_str().unwrap(),
        "--policy",
        policy.to_str().unwrap(),
        "--count",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    let log = fs::read_to_string(out.join("actions.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["action"], "noise");
        assert_eq!(v["snr_db"], 5.0);
    }
    assert!(out.join("input_0002.wav").is_file() && out.join("target_0002.wav").is_file());
}

#[test]
fn gradcheck_passes_on_one_seed() {
    let s = ok(&["gradcheck", "--seeds", "1"]);
    assert!(s.contains("student_loss") && !s.contains("FAIL"), "{s}");
}
