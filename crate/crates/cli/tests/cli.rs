//! End-to-end tests of the `fixpoint` binary: every subcommand, the
//! flag/config-file precedence rules, determinism across runs, and the
//! documented exit codes (0 ok, 2 usage, 3 data, 4 divergence).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_fixpoint")
}

/// Self-cleaning per-test scratch directory.
struct Scratch(PathBuf);

impl Scratch {
    fn new(tag: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("fixpoint-cli-{}-{tag}", std::process::id()));
        if dir.exists() {
            fs::remove_dir_all(&dir).unwrap();
        }
        fs::create_dir_all(&dir).unwrap();
        Scratch(dir)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    fn write(&self, name: &str, content: &str) -> PathBuf {
        let p = self.path(name);
        fs::write(&p, content).unwrap();
        p
    }
}

impl Drop for Scratch {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.0);
    }
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary should launch")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal expected")
}

fn toy_corpus(dir: &Scratch) -> (PathBuf, PathBuf, PathBuf) {
    let mut train = String::new();
    for i in 0..40 {
        train.push_str(if i % 2 == 0 { "a b a b\n" } else { "c d c\n" });
    }
    (
        dir.write("train.txt", &train),
        dir.write("valid.txt", "a b a b\nc d c\n"),
        dir.write("test.txt", "a b\nc d c d\n"),
    )
}

fn path_arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn pipeline_trains_evals_and_builds_vocab() {
    let dir = Scratch::new("pipeline");
    let (train, valid, test) = toy_corpus(&dir);
    let out_dir = dir.path("run");

    let out = run(&[
        "train",
        "--train",
        path_arg(&train),
        "--valid",
        path_arg(&valid),
        "--out",
        path_arg(&out_dir),
        "--epochs",
        "2",
        "--hidden",
        "6",
        "--batch-size",
        "8",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("# resolved configuration"));
    assert!(text.contains("grad-mode = bptt"));
    assert!(text.contains("hidden = 6"));
    assert!(text.contains("epoch 1: train "));
    assert!(text.contains("epoch 2: train "));
    assert!(text.contains("model written to "));

    for file in [
        "vocab.txt",
        "model.bin",
        "metrics.csv",
        "epoch1.model",
        "epoch1.opt",
        "epoch2.model",
        "epoch2.opt",
    ] {
        assert!(out_dir.join(file).exists(), "missing {file}");
    }
    let metrics = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,train_loss_nats_per_word,valid_ppl,seconds\n"));
    assert_eq!(metrics.lines().count(), 3);

    for engine in ["sequential", "fpi:3"] {
        let out = run(&[
            "eval",
            "--model",
            path_arg(&out_dir.join("model.bin")),
            "--vocab",
            path_arg(&out_dir.join("vocab.txt")),
            "--text",
            path_arg(&test),
            "--engine",
            engine,
        ]);
        assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
        let line = stdout(&out);
        let ppl: f64 = line
            .strip_prefix("perplexity ")
            .and_then(|rest| rest.split_whitespace().next())
            .expect("perplexity line")
            .parse()
            .expect("numeric perplexity");
        assert!(ppl.is_finite() && ppl > 1.0, "{line}");
    }

    let vocab_path = dir.path("vocab-only.txt");
    let out = run(&[
        "build-vocab",
        "--text",
        path_arg(&train),
        "--out",
        path_arg(&vocab_path),
        "--min-count",
        "2",
    ]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).starts_with("vocab size "));
    let vocab_text = fs::read_to_string(&vocab_path).unwrap();
    assert!(vocab_text.starts_with("fixpoint-vocab v1 "));
}

#[test]
fn training_is_seed_reproducible() {
    let dir = Scratch::new("repro");
    let (train, valid, _) = toy_corpus(&dir);
    let mut models = Vec::new();
    for (name, seed) in [("a", "7"), ("b", "7"), ("c", "8")] {
        let out_dir = dir.path(name);
        let out = run(&[
            "train",
            "--train",
            path_arg(&train),
            "--valid",
            path_arg(&valid),
            "--out",
            path_arg(&out_dir),
            "--epochs",
            "1",
            "--hidden",
            "5",
            "--seed",
            seed,
        ]);
        assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
        models.push(fs::read(out_dir.join("model.bin")).unwrap());
    }
    assert_eq!(models[0], models[1], "same seed must give identical bytes");
    assert_ne!(models[0], models[2], "different seed must give a different model");
}

#[test]
fn config_file_merges_and_flags_win() {
    let dir = Scratch::new("config");
    let (train, valid, _) = toy_corpus(&dir);
    let cfg = dir.write("run.cfg", "hidden = 7\nepochs = 1\nseed = 9\n");

    let out = run(&[
        "train",
        "--train",
        path_arg(&train),
        "--valid",
        path_arg(&valid),
        "--out",
        path_arg(&dir.path("out")),
        "--config",
        path_arg(&cfg),
        "--hidden",
        "5",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("hidden = 5"), "flag must override file");
    assert!(text.contains("epochs = 1"), "file must override default");
    assert!(text.contains("seed = 9"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = Scratch::new("usage");
    let (train, valid, _) = toy_corpus(&dir);
    let out_dir = dir.path("out");
    let train_args = |extra: &[&str]| -> Vec<String> {
        [
            "train",
            "--train",
            path_arg(&train),
            "--valid",
            path_arg(&valid),
            "--out",
            path_arg(&out_dir),
        ]
        .iter()
        .copied()
        .chain(extra.iter().copied())
        .map(String::from)
        .collect()
    };

    let unknown_flag = Command::new(bin())
        .args(["train", "--no-such-flag"])
        .output()
        .unwrap();
    assert_eq!(code(&unknown_flag), 2);

    let bad_key = dir.write("bad.cfg", "not-a-key = 1\n");
    let out = Command::new(bin())
        .args(train_args(&["--config", path_arg(&bad_key)]))
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("not-a-key"));

    let dup_key = dir.write("dup.cfg", "hidden = 3\nhidden = 4\n");
    let out = Command::new(bin())
        .args(train_args(&["--config", path_arg(&dup_key)]))
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("duplicate"));

    let out = Command::new(bin())
        .args(train_args(&["--grad-mode", "fpi"]))
        .output()
        .unwrap();
    assert_eq!(code(&out), 2, "fpi without --rho");
    assert!(stderr(&out).contains("--rho"));

    let out = Command::new(bin())
        .args(train_args(&["--rho", "3"]))
        .output()
        .unwrap();
    assert_eq!(code(&out), 2, "rho without an fpi mode");

    let out = Command::new(bin())
        .args(train_args(&["--clip-norm", "sideways"]))
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);

    let out = Command::new(bin())
        .args(train_args(&["--epochs", "0"]))
        .output()
        .unwrap();
    assert_eq!(code(&out), 2, "zero epochs is a config error");

    let out = run(&[
        "sweep-rho",
        "--train",
        path_arg(&train),
        "--valid",
        path_arg(&valid),
        "--test",
        path_arg(&valid),
        "--rho-list",
        "0",
        "--out",
        path_arg(&dir.path("s.csv")),
    ]);
    assert_eq!(code(&out), 2, "zero rho in the sweep list");
    assert!(stderr(&out).contains("--rho-list"));

    let out = run(&["bench", "--t-list", "16", "--rho-list", "1", "--workers-list", "1", "--trials", "2"]);
    assert_eq!(code(&out), 2, "too few bench trials");
    assert!(stderr(&out).contains("--trials"));
}

#[test]
fn data_errors_exit_3() {
    let dir = Scratch::new("data");
    let (train, valid, _) = toy_corpus(&dir);

    let out = run(&[
        "train",
        "--train",
        path_arg(&dir.path("missing.txt")),
        "--valid",
        path_arg(&valid),
        "--out",
        path_arg(&dir.path("out")),
    ]);
    assert_eq!(code(&out), 3);

    // model trained on the toy vocab, evaluated against a larger vocabulary
    let small_run = dir.path("small");
    let out = run(&[
        "train",
        "--train",
        path_arg(&train),
        "--valid",
        path_arg(&valid),
        "--out",
        path_arg(&small_run),
        "--epochs",
        "1",
        "--hidden",
        "4",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let big_vocab = dir.write("big.txt", "p q r s t u v w x y z\n");
    let vocab_path = dir.path("big-vocab.txt");
    let out = run(&[
        "build-vocab",
        "--text",
        path_arg(&big_vocab),
        "--out",
        path_arg(&vocab_path),
    ]);
    assert_eq!(code(&out), 0);
    let out = run(&[
        "eval",
        "--model",
        path_arg(&small_run.join("model.bin")),
        "--vocab",
        path_arg(&vocab_path),
        "--text",
        path_arg(&big_vocab),
    ]);
    assert_eq!(code(&out), 3, "vocabulary size mismatch: {}", stderr(&out));
}

#[test]
fn divergence_exits_4() {
    let dir = Scratch::new("diverge");
    let (train, valid, _) = toy_corpus(&dir);
    let out = run(&[
        "train",
        "--train",
        path_arg(&train),
        "--valid",
        path_arg(&valid),
        "--out",
        path_arg(&dir.path("out")),
        "--epochs",
        "1",
        "--hidden",
        "4",
        "--init-range",
        "1e307",
    ]);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("diverged"));
}

#[test]
fn sweep_rho_writes_the_table() {
    let dir = Scratch::new("sweep");
    let (train, valid, test) = toy_corpus(&dir);
    let csv = dir.path("sweep.csv");
    let out = run(&[
        "sweep-rho",
        "--train",
        path_arg(&train),
        "--valid",
        path_arg(&valid),
        "--test",
        path_arg(&test),
        "--rho-list",
        "1,2",
        "--epochs",
        "1",
        "--hidden",
        "4",
        "--out",
        path_arg(&csv),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("reference bptt: test ppl "));

    let table = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "rho,detach,test_ppl,seconds");
    assert_eq!(lines.len(), 5, "{table}");
    assert!(lines[1].starts_with("1,0,"));
    assert!(lines[2].starts_with("1,1,"));
    assert!(lines[3].starts_with("2,0,"));
    assert!(lines[4].starts_with("2,1,"));

    // sweep-rho picks gradient modes itself, so a grad-mode key is rejected
    let cfg = dir.write("sweep.cfg", "grad-mode = fpi\n");
    let out = run(&[
        "sweep-rho",
        "--train",
        path_arg(&train),
        "--valid",
        path_arg(&valid),
        "--test",
        path_arg(&test),
        "--rho-list",
        "1",
        "--config",
        path_arg(&cfg),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn bench_writes_the_table_and_gate_trips_on_fault() {
    let dir = Scratch::new("bench");
    let csv = dir.path("bench.csv");
    let base = [
        "bench",
        "--hidden",
        "6",
        "--vocab",
        "10",
        "--t-list",
        "8",
        "--rho-list",
        "1,2",
        "--workers-list",
        "1",
        "--trials",
        "3",
    ];

    let mut args = base.to_vec();
    args.extend_from_slice(&["--out", path_arg(&csv)]);
    let out = run(&args);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let table = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "T,rho,workers,median_seconds,speedup");
    assert_eq!(lines.len(), 4, "{table}");
    assert!(lines[1].starts_with("8,0,1,"), "sequential baseline row");

    let fault_csv = dir.path("fault.csv");
    let mut args = base.to_vec();
    args.extend_from_slice(&["--out", path_arg(&fault_csv), "--inject-fault"]);
    let out = run(&args);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("equivalence gate"));
    assert!(!fault_csv.exists(), "no table on gate failure");
}
