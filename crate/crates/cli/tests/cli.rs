use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn rnnt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rnnt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

const TINY: &str = r#"{
  "model": {
    "conv_blocks": [
      {"out_channels": 3, "kernel": 3, "pool": [2, 2]},
      {"out_channels": 4, "kernel": 3, "pool": [16, 1]}
    ],
    "recurrent_layers_visual": 1,
    "recurrent_layers_linguistic": 1,
    "hidden_size": 8,
    "embed_size": 6,
    "encoded_size": 8,
    "vocab_size": 5,
    "input_height": 32
  },
  "train": {"batch_size": 4, "epochs": 1, "base_lr": 0.001, "seed": 3, "log_wall_time": false},
  "synth": {"charset_size": 5, "max_length": 4, "num_samples": 20}
}"#;

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

/// Synthesizes with the tiny config and trains one epoch; returns (data, run).
fn synth_and_train(root: &Path, tag: &str) -> (PathBuf, PathBuf) {
    let cfg = write_config(root, "tiny.json", TINY);
    let data = root.join(format!("data_{tag}"));
    let run = root.join(format!("run_{tag}"));
    let o = rnnt(&["--config", p(&cfg), "--out", p(&data), "synth"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = rnnt(&["--config", p(&cfg), "--out", p(&run), "train", "--data", p(&data)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("best epoch 1"), "{}", stdout(&o));
    (data, run)
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((
                    path.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_writes_requested_count() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"synth": {"num_samples": 100}}"#);
    let out = tmp.path().join("d");
    let o = rnnt(&["--config", p(&cfg), "--out", p(&out), "--seed", "5", "synth"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let pgms = std::fs::read_dir(out.join("images")).unwrap().count();
    assert_eq!(pgms, 100);
    let rows: usize = ["train.tsv", "val.tsv"]
        .iter()
        .map(|f| std::fs::read_to_string(out.join(f)).unwrap().lines().count())
        .sum();
    assert_eq!(rows, 100);
    assert_eq!(
        std::fs::read_to_string(out.join("charset.txt"))
            .unwrap()
            .lines()
            .count(),
        12
    );
}

#[test]
fn synth_is_byte_identical_across_runs_and_workers() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"synth": {"num_samples": 30}}"#);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(code(&rnnt(&["--config", p(&cfg), "--out", p(&a), "synth"])), 0);
    assert_eq!(
        code(&rnnt(&["--config", p(&cfg), "--out", p(&b), "--workers", "3", "synth"])),
        0
    );
    assert_eq!(tree(&a), tree(&b));
}

#[test]
fn train_eval_decode_round_trip() {
    let tmp = TempDir::new().unwrap();
    let (data, run) = synth_and_train(tmp.path(), "x");
    for f in ["best.ckpt", "epoch_001.ckpt", "metrics.tsv", "config.json"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let metrics = std::fs::read_to_string(run.join("metrics.tsv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);

    let ck = run.join("best.ckpt");
    let o = rnnt(&[
        "eval",
        "--checkpoint",
        p(&ck),
        "--manifest",
        p(&data.join("val.tsv")),
        "--charset",
        p(&data.join("charset.txt")),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let line = stdout(&o);
    let pct: f64 = line
        .trim()
        .strip_prefix("CER: ")
        .and_then(|s| s.strip_suffix('%'))
        .expect("CER line")
        .parse()
        .unwrap();
    assert!(pct >= 0.0);

    let imgs = [data.join("images/000000.pgm"), data.join("images/000001.pgm")];
    let o = rnnt(&["decode", "--checkpoint", p(&ck), p(&imgs[0]), p(&imgs[1])]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 2);
}

#[test]
fn eval_on_own_training_config_matches_model_section() {
    let tmp = TempDir::new().unwrap();
    let (data, run) = synth_and_train(tmp.path(), "m");
    let resolved = run.join("config.json");
    let o = rnnt(&[
        "--config",
        p(&resolved),
        "eval",
        "--checkpoint",
        p(&run.join("best.ckpt")),
        "--manifest",
        p(&data.join("val.tsv")),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let edited = TINY.replace("\"hidden_size\": 8", "\"hidden_size\": 9");
    let other = write_config(tmp.path(), "other.json", &edited);
    let o = rnnt(&[
        "--config",
        p(&other),
        "eval",
        "--checkpoint",
        p(&run.join("best.ckpt")),
        "--manifest",
        p(&data.join("val.tsv")),
    ]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("model.hidden_size: 8 vs 9"), "{}", stderr(&o));

    let charset = write_config(tmp.path(), "cs.txt", "a\nb\nc\nd\nz\n");
    let o = rnnt(&[
        "eval",
        "--checkpoint",
        p(&run.join("best.ckpt")),
        "--manifest",
        p(&data.join("val.tsv")),
        "--charset",
        p(&charset),
    ]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("label 5"), "{}", stderr(&o));
}

#[test]
fn training_is_reproducible_byte_for_byte() {
    let tmp = TempDir::new().unwrap();
    let (_, a) = synth_and_train(tmp.path(), "a");
    let (_, b) = synth_and_train(tmp.path(), "b");
    for f in ["best.ckpt", "epoch_001.ckpt", "metrics.tsv"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn verify_passes_and_mutation_fails() {
    let o = rnnt(&["verify", "--cases", "10"]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("PASS")).count(), 6);

    let o = rnnt(&["verify", "--cases", "10", "--mutate-gradient"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).lines().any(|l| l.starts_with("FAIL")));
}

#[test]
fn missing_input_exits_2() {
    let tmp = TempDir::new().unwrap();
    let o = rnnt(&["decode", "--checkpoint", p(&tmp.path().join("none.ckpt")), "x.pgm"]);
    assert_eq!(code(&o), 2);
    let o = rnnt(&[
        "--out",
        p(tmp.path()),
        "train",
        "--data",
        p(&tmp.path().join("nowhere")),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn bad_config_exits_3() {
    let tmp = TempDir::new().unwrap();
    let unknown = write_config(tmp.path(), "u.json", r#"{"trian": {}}"#);
    assert_eq!(code(&rnnt(&["--config", p(&unknown), "verify"])), 3);
    let invalid = write_config(tmp.path(), "i.json", r#"{"train": {"batch_size": 0}}"#);
    assert_eq!(code(&rnnt(&["--config", p(&invalid), "verify"])), 3);
    let missing = tmp.path().join("missing.json");
    assert_eq!(code(&rnnt(&["--config", p(&missing), "verify"])), 2);
}

#[test]
fn usage_errors_exit_4() {
    assert_eq!(code(&rnnt(&[])), 4);
    assert_eq!(code(&rnnt(&["frobnicate"])), 4);
    assert_eq!(code(&rnnt(&["synth"])), 4);
    assert_eq!(code(&rnnt(&["--workers", "0", "verify"])), 4);
    assert_eq!(
        code(&rnnt(&[
            "decode",
            "--checkpoint",
            "x",
            "--direction",
            "diagonal",
            "a.pgm"
        ])),
        4
    );
    assert_eq!(code(&rnnt(&["--help"])), 0);
}

#[test]
fn presets_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets");
    for name in ["s1", "s2", "s3"] {
        let preset = dir.join(format!("{name}.json"));
        let o = rnnt(&["--config", p(&preset), "verify", "--cases", "1"]);
        assert_eq!(code(&o), 0, "{name}: {}", stderr(&o));
    }
}
