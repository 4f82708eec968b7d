//! End-to-end behaviour of the `mmtlab` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(f: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy").join(f)
}

fn mmtlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmtlab"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let text = format!(
        "seed = 3\nwork_dir = \"{}\"\n\n[data]\ntrain_src = \"{}\"\ntrain_tgt = \"{}\"\ndev_src = \"{}\"\ndev_tgt = \"{}\"\n{body}",
        dir.join("work").display(),
        data("train.en").display(),
        data("train.de").display(),
        data("dev.en").display(),
        data("dev.de").display(),
    );
    let path = dir.join("exp.toml");
    std::fs::write(&path, text).unwrap();
    path
}

const SMALL: &str = "
[bpe]
merges = 100

[model]
d_model = 16
n_heads = 2
d_ff = 32
max_len = 64

[train]
max_steps = 20
seeds = [1, 2]

[train.adam]
base_lr = 1.0
warmup_steps = 20

[decode]
max_len = 30
";

#[test]
fn invalid_config_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[model]\nd_model = 30\nn_heads = 4\n");
    let out = mmtlab(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: config: "), "{err}");
    assert!(!dir.path().join("work").exists());
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[train]\nmax_stpes = 5\n");
    let out = mmtlab(&["preprocess", "-c", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("max_stpes"));
}

#[test]
fn missing_visual_input_is_reported_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[model]\nfusion = \"img_w\"\nvisual_dim = 8\n");
    let out = mmtlab(&["run", "-c", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error: config: "), "{}", stderr(&out));
}

#[test]
fn eval_prints_both_scores() {
    let out = mmtlab(&["eval", "--hyp", data("dev.de").to_str().unwrap(), "--ref", data("dev.de").to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "BLEU = 100.00\nchrF1 = 100.00\n");
}

#[test]
fn eval_rejects_length_mismatch() {
    let out = mmtlab(&["eval", "--hyp", data("train.de").to_str().unwrap(), "--ref", data("dev.de").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error: input: "));
}

#[test]
fn stages_ensemble_and_single_file_segmentation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let c = cfg.to_str().unwrap();
    for stage in ["preprocess", "filter", "bpe-learn", "bpe-apply", "train"] {
        let out = mmtlab(&[stage, "-c", c]);
        assert!(out.status.success(), "{stage}: {}", stderr(&out));
    }
    let work = dir.path().join("work");
    for f in ["model.seed1.ckpt", "model.seed2.ckpt", "train_log.seed1.jsonl", "bpe.model", "filter_report.txt"] {
        assert!(work.join(f).is_file(), "{f} missing");
    }
    let log = std::fs::read_to_string(work.join("train_log.seed2.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 20);
    assert!(log.lines().all(|l| l.starts_with("{\"step\":")));

    let (a, b) = (work.join("model.seed1.ckpt"), work.join("model.seed2.ckpt"));
    let hyp = dir.path().join("ens.txt");
    let out = mmtlab(&[
        "translate",
        "-c",
        c,
        "--ensemble",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        "--input",
        work.join("bpe.dev.src").to_str().unwrap(),
        "--output",
        hyp.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let lines = std::fs::read_to_string(&hyp).unwrap();
    assert_eq!(lines.lines().count(), 100);
    assert!(!lines.contains("@@"));

    let seg = dir.path().join("seg.txt");
    let out = mmtlab(&[
        "bpe-apply",
        "-c",
        c,
        "--model",
        work.join("bpe.model").to_str().unwrap(),
        "--input",
        data("hyphen.en").to_str().unwrap(),
        "--output",
        seg.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let joined: Vec<String> = std::fs::read_to_string(&seg)
        .unwrap()
        .lines()
        .map(|l| l.replace("@@ ", ""))
        .collect();
    let original: Vec<String> = std::fs::read_to_string(data("hyphen.en")).unwrap().lines().map(String::from).collect();
    assert_eq!(joined, original);
}

#[test]
fn blind_translation_needs_a_visual_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(
            "train_features = \"{}\"\ntrain_manifest = \"{}\"\n{}",
            data("train.feat").display(),
            data("train.manifest").display(),
            SMALL.replace("max_len = 64", "max_len = 64\nfusion = \"img_w\"\nvisual_dim = 8")
        ),
    );
    let c = cfg.to_str().unwrap();
    // No dev features: `run` falls back to blind translation.
    let out = mmtlab(&["run", "-c", c]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("work/hyp.dev.blind.txt").is_file());
    let out = mmtlab(&["translate", "-c", c]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error: visual: "), "{}", stderr(&out));
}
