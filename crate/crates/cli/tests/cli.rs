//! Drives the `fishrec` binary through a full generate → train → evaluate run.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fishrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fishrec"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = fishrec(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let manifest = corpus.join("manifest.csv");
    let model = dir.path().join("model.json");

    let out = ok(&[
        "gen-synth",
        "--out",
        s(&corpus),
        "--seed",
        "3",
        "--per-family-train",
        "6",
        "--per-family-test",
        "3",
    ]);
    assert!(out.contains("63 images (42 train, 21 test)"), "{out}");

    let feats = dir.path().join("features.csv");
    ok(&["extract", "--manifest", s(&manifest), "--out", s(&feats)]);
    let csv = fs::read_to_string(&feats).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 64);
    assert_eq!(lines[0].split(',').count(), 50);
    assert!(lines[0].ends_with(",f46"));

    // Training flags come from the config file; the command line overrides one.
    let cfg = dir.path().join("train.cfg");
    fs::write(
        &cfg,
        "# training\nhidden = 12\nmax_epochs = 300\nseed = 99\n",
    )
    .unwrap();
    let out = ok(&[
        "--config",
        s(&cfg),
        "train",
        "--manifest",
        s(&manifest),
        "--out",
        s(&model),
        "--seed",
        "4",
    ]);
    assert!(out.contains("trained on 42 rows"), "{out}");
    let text = fs::read_to_string(&model).unwrap();
    assert!(text.contains("\"layer_sizes\""));
    assert!(text.contains("12"));

    // Same inputs and flags give the same model bytes.
    let again = dir.path().join("again.json");
    ok(&[
        "train",
        "--manifest",
        s(&manifest),
        "--out",
        s(&again),
        "--hidden",
        "12",
        "--max-epochs",
        "300",
        "--seed",
        "4",
    ]);
    assert_eq!(fs::read(&model).unwrap(), fs::read(&again).unwrap());

    let report = dir.path().join("report.txt");
    let out = ok(&[
        "evaluate",
        "--model",
        s(&model),
        "--manifest",
        s(&manifest),
        "--report",
        s(&report),
    ]);
    assert!(out.starts_with("accuracy: "), "{out}");
    assert!(out.contains("poison recall:"));
    assert!(out.contains("confusion matrix"));
    assert_eq!(fs::read_to_string(&report).unwrap(), out);

    let image = corpus.join("Poison_fish_test_0.ppm");
    let out = ok(&["classify", "--model", s(&model), "--image", s(&image)]);
    assert!(out.contains("poison: "), "{out}");
    assert!(out.contains("cluster: "));
    assert_eq!(out.lines().filter(|l| l.starts_with("  ")).count(), 7);
}

#[test]
fn failures_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();

    let out = fishrec(&[
        "classify",
        "--model",
        s(&dir.path().join("missing.json")),
        "--image",
        "x.ppm",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));

    let out = fishrec(&["train", "--manifest", "m.csv"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing --out"));

    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "seed = many\n").unwrap();
    let out = fishrec(&[
        "--config",
        s(&bad),
        "gen-synth",
        "--out",
        s(&dir.path().join("c")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad value for seed"));

    let model = dir.path().join("v.json");
    fs::write(&model, "{\"version\": 999}").unwrap();
    let out = fishrec(&["classify", "--model", s(&model), "--image", "x.ppm"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("999"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = fishrec(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}
