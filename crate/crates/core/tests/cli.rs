use std::path::Path;
use std::process::{Command, Output};

const TINY: [&str; 11] = [
    "image_size=32",
    "crop_size=16",
    "base_width=4",
    "embed_dim=4",
    "depth=2",
    "train_scenes=16",
    "eval_scenes=4",
    "epochs=1",
    "batch_labeled=2",
    "batch_unlabeled=2",
    "lr=0.01",
];

fn fuzzyseg(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fuzzyseg"))
        .args(args)
        .env("FUZZYSEG_OUTPUT_ROOT", root)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn with_tiny<'a>(mut args: Vec<&'a str>) -> Vec<&'a str> {
    for kv in TINY {
        args.push("--set");
        args.push(kv);
    }
    args
}

#[test]
fn train_eval_report_roundtrip() {
    let root = tempfile::tempdir().unwrap();
    let out = fuzzyseg(&with_tiny(vec!["train"]), root.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = root.path().join("train-seed0");
    for f in ["loss.csv", "eval.csv", "summary.txt", "config.txt", "teacher/manifest.txt", "scene00_panel.ppm"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let csv = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    assert!(csv.starts_with("iter,L_s,L_u,L_c,L_total,N_valid\n"));

    let teacher = run.join("teacher");
    let out = fuzzyseg(&["eval", teacher.to_str().unwrap()], root.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("mIoU"));
    assert!(teacher.join("eval.csv").exists());

    let out = fuzzyseg(&["report", run.to_str().unwrap()], root.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let a = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    let b = std::fs::read_to_string(run.join("report/loss.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn config_errors_exit_2() {
    let root = tempfile::tempdir().unwrap();
    let out = fuzzyseg(&["train", "--set", "no_such_key=1"], root.path());
    assert_eq!(out.status.code(), Some(2));
    let out = fuzzyseg(&["train", "--set", "entropy_threshold=0"], root.path());
    assert_eq!(out.status.code(), Some(2));
    let out = fuzzyseg(&["ablate", "--variants", "bogus"], root.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergence_exits_3_and_dumps() {
    let root = tempfile::tempdir().unwrap();
    let mut args = with_tiny(vec!["train", "--out"]);
    let out_dir = root.path().join("nan");
    args.insert(2, out_dir.to_str().unwrap());
    args.extend(["--set", "lr=1e200"]);
    let out = fuzzyseg(&args, root.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let dumped = std::fs::read_dir(&out_dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .any(|e| e.file_name().to_string_lossy().starts_with("nan_iter"));
    assert!(dumped);
}

#[test]
fn ablate_writes_table() {
    let root = tempfile::tempdir().unwrap();
    let mut args = with_tiny(vec!["ablate", "--seeds", "3", "--variants", "baseline,full"]);
    args.extend(["--set", "epochs=1"]);
    let out = fuzzyseg(&args, root.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(root.path().join("ablation/ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("baseline,3,") && lines[2].starts_with("full,3,"));
}

#[test]
fn verify_exit_code_matches_lines() {
    let root = tempfile::tempdir().unwrap();
    let out = fuzzyseg(&["verify"], root.path());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("[PASS]") || l.starts_with("[FAIL]")).count(), 7);
    let expected = if stdout.contains("[FAIL]") { 4 } else { 0 };
    assert_eq!(out.status.code(), Some(expected));
}
