//! The `cxr` binary: exit codes, outputs and run-directory contracts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cxr_core::{ClassLabel, Scheme};
use cxr_pipeline::experiment::{validate_run, REPORT_FILE};
use cxr_pipeline::toy::write_toy_corpus;

fn cxr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cxr"))
        .args(args)
        .env_remove("CXR_DEVICE")
        .env("RUST_LOG", "warn")
        .output()
        .expect("cxr runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn three_class_corpus(root: &Path, per_class: usize) {
    let counts: Vec<_> = Scheme::ThreeClass
        .classes()
        .iter()
        .map(|&c| (c, per_class))
        .collect();
    write_toy_corpus(root, &counts, 8, 32).unwrap();
}

#[test]
fn catalog_of_missing_root_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = cxr(&[
        "catalog",
        "--root",
        path(&dir.path().join("nope")),
        "--out",
        path(&dir.path().join("m.tsv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("m.tsv").exists());
}

#[test]
fn catalog_of_empty_root_writes_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("corpus");
    fs::create_dir(&root).unwrap();
    let manifest = dir.path().join("out/manifest.tsv");
    let out = cxr(&["catalog", "--root", path(&root), "--out", path(&manifest)]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("no records"));
    assert!(manifest.is_file());
    assert!(dir.path().join("out/manifest.integrity.tsv").is_file());
}

#[test]
fn catalog_then_split_writes_plan_and_count_table() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("corpus");
    three_class_corpus(&root, 10);
    let manifest = dir.path().join("manifest.tsv");
    let out = cxr(&["catalog", "--root", path(&root), "--out", path(&manifest)]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout(&out).contains("30 records, 0 integrity findings"));

    let plan = dir.path().join("plan.json");
    let args = [
        "split",
        "--manifest",
        path(&manifest),
        "--k",
        "5",
        "--out",
        path(&plan),
    ];
    let first = cxr(&args);
    assert_eq!(first.status.code(), Some(0));
    let plan_bytes = fs::read(&plan).unwrap();
    let table = fs::read_to_string(dir.path().join("plan.counts.txt")).unwrap();
    assert_eq!(table, stdout(&first));
    // 10 per class, 5 folds: 2 test, round(0.8) = 1 validation, 7 train.
    assert!(table.contains("COVID"), "{table}");

    // Same inputs, same plan bytes.
    assert_eq!(cxr(&args).status.code(), Some(0));
    assert_eq!(fs::read(&plan).unwrap(), plan_bytes);

    let two = cxr(&[
        "split",
        "--manifest",
        path(&manifest),
        "--scheme",
        "two-class",
        "--k",
        "5",
        "--out",
        path(&dir.path().join("two.json")),
    ]);
    assert_eq!(two.status.code(), Some(0));
    let two_plan = fs::read_to_string(dir.path().join("two.json")).unwrap();
    assert!(!two_plan.contains("VIRAL_PNEUMONIA"));
}

#[test]
fn split_with_class_smaller_than_k_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("corpus");
    write_toy_corpus(
        &root,
        &[
            (ClassLabel::Covid19, 3),
            (ClassLabel::Normal, 8),
            (ClassLabel::ViralPneumonia, 8),
        ],
        1,
        32,
    )
    .unwrap();
    let manifest = dir.path().join("m.tsv");
    assert_eq!(
        cxr(&["catalog", "--root", path(&root), "--out", path(&manifest)])
            .status
            .code(),
        Some(0)
    );
    let out = cxr(&[
        "split",
        "--manifest",
        path(&manifest),
        "--k",
        "5",
        "--out",
        path(&dir.path().join("p.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fewer than k"));
}

#[test]
fn unsupported_device_is_refused() {
    let out = Command::new(env!("CARGO_BIN_EXE_cxr"))
        .args(["report", "--run-dir", "/nonexistent"])
        .env("CXR_DEVICE", "cuda")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("CXR_DEVICE"));
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let config = dir.join("run.toml");
    fs::write(
        &config,
        format!(
            r##"corpus_root = "corpus"
output_dir = "runs"
scheme = "TWO_CLASS"
augment = false
backbones = ["squeezenet"]
k = 2
weights = "random_init"
{extra}
[training]
epochs = 1
batch_size = 8

[explain]
layers = ["#1", "features.3.squeeze"]
"##
        ),
    )
    .unwrap();
    config
}

#[test]
fn dry_run_plans_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    three_class_corpus(&dir.path().join("corpus"), 6);
    let config = write_config(dir.path(), "");
    let out = cxr(&["run", "--config", path(&config), "--dry-run"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout(&out).contains("nothing written"));
    assert!(!dir.path().join("runs").exists());
}

#[test]
fn invalid_config_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    three_class_corpus(&dir.path().join("corpus"), 6);
    let config = write_config(dir.path(), "learning_rate_typo = 3");
    let out = cxr(&["run", "--config", path(&config)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn two_class_run_excludes_viral_images_and_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    three_class_corpus(&dir.path().join("corpus"), 12);
    let config = write_config(dir.path(), "");
    let out = cxr(&["run", "--config", path(&config)]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let runs: Vec<_> = fs::read_dir(dir.path().join("runs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(runs.len(), 1);
    let run = &runs[0];
    assert!(run
        .file_name()
        .unwrap()
        .to_str()
        .unwrap()
        .ends_with("-twoclass-noaug"));
    assert!(!run.join(".lock").exists());

    let report = validate_run(run).unwrap();
    assert_eq!(report.manifest.ingested, 36);
    assert_eq!(report.manifest.records, 24);
    let eval = report.backbones[0].evaluation.as_ref().unwrap();
    assert_eq!(eval.confusion.num_classes(), 2);
    assert_eq!(eval.confusion.total(), 24);

    let shown = cxr(&["report", "--run-dir", path(run)]);
    assert_eq!(shown.status.code(), Some(0));
    let text = stdout(&shown);
    assert!(text.contains("Two-class classification, without image augmentation"));
    assert!(text.contains("SqueezeNet"));
    assert!(run.join("report/tables.txt").is_file());
    assert!(run.join("report/roc_covid_19.png").is_file());

    // Any byte change in a listed artifact makes the run invalid.
    let victim = run.join(&report.artifacts[0].path);
    let mut bytes = fs::read(&victim).unwrap();
    bytes.push(b'\n');
    fs::write(&victim, bytes).unwrap();
    let tampered = cxr(&["report", "--run-dir", path(run)]);
    assert_eq!(tampered.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&tampered.stderr).contains("checksum"));
    assert!(run.join(REPORT_FILE).is_file());
}
