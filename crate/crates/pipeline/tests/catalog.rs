use std::fs;

use cxr_core::ClassLabel;
use cxr_pipeline::backbone::BackboneName;
use cxr_pipeline::catalog::{
    balance_subsample, ingest_directory, load_model_input, sha256_file, verify_manifest,
    ClassLayout, FindingCode, Manifest,
};
use cxr_pipeline::toy::write_toy_corpus;

fn corpus(counts: &[(ClassLabel, usize)]) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_toy_corpus(dir.path(), counts, 3, 48).unwrap();
    dir
}

const SMALL: [(ClassLabel, usize); 3] = [
    (ClassLabel::Covid19, 4),
    (ClassLabel::Normal, 6),
    (ClassLabel::ViralPneumonia, 5),
];

#[test]
fn ingest_counts_classes_and_orders_by_path() {
    let dir = corpus(&SMALL);
    let layout = ClassLayout::detect(dir.path()).unwrap();
    let ingest = ingest_directory(dir.path(), &layout).unwrap();
    let counts = ingest.manifest.class_counts();
    assert_eq!(counts[&ClassLabel::Covid19], 4);
    assert_eq!(counts[&ClassLabel::Normal], 6);
    assert_eq!(counts[&ClassLabel::ViralPneumonia], 5);
    assert!(ingest.report.is_empty(), "{}", ingest.report.to_text());

    let paths: Vec<_> = ingest.manifest.records.iter().map(|r| &r.path).collect();
    let mut sorted = paths.clone();
    sorted.sort();
    assert_eq!(paths, sorted);
    for r in &ingest.manifest.records {
        assert_eq!(r.checksum, sha256_file(&r.path).unwrap());
        assert_eq!((r.width, r.height), (48, 48));
    }

    // A second ingest of the same tree yields the same records.
    let again = ingest_directory(dir.path(), &layout).unwrap();
    assert_eq!(again.manifest.records, ingest.manifest.records);
}

#[test]
fn duplicates_junk_and_broken_files_are_reported_not_kept() {
    let dir = corpus(&SMALL);
    let covid = dir.path().join("covid");
    fs::copy(covid.join("covid_0000.png"), covid.join("zz_copy.png")).unwrap();
    fs::write(covid.join("notes.txt"), "not an image").unwrap();
    fs::write(covid.join("broken.png"), b"\x89PNG truncated").unwrap();
    let layout = ClassLayout::detect(dir.path()).unwrap();
    let ingest = ingest_directory(dir.path(), &layout).unwrap();
    assert_eq!(ingest.manifest.class_counts()[&ClassLabel::Covid19], 4);
    assert_eq!(ingest.report.count(FindingCode::DuplicateChecksum), 1);
    assert_eq!(ingest.report.count(FindingCode::NonImageSkipped), 1);
    assert_eq!(ingest.report.count(FindingCode::Undecodable), 1);
    // The first path in sorted order is the one kept.
    assert!(ingest
        .manifest
        .records
        .iter()
        .any(|r| r.path.ends_with("covid/covid_0000.png")));
}

#[test]
fn empty_class_directory_gives_zero_count_and_warning() {
    let dir = corpus(&[(ClassLabel::Covid19, 3), (ClassLabel::Normal, 3)]);
    fs::create_dir(dir.path().join("viral")).unwrap();
    let layout = ClassLayout::detect(dir.path()).unwrap();
    let ingest = ingest_directory(dir.path(), &layout).unwrap();
    assert_eq!(
        ingest.manifest.class_counts()[&ClassLabel::ViralPneumonia],
        0
    );
    assert_eq!(ingest.report.count(FindingCode::EmptyClass), 1);
}

#[test]
fn verification_finds_deleted_and_rewritten_files() {
    let dir = corpus(&SMALL);
    let layout = ClassLayout::detect(dir.path()).unwrap();
    let manifest = ingest_directory(dir.path(), &layout).unwrap().manifest;
    assert!(verify_manifest(&manifest).is_empty());

    fs::remove_file(&manifest.records[0].path).unwrap();
    let report = verify_manifest(&manifest);
    assert_eq!(report.count(FindingCode::MissingFile), 1);
    assert_eq!(report.findings.len(), 1);

    // Overwrite another record with a different valid image.
    let victim = &manifest.records[1];
    fs::copy(&manifest.records[2].path, &victim.path).unwrap();
    let report = verify_manifest(&manifest);
    assert_eq!(report.count(FindingCode::ChecksumDrift), 1);
    let drift = report
        .findings
        .iter()
        .find(|f| f.code == FindingCode::ChecksumDrift)
        .unwrap();
    assert_eq!(drift.record_id, victim.record_id);
    assert_ne!(sha256_file(&victim.path).unwrap(), victim.checksum);
}

#[test]
fn manifest_survives_a_save_and_load() {
    let dir = corpus(&SMALL);
    let layout = ClassLayout::detect(dir.path()).unwrap();
    let manifest = ingest_directory(dir.path(), &layout).unwrap().manifest;
    let path = dir.path().join("manifest.tsv");
    manifest.save(&path).unwrap();
    let loaded = Manifest::load(&path).unwrap();
    assert_eq!(loaded.records, manifest.records);
    assert_eq!(loaded.to_tsv(), manifest.to_tsv());
}

#[test]
fn balanced_subsample_is_exact_and_seeded() {
    let dir = corpus(&SMALL);
    let layout = ClassLayout::detect(dir.path()).unwrap();
    let manifest = ingest_directory(dir.path(), &layout).unwrap().manifest;
    let a = balance_subsample(&manifest, 4, 9).unwrap();
    assert!(a.class_counts().values().all(|&n| n == 4));
    assert_eq!(
        a.to_tsv(),
        balance_subsample(&manifest, 4, 9).unwrap().to_tsv()
    );
    // The smallest class has no choice to make.
    let covid = |m: &Manifest| {
        m.records
            .iter()
            .filter(|r| r.label == ClassLabel::Covid19)
            .map(|r| r.record_id.clone())
            .collect::<Vec<_>>()
    };
    assert_eq!(
        covid(&a),
        covid(&balance_subsample(&manifest, 4, 10).unwrap())
    );
    assert!(balance_subsample(&manifest, 5, 9).is_err());
}

#[test]
fn model_inputs_have_backbone_geometry_and_normalisation() {
    let dir = corpus(&[(ClassLabel::Normal, 1), (ClassLabel::Covid19, 1)]);
    let layout = ClassLayout::detect(dir.path()).unwrap();
    let manifest = ingest_directory(dir.path(), &layout).unwrap().manifest;
    let record = &manifest.records[0];
    for name in [
        BackboneName::Resnet18,
        BackboneName::Squeezenet,
        BackboneName::Inceptionv3,
    ] {
        let spec = name.input_spec();
        let input = load_model_input(record, &spec).unwrap();
        let side = spec.input_side as usize;
        assert_eq!(input.shape(), (3, side, side));
        // Grey input: each channel is the same raster under its own mean/std.
        let c0 = input.channel(0);
        for c in 1..3 {
            for (a, b) in c0.iter().zip(input.channel(c)) {
                let grey = a * spec.std[0] + spec.mean[0];
                assert!((grey - (b * spec.std[c] + spec.mean[c])).abs() < 1e-5);
            }
        }
        assert!(input.data.iter().all(|v| v.is_finite()));
    }
}
