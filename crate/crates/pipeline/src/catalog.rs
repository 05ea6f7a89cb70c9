//! Checksummed manifests of labelled chest radiographs and the conversion
//! of a record into a backbone-ready input array.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use cxr_core::{seed, ClassLabel, Raster, Sample, Scheme};
use image::imageops::FilterType;
use image::GrayImage;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::{BackboneName, BackboneSpec};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_HEADER: &str = "record_id\tpath\tlabel\tchecksum\twidth\theight\tsource_tag";
const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("cannot read corpus root {path}: {source}")]
    UnreadableRoot { path: PathBuf, source: io::Error },
    #[error("class directory {path} does not exist")]
    MissingClassDir { path: PathBuf },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("manifest line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("class {class} has {population} records, cannot select {requested}")]
    ClassTooSmall {
        class: ClassLabel,
        population: usize,
        requested: usize,
    },
    #[error("record {record_id}: cannot decode {path}: {detail}")]
    Decode {
        record_id: String,
        path: PathBuf,
        detail: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CatalogError + '_ {
    move |source| CatalogError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub record_id: String,
    pub path: PathBuf,
    pub label: ClassLabel,
    /// Lower-case hex SHA-256 of the file bytes.
    pub checksum: String,
    pub width: u32,
    pub height: u32,
    /// Provenance: the class directory (and any nesting) the file came from.
    pub source_tag: String,
}

impl ImageRecord {
    pub fn sample(&self) -> Sample {
        Sample::new(self.record_id.clone(), self.label)
    }
}

/// Ordered, checksummed list of records. Rows are kept sorted by path so
/// identical corpora give identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub records: Vec<ImageRecord>,
    pub created_at: String,
    pub schema_version: u32,
}

impl Manifest {
    pub fn new(mut records: Vec<ImageRecord>) -> Self {
        records.sort_by(|a, b| a.path.cmp(&b.path));
        Manifest {
            records,
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            schema_version: SCHEMA_VERSION,
        }
    }

    /// Per-label totals; every label appears, possibly with zero.
    pub fn class_counts(&self) -> BTreeMap<ClassLabel, usize> {
        let mut counts: BTreeMap<ClassLabel, usize> =
            ClassLabel::ALL.iter().map(|&c| (c, 0)).collect();
        for r in &self.records {
            *counts.entry(r.label).or_default() += 1;
        }
        counts
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn samples(&self) -> Vec<Sample> {
        self.records.iter().map(ImageRecord::sample).collect()
    }

    pub fn get(&self, record_id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.record_id == record_id)
    }

    pub fn index(&self) -> HashMap<&str, &ImageRecord> {
        self.records
            .iter()
            .map(|r| (r.record_id.as_str(), r))
            .collect()
    }

    /// Keeps only the classes of `scheme`.
    pub fn restrict(&self, scheme: Scheme) -> Manifest {
        let keep = scheme.classes();
        Manifest {
            records: self
                .records
                .iter()
                .filter(|r| keep.contains(&r.label))
                .cloned()
                .collect(),
            created_at: self.created_at.clone(),
            schema_version: self.schema_version,
        }
    }

    /// Tab-separated text with a header row; one record per line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(MANIFEST_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                r.record_id,
                r.path.display(),
                r.label.as_str(),
                r.checksum,
                r.width,
                r.height,
                r.source_tag
            ));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Manifest, CatalogError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == MANIFEST_HEADER => {}
            _ => {
                return Err(CatalogError::Parse {
                    line: 1,
                    detail: format!("expected header {MANIFEST_HEADER:?}"),
                })
            }
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let parse = |detail: String| CatalogError::Parse {
                line: i + 1,
                detail,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 7 {
                return Err(parse(format!("expected 7 fields, found {}", fields.len())));
            }
            records.push(ImageRecord {
                record_id: fields[0].to_string(),
                path: PathBuf::from(fields[1]),
                label: fields[2].parse().map_err(|e| parse(format!("{e}")))?,
                checksum: fields[3].to_string(),
                width: fields[4]
                    .parse()
                    .map_err(|e| parse(format!("width: {e}")))?,
                height: fields[5]
                    .parse()
                    .map_err(|e| parse(format!("height: {e}")))?,
                source_tag: fields[6].to_string(),
            });
        }
        Ok(Manifest::new(records))
    }

    pub fn save(&self, path: &Path) -> Result<(), CatalogError> {
        fs::write(path, self.to_tsv()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Manifest, CatalogError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Manifest::from_tsv(&text)
    }
}

/// Mapping from class subdirectory name to label.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassLayout(pub BTreeMap<String, ClassLabel>);

impl ClassLayout {
    /// Recognises the usual folder names of public COVID radiography
    /// collections (`covid`, `COVID-19`, `normal`, `viral`, `Viral Pneumonia`, ...).
    pub fn label_for_dir(name: &str) -> Option<ClassLabel> {
        let key: String = name
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        match key.as_str() {
            "covid" | "covid19" | "covid2019" => Some(ClassLabel::Covid19),
            "normal" => Some(ClassLabel::Normal),
            "viral" | "viralpneumonia" | "pneumonia" => Some(ClassLabel::ViralPneumonia),
            _ => None,
        }
    }

    /// Maps every recognised immediate subdirectory of `root`.
    pub fn detect(root: &Path) -> Result<ClassLayout, CatalogError> {
        let entries = fs::read_dir(root).map_err(|source| CatalogError::UnreadableRoot {
            path: root.to_path_buf(),
            source,
        })?;
        let mut layout = BTreeMap::new();
        for entry in entries {
            let entry = entry.map_err(io_err(root))?;
            if !entry.file_type().map_err(io_err(root))?.is_dir() {
                continue;
            }
            let name = entry.file_name().to_string_lossy().into_owned();
            match Self::label_for_dir(&name) {
                Some(label) => {
                    layout.insert(name, label);
                }
                None => log::warn!(
                    "ignoring unrecognised directory {name:?} under {}",
                    root.display()
                ),
            }
        }
        Ok(ClassLayout(layout))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Warning => "WARNING",
            Severity::Error => "ERROR",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingCode {
    MissingFile,
    ChecksumDrift,
    Undecodable,
    DimensionDrift,
    DuplicateChecksum,
    DuplicateRecordId,
    NonImageSkipped,
    EmptyClass,
}

impl fmt::Display for FindingCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FindingCode::MissingFile => "missing_file",
            FindingCode::ChecksumDrift => "checksum_drift",
            FindingCode::Undecodable => "undecodable",
            FindingCode::DimensionDrift => "dimension_drift",
            FindingCode::DuplicateChecksum => "duplicate_checksum",
            FindingCode::DuplicateRecordId => "duplicate_record_id",
            FindingCode::NonImageSkipped => "non_image_skipped",
            FindingCode::EmptyClass => "empty_class",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    /// `-` when the finding concerns a file that never became a record.
    pub record_id: String,
    pub code: FindingCode,
    pub detail: String,
}

/// Problems found while ingesting or re-verifying a corpus, one per line.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IntegrityReport {
    pub findings: Vec<Finding>,
}

impl IntegrityReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn count(&self, code: FindingCode) -> usize {
        self.findings.iter().filter(|f| f.code == code).count()
    }

    fn push(&mut self, severity: Severity, record_id: &str, code: FindingCode, detail: String) {
        self.findings.push(Finding {
            severity,
            record_id: record_id.to_string(),
            code,
            detail: detail.replace(['\t', '\n'], " "),
        });
    }

    pub fn write_to(&self, mut w: impl Write) -> io::Result<()> {
        for f in &self.findings {
            writeln!(
                w,
                "{}\t{}\t{}\t{}",
                f.severity, f.record_id, f.code, f.detail
            )?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("report is UTF-8")
    }

    pub fn read_from(r: impl BufRead) -> io::Result<IntegrityReport> {
        let mut report = IntegrityReport::default();
        for line in r.lines() {
            let line = line?;
            let mut parts = line.splitn(4, '\t');
            let (Some(sev), Some(id), Some(code), detail) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                continue;
            };
            let severity = if sev == "ERROR" {
                Severity::Error
            } else {
                Severity::Warning
            };
            let code = serde_json::from_value(serde_json::Value::String(code.to_string()))
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            report.push(severity, id, code, detail.unwrap_or("").to_string());
        }
        Ok(report)
    }
}

/// Outcome of [`ingest_directory`]: the manifest plus everything excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingest {
    pub manifest: Manifest,
    pub report: IntegrityReport,
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn is_image_path(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn decode(path: &Path) -> Result<image::DynamicImage, String> {
    image::ImageReader::open(path)
        .map_err(|e| e.to_string())?
        .with_guessed_format()
        .map_err(|e| e.to_string())?
        .decode()
        .map_err(|e| e.to_string())
}

/// Scans every mapped class directory under `root` and builds a manifest.
///
/// Files are hashed and decoded in parallel and merged in path order. Non-image
/// files, undecodable images and byte-identical duplicates (all but the first
/// path) are excluded and listed in the report.
pub fn ingest_directory(root: &Path, layout: &ClassLayout) -> Result<Ingest, CatalogError> {
    fs::read_dir(root).map_err(|source| CatalogError::UnreadableRoot {
        path: root.to_path_buf(),
        source,
    })?;
    let mut report = IntegrityReport::default();
    let mut candidates: Vec<(PathBuf, ClassLabel, String)> = Vec::new();
    for (dir, &label) in &layout.0 {
        let class_root = root.join(dir);
        if !class_root.is_dir() {
            return Err(CatalogError::MissingClassDir { path: class_root });
        }
        let before = candidates.len();
        for entry in walkdir::WalkDir::new(&class_root).sort_by_file_name() {
            let entry = entry.map_err(|e| CatalogError::Io {
                path: class_root.clone(),
                source: e.into(),
            })?;
            if !entry.file_type().is_file() {
                continue;
            }
            let path = entry.into_path();
            if !is_image_path(&path) {
                log::info!("skipping non-image file {}", path.display());
                report.push(
                    Severity::Warning,
                    "-",
                    FindingCode::NonImageSkipped,
                    path.display().to_string(),
                );
                continue;
            }
            let tag = path
                .parent()
                .and_then(|p| p.strip_prefix(root).ok())
                .map(|p| p.to_string_lossy().replace('\\', "/"))
                .unwrap_or_else(|| dir.clone());
            candidates.push((path, label, tag));
        }
        if candidates.len() == before {
            log::warn!(
                "class directory {} contains no images",
                class_root.display()
            );
            report.push(
                Severity::Warning,
                "-",
                FindingCode::EmptyClass,
                format!("{} ({})", class_root.display(), label.as_str()),
            );
        }
    }
    candidates.sort_by(|a, b| a.0.cmp(&b.0));

    let probed: Vec<Result<(String, u32, u32), String>> = candidates
        .par_iter()
        .map(|(path, _, _)| {
            let checksum = sha256_file(path).map_err(|e| e.to_string())?;
            let img = decode(path)?;
            Ok((checksum, img.width(), img.height()))
        })
        .collect();

    let mut seen: HashMap<String, PathBuf> = HashMap::new();
    let mut records = Vec::new();
    for ((path, label, tag), probe) in candidates.into_iter().zip(probed) {
        match probe {
            Err(detail) => report.push(
                Severity::Error,
                "-",
                FindingCode::Undecodable,
                format!("{}: {detail}", path.display()),
            ),
            Ok((_, w, h)) if w == 0 || h == 0 => report.push(
                Severity::Error,
                "-",
                FindingCode::Undecodable,
                format!("{}: empty raster", path.display()),
            ),
            Ok((checksum, width, height)) => {
                if let Some(first) = seen.get(&checksum) {
                    report.push(
                        Severity::Warning,
                        "-",
                        FindingCode::DuplicateChecksum,
                        format!("{} duplicates {}", path.display(), first.display()),
                    );
                    continue;
                }
                seen.insert(checksum.clone(), path.clone());
                records.push(ImageRecord {
                    record_id: record_id_for(&checksum),
                    path,
                    label,
                    checksum,
                    width,
                    height,
                    source_tag: tag,
                });
            }
        }
    }
    Ok(Ingest {
        manifest: Manifest::new(records),
        report,
    })
}

/// Record ids are derived from content, so a record keeps its id when the
/// corpus is moved or re-ingested.
pub fn record_id_for(checksum: &str) -> String {
    format!("r{}", &checksum[..16.min(checksum.len())])
}

/// Re-hashes and re-decodes every file referenced by `manifest`.
pub fn verify_manifest(manifest: &Manifest) -> IntegrityReport {
    let mut report = IntegrityReport::default();
    let mut ids: HashMap<&str, usize> = HashMap::new();
    let mut sums: HashMap<&str, &str> = HashMap::new();
    for r in &manifest.records {
        *ids.entry(&r.record_id).or_default() += 1;
        if let Some(first) = sums.insert(&r.checksum, &r.record_id) {
            report.push(
                Severity::Error,
                &r.record_id,
                FindingCode::DuplicateChecksum,
                format!("same content as {first}"),
            );
        }
    }
    let mut dup_ids: Vec<&str> = ids
        .into_iter()
        .filter(|&(_, n)| n > 1)
        .map(|(id, _)| id)
        .collect();
    dup_ids.sort_unstable();
    for id in dup_ids {
        report.push(
            Severity::Error,
            id,
            FindingCode::DuplicateRecordId,
            "record id repeated".into(),
        );
    }

    let checks: Vec<Vec<(FindingCode, String)>> = manifest
        .records
        .par_iter()
        .map(|r| {
            if !r.path.is_file() {
                return vec![(FindingCode::MissingFile, r.path.display().to_string())];
            }
            let mut found = Vec::new();
            match sha256_file(&r.path) {
                Ok(sum) if sum != r.checksum => found.push((
                    FindingCode::ChecksumDrift,
                    format!("{}: expected {}, found {sum}", r.path.display(), r.checksum),
                )),
                Ok(_) => {}
                Err(e) => {
                    return vec![(
                        FindingCode::MissingFile,
                        format!("{}: {e}", r.path.display()),
                    )]
                }
            }
            match decode(&r.path) {
                Err(e) => found.push((
                    FindingCode::Undecodable,
                    format!("{}: {e}", r.path.display()),
                )),
                Ok(img) if (img.width(), img.height()) != (r.width, r.height) => found.push((
                    FindingCode::DimensionDrift,
                    format!(
                        "{}: recorded {}x{}, decoded {}x{}",
                        r.path.display(),
                        r.width,
                        r.height,
                        img.width(),
                        img.height()
                    ),
                )),
                Ok(_) => {}
            }
            found
        })
        .collect();
    for (r, found) in manifest.records.iter().zip(checks) {
        for (code, detail) in found {
            report.push(Severity::Error, &r.record_id, code, detail);
        }
    }
    report
}

/// Draws `per_class_count` records uniformly at random from every class
/// present in `manifest`. Classes of exactly that size pass through whole.
pub fn balance_subsample(
    manifest: &Manifest,
    per_class_count: usize,
    seed: u64,
) -> Result<Manifest, CatalogError> {
    let mut chosen = Vec::new();
    for (label, population) in manifest.class_counts() {
        if population == 0 {
            continue;
        }
        if population < per_class_count {
            return Err(CatalogError::ClassTooSmall {
                class: label,
                population,
                requested: per_class_count,
            });
        }
        let mut members: Vec<&ImageRecord> = manifest
            .records
            .iter()
            .filter(|r| r.label == label)
            .collect();
        if population > per_class_count {
            members.sort_by(|a, b| a.record_id.cmp(&b.record_id));
            let mut rng = seed::rng(seed, &[seed::tag("balance"), label.ordinal() as u64]);
            members.shuffle(&mut rng);
            members.truncate(per_class_count);
        }
        chosen.extend(members.into_iter().cloned());
    }
    Ok(Manifest {
        created_at: manifest.created_at.clone(),
        schema_version: manifest.schema_version,
        ..Manifest::new(chosen)
    })
}

/// Conventional directory name of a class, as written by the toy corpus
/// generator and the augmentation materialiser.
pub fn class_dir(label: ClassLabel) -> &'static str {
    match label {
        ClassLabel::Covid19 => "covid",
        ClassLabel::Normal => "normal",
        ClassLabel::ViralPneumonia => "viral",
    }
}

/// Input geometry and normalisation expected by one backbone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BackboneInputSpec {
    pub backbone_name: BackboneName,
    pub input_side: u32,
    pub channel_count: u32,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl From<&BackboneSpec> for BackboneInputSpec {
    fn from(spec: &BackboneSpec) -> Self {
        BackboneInputSpec {
            backbone_name: spec.name,
            input_side: spec.input_side,
            channel_count: 3,
            mean: spec.mean,
            std: spec.std,
        }
    }
}

impl BackboneName {
    pub fn input_spec(self) -> BackboneInputSpec {
        BackboneInputSpec::from(&self.spec())
    }
}

/// A `(3, side, side)` array, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub side: usize,
    pub data: Vec<f32>,
}

impl ModelInput {
    pub fn shape(&self) -> (usize, usize, usize) {
        (3, self.side, self.side)
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.side * self.side;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Decodes a record as luminance and resizes it (bilinear, no crop) to a
/// square of `side` pixels, scaled to [0, 1].
pub fn load_gray(record: &ImageRecord, side: u32) -> Result<Raster, CatalogError> {
    let img = decode(&record.path).map_err(|detail| CatalogError::Decode {
        record_id: record.record_id.clone(),
        path: record.path.clone(),
        detail,
    })?;
    Ok(gray_to_raster(&resize_gray(&img.to_luma8(), side)))
}

pub fn resize_gray(img: &GrayImage, side: u32) -> GrayImage {
    if img.dimensions() == (side, side) {
        img.clone()
    } else {
        image::imageops::resize(img, side, side, FilterType::Triangle)
    }
}

pub fn gray_to_raster(img: &GrayImage) -> Raster {
    let data = img.as_raw().iter().map(|&v| f32::from(v) / 255.0).collect();
    Raster::new(img.width() as usize, img.height() as usize, data)
        .expect("raster dimensions match buffer")
}

/// Replicates a [0, 1] grey raster to three channels and standardises each.
pub fn standardize(gray: &Raster, spec: &BackboneInputSpec) -> ModelInput {
    assert_eq!(gray.width(), gray.height(), "model inputs are square");
    let mut data = Vec::with_capacity(3 * gray.data().len());
    for c in 0..3 {
        let (m, s) = (spec.mean[c], spec.std[c]);
        data.extend(gray.data().iter().map(|&v| (v - m) / s));
    }
    ModelInput {
        side: gray.width(),
        data,
    }
}

/// Decodes, converts to grey, replicates to three channels, resizes to the
/// backbone's input side, scales to [0, 1] and standardises per channel.
pub fn load_model_input(
    record: &ImageRecord,
    spec: &BackboneInputSpec,
) -> Result<ModelInput, CatalogError> {
    Ok(standardize(&load_gray(record, spec.input_side)?, spec))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directory_names_map_to_labels() {
        assert_eq!(
            ClassLayout::label_for_dir("COVID-19"),
            Some(ClassLabel::Covid19)
        );
        assert_eq!(
            ClassLayout::label_for_dir("Viral Pneumonia"),
            Some(ClassLabel::ViralPneumonia)
        );
        assert_eq!(
            ClassLayout::label_for_dir("NORMAL"),
            Some(ClassLabel::Normal)
        );
        assert_eq!(ClassLayout::label_for_dir("misc"), None);
    }

    #[test]
    fn tsv_round_trip() {
        let m = Manifest::new(vec![ImageRecord {
            record_id: "r1".into(),
            path: "/x/covid/a.png".into(),
            label: ClassLabel::Covid19,
            checksum: "ab".into(),
            width: 3,
            height: 4,
            source_tag: "covid".into(),
        }]);
        let back = Manifest::from_tsv(&m.to_tsv()).unwrap();
        assert_eq!(back.records, m.records);
        assert!(Manifest::from_tsv("bad header\n").is_err());
    }

    #[test]
    fn report_lines_round_trip() {
        let mut r = IntegrityReport::default();
        r.push(
            Severity::Error,
            "r1",
            FindingCode::MissingFile,
            "gone".into(),
        );
        let text = r.to_text();
        assert_eq!(text, "ERROR\tr1\tmissing_file\tgone\n");
        assert_eq!(IntegrityReport::read_from(text.as_bytes()).unwrap(), r);
    }
}
