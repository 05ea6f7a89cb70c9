//! The `cxr` command line: argument definitions and the four commands.
//!
//! Exit codes: 0 success, 1 when some backbone of a run failed, 2 for
//! usage or input errors.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use cxr_core::{expand_training_fold, seed, AugmentationSpec, RocCurve, Scheme};

use crate::catalog::{ingest_directory, ClassLayout, Manifest};
use crate::experiment::{
    describe_plan, plan, run_experiment, validate_run, BackboneStatus, RunConfig, RunReport,
};
use crate::report::{results_table, slug, write_roc_plot, TableRow};
use crate::splits::{
    plan_splits, render_count_table, save_plan, DEFAULT_K, DEFAULT_VALIDATION_FRACTION,
};

/// Environment variable selecting the compute device.
pub const DEVICE_ENV: &str = "CXR_DEVICE";

#[derive(Debug, Parser)]
#[command(name = "cxr", version, about = "Chest X-ray screening experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest a labelled image tree into a checksummed manifest.
    Catalog {
        /// Directory with one subdirectory per class.
        #[arg(long)]
        root: PathBuf,
        /// Manifest file to write; the integrity report goes next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Stratified k-fold plan with a validation carve.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        /// two-class or three-class.
        #[arg(long, default_value = "three-class")]
        scheme: Scheme,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long = "val-fraction", default_value_t = DEFAULT_VALIDATION_FRACTION)]
        val_fraction: f64,
        /// Plan file to write; the count table goes next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Plan the stages and print them without writing anything.
        #[arg(long)]
        dry_run: bool,
    },
    /// Render result tables and ROC plots of completed runs.
    Report {
        /// Run directory; repeat to compare arms side by side.
        #[arg(long = "run-dir", required = true)]
        run_dirs: Vec<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments or unusable input; exit code 2.
    #[error("{0}")]
    Input(String),
    /// The run finished but some backbones failed; exit code 1.
    #[error("{0}")]
    Partial(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Partial(_) => 1,
        }
    }
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

/// Only the CPU backend is built in.
pub fn check_device() -> Result<(), CliError> {
    match std::env::var(DEVICE_ENV) {
        Ok(v) if !v.eq_ignore_ascii_case("cpu") && !v.is_empty() => Err(CliError::Input(format!(
            "{DEVICE_ENV}={v}: only the cpu device is available in this build"
        ))),
        _ => Ok(()),
    }
}

pub fn execute(cli: Cli) -> Result<String, CliError> {
    check_device()?;
    match cli.command {
        Command::Catalog { root, out } => cmd_catalog(&root, &out).map(|s| s.text),
        Command::Split {
            manifest,
            scheme,
            k,
            seed,
            val_fraction,
            out,
        } => cmd_split(&manifest, scheme, k, seed, val_fraction, &out),
        Command::Run { config, dry_run } => cmd_run(&config, dry_run),
        Command::Report { run_dirs } => cmd_report(&run_dirs).map(|s| s.text),
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir)
            .map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display()))),
        _ => Ok(()),
    }
}

#[derive(Debug)]
pub struct CatalogSummary {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    pub integrity_path: PathBuf,
    pub text: String,
}

pub fn cmd_catalog(root: &Path, out: &Path) -> Result<CatalogSummary, CliError> {
    let layout = ClassLayout::detect(root).map_err(input)?;
    let ingest = ingest_directory(root, &layout).map_err(input)?;
    ensure_parent(out)?;
    ingest.manifest.save(out).map_err(input)?;
    let integrity_path = sibling(out, "integrity.tsv");
    fs::write(&integrity_path, ingest.report.to_text()).map_err(input)?;
    let mut text = String::new();
    if ingest.manifest.is_empty() {
        log::warn!("no images found under {}", root.display());
        text.push_str("warning: manifest has no records\n");
    }
    for (label, n) in ingest.manifest.class_counts() {
        writeln!(text, "{label}\t{n}").expect("string write");
    }
    writeln!(
        text,
        "{} records, {} integrity findings\nmanifest: {}\nintegrity report: {}",
        ingest.manifest.len(),
        ingest.report.findings.len(),
        out.display(),
        integrity_path.display()
    )
    .expect("string write");
    Ok(CatalogSummary {
        manifest: ingest.manifest,
        manifest_path: out.to_path_buf(),
        integrity_path,
        text,
    })
}

/// Writes the plan and its count table; the augmented column applies the
/// default multiplicities to each fold's training set.
pub fn cmd_split(
    manifest: &Path,
    scheme: Scheme,
    k: usize,
    seed_value: u64,
    fraction: f64,
    out: &Path,
) -> Result<String, CliError> {
    let manifest = Manifest::load(manifest).map_err(input)?;
    let plan = plan_splits(&manifest, scheme, k, seed_value, fraction).map_err(input)?;
    let mut table = cxr_core::split_counts(&plan);
    let spec = AugmentationSpec {
        seed: seed::derive(seed_value, &[seed::tag("augment")]),
        ..AugmentationSpec::default()
    };
    for fold in plan.fold_views() {
        if !fold.train().is_empty() {
            expand_training_fold(fold, &spec)
                .map_err(input)?
                .update_counts(&mut table);
        }
    }
    ensure_parent(out)?;
    save_plan(&plan, out).map_err(input)?;
    let text = render_count_table(&plan, &table);
    fs::write(sibling(out, "counts.txt"), &text).map_err(input)?;
    Ok(text)
}

pub fn cmd_run(config_path: &Path, dry_run: bool) -> Result<String, CliError> {
    let config = RunConfig::load(config_path).map_err(input)?;
    if dry_run {
        let plan = plan(&config).map_err(input)?;
        return Ok(format!(
            "Dry run: nothing written\n\n{}",
            describe_plan(&config, &plan)
        ));
    }
    let outcome = run_experiment(&config).map_err(input)?;
    let mut text = format!("run directory: {}\n", outcome.run_dir.display());
    for b in &outcome.report.backbones {
        match (&b.status, &b.evaluation) {
            (BackboneStatus::Completed, Some(e)) => writeln!(
                text,
                "{:<12} accuracy {}%  ({} test images)",
                b.name.display_name(),
                cxr_core::format_percent(e.aggregate.overall_accuracy),
                e.confusion.total()
            ),
            _ => writeln!(
                text,
                "{:<12} FAILED: {}",
                b.name.display_name(),
                b.error.as_deref().unwrap_or("unknown error")
            ),
        }
        .expect("string write");
    }
    let failed = outcome.report.failed();
    if failed.is_empty() {
        Ok(text)
    } else {
        Err(CliError::Partial(format!(
            "{text}{} of {} backbones failed",
            failed.len(),
            outcome.report.backbones.len()
        )))
    }
}

fn read_roc(path: &Path) -> Option<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path).ok()?;
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let (a, b) = l.split_once('\t')?;
            Some((a.parse().ok()?, b.parse().ok()?))
        })
        .collect()
}

fn arm_title(report: &RunReport) -> String {
    format!(
        "{} classification, {} image augmentation ({})",
        match report.scheme {
            Scheme::TwoClass => "Two-class",
            Scheme::ThreeClass => "Three-class",
        },
        if report.augment { "with" } else { "without" },
        report.run_name
    )
}

#[derive(Debug)]
pub struct ReportSummary {
    pub text: String,
    pub files: Vec<PathBuf>,
}

/// Validates each run, writes `report/tables.txt` and per-class ROC plots
/// into it, and returns the tables of all runs grouped by scheme.
pub fn cmd_report(run_dirs: &[PathBuf]) -> Result<ReportSummary, CliError> {
    let mut arms = Vec::new();
    for dir in run_dirs {
        arms.push((dir.clone(), validate_run(dir).map_err(input)?));
    }
    arms.sort_by_key(|(_, r)| (r.scheme == Scheme::ThreeClass, !r.augment));
    let mut text = String::new();
    let mut files = Vec::new();
    for (dir, report) in &arms {
        let rows: Vec<TableRow> = report
            .backbones
            .iter()
            .filter_map(|b| {
                b.evaluation.as_ref().map(|e| TableRow {
                    backbone: b.name.display_name().to_string(),
                    aggregate: e.aggregate.clone(),
                })
            })
            .collect();
        let table = results_table(&arm_title(report), &rows);
        let report_dir = dir.join("report");
        let tables_path = report_dir.join("tables.txt");
        fs::write(&tables_path, &table).map_err(input)?;
        files.push(tables_path);

        for class in report.scheme.classes() {
            let name = slug(class.display_name());
            let mut curves: Vec<(String, RocCurve)> = Vec::new();
            for b in &report.backbones {
                let (Some(metrics_dir), Some(eval)) = (&b.metrics_dir, &b.evaluation) else {
                    continue;
                };
                let Some(points) = read_roc(&dir.join(metrics_dir).join(format!("roc_{name}.tsv")))
                else {
                    continue;
                };
                let auc = eval
                    .aucs
                    .iter()
                    .find(|a| a.class.as_deref() == Some(class.display_name()))
                    .map_or(f64::NAN, |a| a.auc);
                curves.push((
                    b.name.display_name().to_string(),
                    RocCurve {
                        positive_class: report.scheme.class_index(*class),
                        points,
                        auc,
                    },
                ));
            }
            if curves.is_empty() {
                continue;
            }
            let refs: Vec<(&str, &RocCurve)> =
                curves.iter().map(|(n, c)| (n.as_str(), c)).collect();
            let (png, legend) = write_roc_plot(&report_dir.join(format!("roc_{name}.png")), &refs)
                .map_err(input)?;
            files.push(png);
            files.push(legend);
        }
        text.push_str(&table);
        text.push('\n');
    }
    Ok(ReportSummary { text, files })
}
