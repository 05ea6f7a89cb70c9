//! Fold plans on disk: the JSON plan document and its count table.

use std::fs;
use std::path::Path;

use cxr_core::{
    carve_validation, stratified_kfold, Scheme, SplitCountTable, SplitError, SplitPlan,
};
use sha2::{Digest, Sha256};

use crate::catalog::Manifest;

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.10;

#[derive(Debug, thiserror::Error)]
pub enum PlanFileError {
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: not a split plan: {detail}")]
    Format {
        path: std::path::PathBuf,
        detail: String,
    },
    #[error("{path}: {source}")]
    Invalid {
        path: std::path::PathBuf,
        source: SplitError,
    },
}

/// Restricts `manifest` to the scheme's classes, deals stratified test
/// folds and carves a stratified validation set from every training pool.
pub fn plan_splits(
    manifest: &Manifest,
    scheme: Scheme,
    k: usize,
    seed: u64,
    validation_fraction: f64,
) -> Result<SplitPlan, SplitError> {
    let samples = manifest.restrict(scheme).samples();
    let plan = stratified_kfold(&samples, scheme, k, seed)?;
    carve_validation(&plan, validation_fraction)
}

/// Pretty JSON with sorted id arrays, so equal plans give equal bytes.
pub fn plan_to_json(plan: &SplitPlan) -> String {
    serde_json::to_string_pretty(plan).expect("split plans serialise") + "\n"
}

pub fn save_plan(plan: &SplitPlan, path: &Path) -> Result<(), PlanFileError> {
    fs::write(path, plan_to_json(plan)).map_err(|source| PlanFileError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a plan and checks its partition invariants.
pub fn load_plan(path: &Path) -> Result<SplitPlan, PlanFileError> {
    let text = fs::read_to_string(path).map_err(|source| PlanFileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let plan: SplitPlan = serde_json::from_str(&text).map_err(|e| PlanFileError::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    plan.validate().map_err(|source| PlanFileError::Invalid {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(plan)
}

/// SHA-256 of the canonical JSON rendering.
pub fn plan_checksum(plan: &SplitPlan) -> String {
    hex::encode(Sha256::digest(plan_to_json(plan).as_bytes()))
}

/// The count table as text, headed by the plan's parameters.
pub fn render_count_table(plan: &SplitPlan, table: &SplitCountTable) -> String {
    let fraction = plan
        .validation_fraction
        .map_or_else(|| "none".to_string(), |f| f.to_string());
    format!(
        "Number of images per class and per fold ({}, k = {}, seed = {}, validation fraction = {fraction})\n{table}",
        plan.scheme, plan.k, plan.seed
    )
}
