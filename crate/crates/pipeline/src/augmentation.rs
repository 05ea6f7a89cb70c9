//! Writing planned synthetic training images to disk for inspection.
//!
//! Training never reads these files; copies are regenerated from their
//! descriptors on the fly. Materialisation exists to eyeball what the
//! descriptors produce.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use cxr_core::FoldExpansion;
use image::GrayImage;

use crate::catalog::{class_dir, load_gray, CatalogError, ImageRecord, Manifest};

pub const DESCRIPTOR_HEADER: &str = "derived_id\tparent_record_id\tkind\tparameters";
pub const DESCRIPTOR_FILE: &str = "descriptors.tsv";

#[derive(Debug, thiserror::Error)]
pub enum MaterializeError {
    #[error("augmented record {0} has a parent missing from the manifest")]
    UnknownParent(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Augment(#[from] cxr_core::AugmentError),
    #[error("{path}: {detail}")]
    Write { path: PathBuf, detail: String },
}

/// Tab-separated descriptor listing, one row per synthetic image.
pub fn descriptor_tsv(expansion: &FoldExpansion) -> String {
    let mut out = format!("{DESCRIPTOR_HEADER}\n");
    for r in &expansion.records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.derived_id,
            r.parent_record_id,
            r.transform.kind(),
            r.transform.parameters()
        ));
    }
    out
}

/// Renders every synthetic image of one fold at `side` pixels under
/// `<aug_dir>/<fold>/<class>/<derived_id>.png` and writes the descriptor
/// sidecar next to the class directories. Returns the fold directory.
pub fn materialize_fold(
    expansion: &FoldExpansion,
    manifest: &Manifest,
    aug_dir: &Path,
    side: u32,
    fill: f32,
) -> Result<PathBuf, MaterializeError> {
    let index = manifest.index();
    let fold_dir = aug_dir.join(expansion.fold.to_string());
    let write_err = |path: &Path, detail: String| MaterializeError::Write {
        path: path.to_path_buf(),
        detail,
    };
    let mut parents: HashMap<&str, cxr_core::Raster> = HashMap::new();
    for r in &expansion.records {
        let parent: &ImageRecord = index
            .get(r.parent_record_id.as_str())
            .ok_or_else(|| MaterializeError::UnknownParent(r.derived_id.clone()))?;
        if !parents.contains_key(parent.record_id.as_str()) {
            parents.insert(parent.record_id.as_str(), load_gray(parent, side)?);
        }
        let out = r
            .transform
            .apply(&parents[parent.record_id.as_str()], fill)?;
        let dir = fold_dir.join(class_dir(r.label));
        fs::create_dir_all(&dir).map_err(|e| write_err(&dir, e.to_string()))?;
        let pixels = out
            .data()
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        let img = GrayImage::from_raw(out.width() as u32, out.height() as u32, pixels)
            .expect("buffer matches raster size");
        let path = dir.join(format!("{}.png", r.derived_id));
        img.save(&path)
            .map_err(|e| write_err(&path, e.to_string()))?;
    }
    fs::create_dir_all(&fold_dir).map_err(|e| write_err(&fold_dir, e.to_string()))?;
    let sidecar = fold_dir.join(DESCRIPTOR_FILE);
    fs::write(&sidecar, descriptor_tsv(expansion))
        .map_err(|e: io::Error| write_err(&sidecar, e.to_string()))?;
    Ok(fold_dir)
}
