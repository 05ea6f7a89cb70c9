//! Rotation and translation augmentation of training folds.
//!
//! Geometry uses inverse mapping: every output pixel is traced back to a
//! continuous source coordinate and sampled bilinearly. Neighbours that fall
//! outside the source frame contribute `fill`, so borders fade to black the
//! same way at every angle.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::label::ClassLabel;
use crate::seed;
use crate::split::{FoldView, SplitCountTable};

/// Largest rotation accepted, in degrees.
pub const MAX_ROTATION_DEGREES: f64 = 45.0;
/// Largest translation accepted, as a fraction of the image side.
pub const MAX_TRANSLATION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AugmentError {
    #[error("raster is empty")]
    EmptyRaster,
    #[error("raster of {width}x{height} needs {expected} samples, got {actual}")]
    ShapeMismatch {
        width: usize,
        height: usize,
        expected: usize,
        actual: usize,
    },
    #[error("rotation of {0} degrees exceeds the ±45 degree bound")]
    AngleOutOfRange(f64),
    #[error("translation ({dx}, {dy}) exceeds the ±0.5 bound")]
    TranslationOutOfRange { dx: f64, dy: f64 },
    #[error("invalid augmentation spec: {0}")]
    InvalidSpec(String),
    #[error("fold {0} has no training records")]
    EmptyFold(usize),
}

/// Single-channel image with row-major `f32` intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, AugmentError> {
        if width == 0 || height == 0 {
            return Err(AugmentError::EmptyRaster);
        }
        if data.len() != width * height {
            return Err(AugmentError::ShapeMismatch {
                width,
                height,
                expected: width * height,
                actual: data.len(),
            });
        }
        Ok(Raster {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self, AugmentError> {
        Raster::new(width, height, alloc::vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: f32) {
        self.data[y * self.width + x] = value;
    }

    fn at_or(&self, x: i64, y: i64, fill: f32) -> f32 {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            fill
        } else {
            self.data[y as usize * self.width + x as usize]
        }
    }

    /// Bilinear sample at a continuous pixel-centre coordinate.
    pub fn sample_bilinear(&self, x: f64, y: f64, fill: f32) -> f32 {
        let x0 = libm::floor(x);
        let y0 = libm::floor(y);
        let (tx, ty) = (x - x0, y - y0);
        let (ix, iy) = (x0 as i64, y0 as i64);
        let v00 = self.at_or(ix, iy, fill);
        let v10 = self.at_or(ix + 1, iy, fill);
        let v01 = self.at_or(ix, iy + 1, fill);
        let v11 = self.at_or(ix + 1, iy + 1, fill);
        let lerp = |a: f32, b: f32, t: f64| {
            let (a, b) = (f64::from(a), f64::from(b));
            (a + (b - a) * t).clamp(a.min(b), a.max(b))
        };
        let top = lerp(v00, v10, tx);
        let bottom = lerp(v01, v11, tx);
        let v = top + (bottom - top) * ty;
        (v.clamp(top.min(bottom), top.max(bottom))) as f32
    }

    fn warp(&self, fill: f32, source_of: impl Fn(f64, f64) -> (f64, f64)) -> Raster {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in 0..self.width {
                let (sx, sy) = source_of(x as f64, y as f64);
                data.push(self.sample_bilinear(sx, sy, fill));
            }
        }
        Raster {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Rotates about the image centre; positive angles turn the content
/// counter-clockwise as displayed (rows growing downwards).
pub fn rotate(image: &Raster, degrees: f64, fill: f32) -> Result<Raster, AugmentError> {
    if !degrees.is_finite() || libm::fabs(degrees) > MAX_ROTATION_DEGREES {
        return Err(AugmentError::AngleOutOfRange(degrees));
    }
    if degrees == 0.0 {
        return Ok(image.clone());
    }
    let theta = degrees.to_radians();
    let (sin, cos) = (libm::sin(theta), libm::cos(theta));
    let cx = (image.width as f64 - 1.0) / 2.0;
    let cy = (image.height as f64 - 1.0) / 2.0;
    Ok(image.warp(fill, |x, y| {
        let (u, v) = (x - cx, y - cy);
        (cx + u * cos - v * sin, cy + u * sin + v * cos)
    }))
}

/// Shifts content by `dx` of the width (positive: right) and `dy` of the
/// height (positive: down), with sub-pixel bilinear resampling.
pub fn translate(image: &Raster, dx: f64, dy: f64, fill: f32) -> Result<Raster, AugmentError> {
    let in_range = |t: f64| t.is_finite() && libm::fabs(t) <= MAX_TRANSLATION;
    if !in_range(dx) || !in_range(dy) {
        return Err(AugmentError::TranslationOutOfRange { dx, dy });
    }
    if dx == 0.0 && dy == 0.0 {
        return Ok(image.clone());
    }
    let shift_x = dx * image.width as f64;
    let shift_y = dy * image.height as f64;
    Ok(image.warp(fill, |x, y| (x - shift_x, y - shift_y)))
}

/// How many synthetic copies one class receives and whether each copy is
/// rotated before it is translated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ClassAugmentation {
    pub copies: u32,
    pub rotate: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct AugmentationSpec {
    /// Angles cycled through by rotating classes, one per copy.
    pub rotation_degrees: Vec<f64>,
    /// Inclusive bounds on the horizontal shift, as a fraction of width.
    pub translation_x: (f64, f64),
    /// Inclusive bounds on the vertical shift, as a fraction of height.
    pub translation_y: (f64, f64),
    pub per_class: BTreeMap<ClassLabel, ClassAugmentation>,
    pub fill_value: f32,
    pub seed: u64,
}

impl Default for AugmentationSpec {
    /// Six rotated-and-shifted COVID-19 copies, one shifted copy otherwise.
    fn default() -> Self {
        let mut per_class = BTreeMap::new();
        per_class.insert(
            ClassLabel::Covid19,
            ClassAugmentation {
                copies: 6,
                rotate: true,
            },
        );
        for label in [ClassLabel::Normal, ClassLabel::ViralPneumonia] {
            per_class.insert(
                label,
                ClassAugmentation {
                    copies: 1,
                    rotate: false,
                },
            );
        }
        AugmentationSpec {
            rotation_degrees: alloc::vec![-15.0, -10.0, -5.0, 5.0, 10.0, 15.0],
            translation_x: (-0.05, 0.05),
            translation_y: (-0.05, 0.05),
            per_class,
            fill_value: 0.0,
            seed: 0,
        }
    }
}

impl AugmentationSpec {
    pub fn copies(&self, class: ClassLabel) -> u32 {
        self.per_class.get(&class).map_or(0, |c| c.copies)
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        for (axis, (lo, hi)) in [("x", self.translation_x), ("y", self.translation_y)] {
            let ok = lo.is_finite()
                && hi.is_finite()
                && lo <= hi
                && lo >= -MAX_TRANSLATION
                && hi <= MAX_TRANSLATION;
            if !ok {
                return Err(AugmentError::InvalidSpec(format!(
                    "translation bounds for {axis} must satisfy -0.5 <= lo <= hi <= 0.5, got ({lo}, {hi})"
                )));
            }
        }
        if let Some(bad) = self
            .rotation_degrees
            .iter()
            .find(|d| !d.is_finite() || libm::fabs(**d) > MAX_ROTATION_DEGREES)
        {
            return Err(AugmentError::AngleOutOfRange(*bad));
        }
        for (label, class) in &self.per_class {
            if class.rotate && class.copies > 0 && self.rotation_degrees.is_empty() {
                return Err(AugmentError::InvalidSpec(format!(
                    "{label} copies are rotated but no rotation angles are configured"
                )));
            }
        }
        Ok(())
    }

    /// Copy-count law: originals plus synthetic copies.
    pub fn expanded_count(&self, class: ClassLabel, originals: usize) -> usize {
        originals * (1 + self.copies(class) as usize)
    }
}

/// Exact parameters of one synthetic image.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum TransformDescriptor {
    Translate { dx: f64, dy: f64 },
    RotateTranslate { degrees: f64, dx: f64, dy: f64 },
}

impl TransformDescriptor {
    pub fn kind(&self) -> &'static str {
        match self {
            TransformDescriptor::Translate { .. } => "translate",
            TransformDescriptor::RotateTranslate { .. } => "rotate+translate",
        }
    }

    /// `key=value` parameter list, rendered with round-trip precision.
    pub fn parameters(&self) -> String {
        match *self {
            TransformDescriptor::Translate { dx, dy } => format!("dx={dx:?};dy={dy:?}"),
            TransformDescriptor::RotateTranslate { degrees, dx, dy } => {
                format!("degrees={degrees:?};dx={dx:?};dy={dy:?}")
            }
        }
    }

    /// Rotation first, then translation.
    pub fn apply(&self, image: &Raster, fill: f32) -> Result<Raster, AugmentError> {
        match *self {
            TransformDescriptor::Translate { dx, dy } => translate(image, dx, dy, fill),
            TransformDescriptor::RotateTranslate { degrees, dx, dy } => {
                translate(&rotate(image, degrees, fill)?, dx, dy, fill)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct AugmentedRecord {
    pub derived_id: String,
    pub parent_record_id: String,
    pub label: ClassLabel,
    pub transform: TransformDescriptor,
}

/// Synthetic training records for one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldExpansion {
    pub fold: usize,
    pub records: Vec<AugmentedRecord>,
    /// (class, originals, originals + copies)
    pub counts: Vec<(ClassLabel, usize, usize)>,
}

impl FoldExpansion {
    /// Writes the augmented training totals into the fold's column.
    pub fn update_counts(&self, table: &mut SplitCountTable) {
        for &(class, _, total) in &self.counts {
            table.set_augmented(class, self.fold, total);
        }
    }
}

/// Plans the synthetic copies of every training record in `fold`.
///
/// Descriptors are drawn class by class over sorted record ids from a
/// stream keyed by (spec seed, fold, class), so they depend only on the
/// fold's training set and the spec.
pub fn expand_training_fold(
    fold: FoldView<'_>,
    spec: &AugmentationSpec,
) -> Result<FoldExpansion, AugmentError> {
    spec.validate()?;
    if fold.train().is_empty() {
        return Err(AugmentError::EmptyFold(fold.index));
    }
    let mut records = Vec::new();
    let mut counts = Vec::new();
    for &class in fold.scheme().classes() {
        let policy = spec
            .per_class
            .get(&class)
            .copied()
            .unwrap_or(ClassAugmentation {
                copies: 0,
                rotate: false,
            });
        let mut rng = seed::rng(
            spec.seed,
            &[
                seed::tag("augment"),
                fold.index as u64,
                class.ordinal() as u64,
            ],
        );
        let mut originals = 0usize;
        for parent in fold.train_of(class) {
            originals += 1;
            for copy in 0..policy.copies as usize {
                let dx = rng.random_range(spec.translation_x.0..=spec.translation_x.1);
                let dy = rng.random_range(spec.translation_y.0..=spec.translation_y.1);
                let transform = if policy.rotate {
                    let degrees = spec.rotation_degrees[copy % spec.rotation_degrees.len()];
                    TransformDescriptor::RotateTranslate { degrees, dx, dy }
                } else {
                    TransformDescriptor::Translate { dx, dy }
                };
                records.push(AugmentedRecord {
                    derived_id: format!("{parent}~aug{copy}"),
                    parent_record_id: parent.into(),
                    label: class,
                    transform,
                });
            }
        }
        counts.push((class, originals, spec.expanded_count(class, originals)));
    }
    Ok(FoldExpansion {
        fold: fold.index,
        records,
        counts,
    })
}
