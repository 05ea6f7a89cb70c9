//! Small synthetic radiograph-like corpora for smoke runs and tests.
//!
//! Each class has a distinct, easily learnt appearance: plain noisy lung
//! fields (normal), diffusely hazy lungs with a bright patchy opacity
//! (COVID-19) or high-contrast banded streaks (viral pneumonia). Images are fully determined by (class, index, seed).

use std::fs;
use std::io;
use std::path::Path;

use cxr_core::{seed, ClassLabel};

use crate::catalog::class_dir;
use image::{GrayImage, Luma};
use rand::Rng;

pub const DEFAULT_SIDE: u32 = 64;

/// One synthetic image of `label`.
pub fn toy_image(label: ClassLabel, index: usize, seed: u64, side: u32) -> GrayImage {
    let mut rng = seed::rng(
        seed,
        &[seed::tag("toy"), label.ordinal() as u64, index as u64],
    );
    let s = side as f64;
    let (cx, cy) = (
        rng.random_range(0.3..0.7) * s,
        rng.random_range(0.35..0.75) * s,
    );
    let radius = rng.random_range(0.15..0.25) * s;
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let period = rng.random_range(0.10..0.14) * s;
    GrayImage::from_fn(side, side, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        // Two darker lung fields on a mid-grey chest.
        let lung = |ox: f64| {
            let dx = (xf - ox * s) / (0.18 * s);
            let dy = (yf - 0.55 * s) / (0.32 * s);
            dx * dx + dy * dy < 1.0
        };
        let in_lung = lung(0.3) || lung(0.7);
        let mut v = if in_lung { 50.0 } else { 110.0 };
        match label {
            ClassLabel::Normal => {}
            ClassLabel::Covid19 => {
                if in_lung {
                    v += 60.0;
                }
                let d = ((xf - cx).powi(2) + (yf - cy).powi(2)).sqrt();
                if d < radius {
                    v += 130.0 * (1.0 - d / radius).sqrt();
                }
            }
            ClassLabel::ViralPneumonia => {
                let band = (std::f64::consts::TAU * yf / period + phase).sin();
                v = if band > 0.0 { v + 100.0 } else { v - 40.0 };
            }
        }
        v += rng.random_range(-12.0..12.0);
        Luma([v.clamp(0.0, 255.0) as u8])
    })
}

/// Writes `counts[c]` PNGs per class under `root/<class dir>/`.
pub fn write_toy_corpus(
    root: &Path,
    counts: &[(ClassLabel, usize)],
    seed: u64,
    side: u32,
) -> io::Result<()> {
    for &(label, n) in counts {
        let dir = root.join(class_dir(label));
        fs::create_dir_all(&dir)?;
        for i in 0..n {
            toy_image(label, i, seed, side)
                .save(dir.join(format!("{}_{i:04}.png", class_dir(label))))
                .map_err(io::Error::other)?;
        }
    }
    Ok(())
}
