//! Convolutional activation maps of a trained classifier and the
//! class-by-layer comparison panel built from them.
//!
//! Layers are named by the dotted parameter path of their convolution
//! (`features.0`, `layer2.1.conv1`, ...) or by their position among all
//! convolutions in forward order, written `#n` and counted from 1.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use cxr_core::{normalize_map, strongest_channel, ActivationMap, ClassLabel};
use image::imageops::FilterType;
use image::{ImageBuffer, Luma, Rgb, RgbImage};
use imageproc::drawing::draw_line_segment_mut;

use crate::catalog::{load_gray, load_model_input, standardize, ImageRecord, ModelInput};
use crate::nn::Ctx;
use crate::trainer::{Classifier, TrainError};

/// Convolutions referred to by ordinal in the default panel.
pub const DEFAULT_PANEL_LAYERS: [&str; 3] = ["#1", "#14", "#29"];
/// Pixel side of one panel cell.
pub const CELL_SIDE: u32 = 160;
const GUTTER: u32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum ExplainError {
    #[error("unknown layer `{requested}`; nearest: {}", nearest.join(", "))]
    UnknownLayer {
        requested: String,
        nearest: Vec<String>,
    },
    #[error("activation at {layer} contains non-finite values")]
    NonFinite { layer: String },
    #[error("panel needs at least one layer and one record")]
    EmptyPanel,
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Catalog(#[from] crate::catalog::CatalogError),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error("{path}: {detail}")]
    Write { path: PathBuf, detail: String },
}

/// One convolution in forward order with its per-image output shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerInfo {
    /// Position among all convolutions, counted from 1.
    pub ordinal: usize,
    pub name: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

fn single_batch(input: &ModelInput) -> Result<Tensor, candle_core::Error> {
    Tensor::from_slice(&input.data, (3, 1, input.side, input.side), &Device::Cpu)
}

/// Every convolution of the classifier, found by one forward pass over a
/// blank input.
pub fn layer_inventory(classifier: &Classifier) -> Result<Vec<LayerInfo>, ExplainError> {
    let side = classifier.spec.input_side as usize;
    let blank = Tensor::zeros((3, 1, side, side), candle_core::DType::F32, &Device::Cpu)?;
    let mut ctx = Ctx::eval().record_inventory();
    classifier.forward(&blank, &mut ctx)?;
    Ok(ctx
        .take_inventory()
        .into_iter()
        .enumerate()
        .map(|(i, (name, dims))| LayerInfo {
            ordinal: i + 1,
            name,
            channels: dims[0],
            height: dims[2],
            width: dims[3],
        })
        .collect())
}

/// Looks up a dotted name or a `#n` ordinal. Unknown identifiers report
/// the closest valid names by edit distance.
pub fn resolve_layer<'a>(
    inventory: &'a [LayerInfo],
    identifier: &str,
) -> Result<&'a LayerInfo, ExplainError> {
    let by_ordinal = identifier
        .strip_prefix('#')
        .and_then(|n| n.parse::<usize>().ok())
        .and_then(|n| inventory.iter().find(|l| l.ordinal == n));
    if let Some(layer) = by_ordinal.or_else(|| inventory.iter().find(|l| l.name == identifier)) {
        return Ok(layer);
    }
    let mut ranked: Vec<(usize, &str)> = inventory
        .iter()
        .map(|l| (strsim::levenshtein(identifier, &l.name), l.name.as_str()))
        .collect();
    ranked.sort();
    let mut nearest: Vec<String> = ranked.iter().take(5).map(|(_, n)| n.to_string()).collect();
    if identifier.starts_with('#') {
        nearest.insert(0, format!("#1..#{}", inventory.len()));
    }
    Err(ExplainError::UnknownLayer {
        requested: identifier.to_string(),
        nearest,
    })
}

/// Runs one inference pass and keeps the output of `layer`. Parameters
/// are only read.
pub fn capture_input(
    classifier: &Classifier,
    input: &ModelInput,
    layer: &LayerInfo,
    record_id: &str,
) -> Result<ActivationMap, ExplainError> {
    let mut ctx = Ctx::eval().capture(&layer.name);
    classifier.forward(&single_batch(input)?, &mut ctx)?;
    let captured = ctx
        .take_captured()
        .expect("every inventoried layer is observed in the forward pass");
    let (c, _, h, w) = captured.dims4()?;
    let map = ActivationMap {
        layer: layer.name.clone(),
        record_id: record_id.to_string(),
        channels: c,
        height: h,
        width: w,
        values: captured.flatten_all()?.to_vec1::<f32>()?,
    };
    if !map.is_finite() {
        return Err(ExplainError::NonFinite {
            layer: layer.name.clone(),
        });
    }
    Ok(map)
}

/// Decodes `record` as the classifier expects and captures `layer`.
pub fn capture_activations(
    classifier: &Classifier,
    record: &ImageRecord,
    layer: &str,
) -> Result<ActivationMap, ExplainError> {
    let inventory = layer_inventory(classifier)?;
    let info = resolve_layer(&inventory, layer)?;
    let input = load_model_input(record, &classifier.input_spec())?;
    capture_input(classifier, &input, info, &record.record_id)
}

/// What one panel cell shows.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelCell {
    pub row: usize,
    pub column: usize,
    pub class: ClassLabel,
    pub record_id: String,
    /// `original` for the input image, else the resolved layer name.
    pub layer: String,
    /// Strongest channel, counted from 0.
    pub channel: Option<usize>,
    /// Set when the cell could not be computed and shows a placeholder.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub image_path: PathBuf,
    pub sidecar_path: PathBuf,
    pub rows: usize,
    pub columns: usize,
    pub cells: Vec<PanelCell>,
}

pub const PANEL_SIDECAR_HEADER: &str = "row\tcolumn\tclass\trecord_id\tlayer\tchannel\terror";

fn gray_cell(values: &[f32], w: usize, h: usize) -> ImageBuffer<Luma<f32>, Vec<f32>> {
    let img = ImageBuffer::from_raw(w as u32, h as u32, values.to_vec())
        .expect("buffer matches dimensions");
    image::imageops::resize(&img, CELL_SIDE, CELL_SIDE, FilterType::Triangle)
}

fn colorize(cell: &ImageBuffer<Luma<f32>, Vec<f32>>) -> RgbImage {
    RgbImage::from_fn(CELL_SIDE, CELL_SIDE, |x, y| {
        let v = f64::from(cell.get_pixel(x, y).0[0]).clamp(0.0, 1.0);
        let c = colorous::TURBO.eval_continuous(v);
        Rgb([c.r, c.g, c.b])
    })
}

fn grayscale(cell: &ImageBuffer<Luma<f32>, Vec<f32>>) -> RgbImage {
    RgbImage::from_fn(CELL_SIDE, CELL_SIDE, |x, y| {
        let v = (cell.get_pixel(x, y).0[0].clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([v, v, v])
    })
}

fn placeholder() -> RgbImage {
    let mut img = RgbImage::from_pixel(CELL_SIDE, CELL_SIDE, Rgb([48, 48, 48]));
    let s = (CELL_SIDE - 1) as f32;
    draw_line_segment_mut(&mut img, (0.0, 0.0), (s, s), Rgb([220, 40, 40]));
    draw_line_segment_mut(&mut img, (0.0, s), (s, 0.0), Rgb([220, 40, 40]));
    img
}

fn strongest_normalized(map: &ActivationMap) -> (usize, Vec<f32>) {
    let channel = strongest_channel(map).expect("convolutions have channels");
    let single = ActivationMap {
        channels: 1,
        values: map.channel(channel).to_vec(),
        ..map.clone()
    };
    (channel, normalize_map(&single).map.values)
}

/// Grid of rows = records (one per class), columns = the original image
/// followed by the strongest normalised channel of each layer, rendered
/// with a fixed colour map. Cells that fail become placeholders; the file
/// is still written. A tab-separated sidecar describes every cell.
pub fn render_panel(
    classifier: &Classifier,
    records: &[(ClassLabel, &ImageRecord)],
    layers: &[String],
    out_png: &Path,
) -> Result<Panel, ExplainError> {
    if layers.is_empty() || records.is_empty() {
        return Err(ExplainError::EmptyPanel);
    }
    let inventory = layer_inventory(classifier)?;
    let spec = classifier.input_spec();
    let columns = layers.len() + 1;
    let (width, height) = (
        columns as u32 * (CELL_SIDE + GUTTER) + GUTTER,
        records.len() as u32 * (CELL_SIDE + GUTTER) + GUTTER,
    );
    let mut canvas = RgbImage::from_pixel(width, height, Rgb([0, 0, 0]));
    let mut cells = Vec::new();
    for (row, &(class, record)) in records.iter().enumerate() {
        let gray = load_gray(record, spec.input_side);
        let mut tiles: Vec<(RgbImage, PanelCell)> = Vec::with_capacity(columns);
        let cell = |column: usize, layer: &str| PanelCell {
            row,
            column,
            class,
            record_id: record.record_id.clone(),
            layer: layer.to_string(),
            channel: None,
            error: None,
        };
        match &gray {
            Ok(g) => tiles.push((
                grayscale(&gray_cell(g.data(), g.width(), g.height())),
                cell(0, "original"),
            )),
            Err(e) => tiles.push((
                placeholder(),
                PanelCell {
                    error: Some(e.to_string()),
                    ..cell(0, "original")
                },
            )),
        }
        for (j, requested) in layers.iter().enumerate() {
            let result = match &gray {
                Ok(g) => resolve_layer(&inventory, requested)
                    .and_then(|info| {
                        let input = standardize(g, &spec);
                        let map = capture_input(classifier, &input, info, &record.record_id)?;
                        Ok((info.name.clone(), map))
                    })
                    .map_err(|e| e.to_string()),
                Err(e) => Err(e.to_string()),
            };
            match result {
                Ok((name, map)) => {
                    let (channel, values) = strongest_normalized(&map);
                    tiles.push((
                        colorize(&gray_cell(&values, map.width, map.height)),
                        PanelCell {
                            channel: Some(channel),
                            ..cell(j + 1, &name)
                        },
                    ));
                }
                Err(e) => {
                    log::warn!("panel cell ({row}, {}): {e}", j + 1);
                    tiles.push((
                        placeholder(),
                        PanelCell {
                            error: Some(e),
                            ..cell(j + 1, requested)
                        },
                    ));
                }
            }
        }
        for (tile, info) in tiles {
            let x = GUTTER + info.column as u32 * (CELL_SIDE + GUTTER);
            let y = GUTTER + row as u32 * (CELL_SIDE + GUTTER);
            image::imageops::replace(&mut canvas, &tile, i64::from(x), i64::from(y));
            cells.push(info);
        }
    }
    let write_err = |path: &Path, detail: String| ExplainError::Write {
        path: path.to_path_buf(),
        detail,
    };
    if let Some(dir) = out_png.parent() {
        fs::create_dir_all(dir).map_err(|e| write_err(dir, e.to_string()))?;
    }
    canvas
        .save(out_png)
        .map_err(|e| write_err(out_png, e.to_string()))?;
    let sidecar_path = out_png.with_extension("tsv");
    fs::write(&sidecar_path, panel_sidecar(&cells))
        .map_err(|e| write_err(&sidecar_path, e.to_string()))?;
    Ok(Panel {
        image_path: out_png.to_path_buf(),
        sidecar_path,
        rows: records.len(),
        columns,
        cells,
    })
}

fn panel_sidecar(cells: &[PanelCell]) -> String {
    let mut out = format!("{PANEL_SIDECAR_HEADER}\n");
    for c in cells {
        let channel = c.channel.map_or_else(String::new, |ch| ch.to_string());
        let error = c.error.as_deref().unwrap_or("").replace(['\t', '\n'], " ");
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{channel}\t{error}",
            c.row, c.column, c.class, c.record_id, c.layer
        )
        .expect("writing to a String cannot fail");
    }
    out
}
