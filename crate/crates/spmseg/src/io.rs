//! Image, mask, height-map, weight and record files.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat};
use sha2::{Digest, Sha256};
use spmseg_core::dataset::DatasetRecord;
use spmseg_core::unet::{weights, ModelWeights, UNetSpec};
use spmseg_core::{BinaryMask, GrayImage, HeightMap};

use crate::error::{CliError, CliResult};

const IMAGE_EXTENSIONS: &[&str] = &["png", "tif", "tiff"];
const MATRIX_EXTENSIONS: &[&str] = &["txt", "asc", "csv"];

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default()
}

/// Rescales 16-bit or float samples onto 0..=255 by their own min and max.
/// A constant image maps to 0.
fn stretch(values: impl Iterator<Item = f64> + Clone) -> Vec<u8> {
    let (lo, hi) = values
        .clone()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    values
        .map(|v| {
            if hi > lo {
                ((v - lo) / (hi - lo) * 255.0 + 0.5).floor() as u8
            } else {
                0
            }
        })
        .collect()
}

fn open_image(path: &Path) -> CliResult<DynamicImage> {
    image::open(path).map_err(|e| CliError::read(path, e))
}

/// Reads an 8-bit or 16-bit PNG/TIFF as grayscale. Colour images collapse to
/// luminance; 16-bit and float images are min-max stretched to 8 bits.
pub fn read_gray(path: &Path) -> CliResult<GrayImage> {
    let img = open_image(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match img {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) => {
            img.to_luma8().into_raw()
        }
        DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_)
        | DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_) => {
            let raw = img.to_luma16().into_raw();
            stretch(raw.iter().map(|&v| v as f64))
        }
        other => {
            let raw = other.to_luma32f().into_raw();
            stretch(raw.iter().map(|&v| v as f64))
        }
    };
    Ok(GrayImage::new(w, h, data)?)
}

/// Mask files are grayscale; pixels at or above 128 are foreground.
pub fn read_mask(path: &Path) -> CliResult<BinaryMask> {
    Ok(spmseg_core::image::gray_to_mask(&read_gray(path)?, 128))
}

/// Reads raw heights: a whitespace- or comma-separated matrix for `.txt`,
/// `.asc` and `.csv`; otherwise the luminance samples of an image, kept at
/// full 16-bit or float precision.
pub fn read_height_map(path: &Path) -> CliResult<HeightMap> {
    if MATRIX_EXTENSIONS.contains(&extension(path).as_str()) {
        return read_matrix(path);
    }
    let img = open_image(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) => {
            img.to_luma8().into_raw().into_iter().map(f64::from).collect()
        }
        DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_)
        | DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_) => img.to_luma16().into_raw().into_iter().map(f64::from).collect(),
        other => other.to_luma32f().into_raw().into_iter().map(f64::from).collect(),
    };
    Ok(HeightMap::new(w, h, data)?)
}

fn read_matrix(path: &Path) -> CliResult<HeightMap> {
    let file = fs::File::open(path).map_err(|e| CliError::read(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::read(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| CliError::Data(format!("{}:{}: `{t}` is not a number", path.display(), i + 1)))
            })
            .collect::<CliResult<Vec<f64>>>()?;
        rows.push(row);
    }
    let w = rows.first().map_or(0, Vec::len);
    if w == 0 || rows.iter().any(|r| r.len() != w) {
        return Err(CliError::Data(format!("{}: rows must be non-empty and equally long", path.display())));
    }
    let h = rows.len();
    Ok(HeightMap::new(w, h, rows.concat())?)
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::write(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::write(path, e))
}

pub fn encode_png(img: &GrayImage) -> CliResult<Vec<u8>> {
    let buf = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, img.data().to_vec())
        .ok_or_else(|| CliError::Internal("image buffer size mismatch".into()))?;
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| CliError::Internal(format!("png encoding failed: {e}")))?;
    Ok(out.into_inner())
}

pub fn write_gray(path: &Path, img: &GrayImage) -> CliResult<()> {
    write_file(path, &encode_png(img)?)
}

/// Foreground 255, background 0.
pub fn write_mask(path: &Path, m: &BinaryMask) -> CliResult<()> {
    write_gray(path, &spmseg_core::image::mask_to_gray(m))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    write_file(path, bytes)
}

pub fn save_weights(path: &Path, w: &ModelWeights, optimizer: &str) -> CliResult<()> {
    write_file(path, &weights::to_bytes(w, optimizer))
}

/// Loads a weight file, optionally checking it against an architecture.
pub fn load_weights(path: &Path, expect: Option<&UNetSpec>) -> CliResult<ModelWeights> {
    let bytes = fs::read(path).map_err(|e| CliError::read(path, e))?;
    let decoded = match expect {
        Some(spec) => weights::from_bytes_for(&bytes, spec),
        None => weights::from_bytes(&bytes),
    }
    .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(decoded.weights)
}

/// One JSON object per line; blank lines are skipped.
pub fn read_records(path: &Path) -> CliResult<Vec<DatasetRecord>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn records_to_jsonl(records: &[DatasetRecord]) -> CliResult<Vec<u8>> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| CliError::Internal(e.to_string()))?;
        out.write_all(b"\n").map_err(|e| CliError::Internal(e.to_string()))?;
    }
    Ok(out)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::read(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn is_mask_name(path: &Path) -> bool {
    stem(path).ends_with("_mask")
}

/// Expands directories into their image files (sorted by name) and checks
/// that plain files exist. With `skip_masks`, files named `*_mask.*` inside
/// directories are left out; explicitly listed files are always kept.
pub fn expand_inputs(paths: &[PathBuf], extensions: &[&str], skip_masks: bool) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| CliError::read(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.is_file() && extensions.contains(&extension(f).as_str()))
                .filter(|f| !(skip_masks && is_mask_name(f)))
                .collect();
            found.sort();
            out.extend(found);
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            return Err(CliError::Data(format!("input {} does not exist", p.display())));
        }
    }
    if out.is_empty() {
        return Err(CliError::Data("no input files found".into()));
    }
    Ok(out)
}

pub fn image_inputs(paths: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    expand_inputs(paths, IMAGE_EXTENSIONS, true)
}

pub fn mask_inputs(paths: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    expand_inputs(paths, IMAGE_EXTENSIONS, false)
}

pub fn height_inputs(paths: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let all: Vec<&str> = IMAGE_EXTENSIONS.iter().chain(MATRIX_EXTENSIONS).copied().collect();
    expand_inputs(paths, &all, true)
}

/// File name without extension, used to name derived outputs.
pub fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

/// Finds the mask for `image` in `dir`: the stem with a `_mask` suffix,
/// else the same stem, as PNG or TIFF. The image itself never counts.
pub fn find_mask(dir: &Path, image: &Path) -> CliResult<PathBuf> {
    let s = stem(image);
    let own = fs::canonicalize(image).ok();
    for name in [format!("{s}_mask"), s.clone()] {
        for ext in IMAGE_EXTENSIONS {
            let p = dir.join(format!("{name}.{ext}"));
            if p.is_file() && (own.is_none() || fs::canonicalize(&p).ok() != own) {
                return Ok(p);
            }
        }
    }
    Err(CliError::Data(format!(
        "no mask for {} in {}",
        image.display(),
        dir.display()
    )))
}
