//! Image containers shared by every stage of the pipeline.
//!
//! All grids are row-major with the origin at the top-left corner: `x`
//! grows to the right, `y` grows downwards and the sample at `(x, y)` lives
//! at index `y * width + x`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

fn check_len(width: usize, height: usize, len: usize) -> Result<()> {
    if width.checked_mul(height) != Some(len) {
        return Err(Error::InvalidData(format!(
            "buffer of length {len} does not match {width}x{height}"
        )));
    }
    Ok(())
}

/// Maps a possibly out-of-range coordinate back into `0..n` by mirror
/// reflection with the edge sample repeated (`cba|abc|cba`). The pattern is
/// periodic with period `2n`, so arbitrarily large offsets are valid.
pub(crate) fn mirror_index(i: isize, n: usize) -> usize {
    debug_assert!(n > 0);
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        period as usize - 1 - m
    }
}

/// Raw scan heights before quantisation.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl HeightMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_len(width, height, data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite height at index {i}"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub(crate) fn from_parts_unchecked(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn transpose(&self) -> HeightMap {
        let mut data = Vec::with_capacity(self.data.len());
        for x in 0..self.width {
            for y in 0..self.height {
                data.push(self.get(x, y));
            }
        }
        HeightMap::from_parts_unchecked(self.height, self.width, data)
    }
}

/// 8-bit gray image, the working representation after normalisation.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        check_len(width, height, data.len())?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    /// Sample with mirror-reflected coordinates.
    pub(crate) fn get_mirrored(&self, x: isize, y: isize) -> u8 {
        self.get(mirror_index(x, self.width), mirror_index(y, self.height))
    }

    pub fn map(&self, mut f: impl FnMut(u8) -> u8) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn flip_horizontal(&self) -> GrayImage {
        let w = self.width;
        GrayImage::from_fn(w, self.height, |x, y| self.get(w - 1 - x, y))
    }

    pub fn flip_vertical(&self) -> GrayImage {
        let h = self.height;
        GrayImage::from_fn(self.width, h, |x, y| self.get(x, h - 1 - y))
    }

    /// Rotates a quarter turn clockwise.
    pub fn rotate90(&self) -> GrayImage {
        let h = self.height;
        GrayImage::from_fn(h, self.width, |x, y| self.get(y, h - 1 - x))
    }

    /// Nearest-neighbour resampling to `width` x `height`.
    pub fn resize_nearest(&self, width: usize, height: usize) -> GrayImage {
        if (width, height) == self.dims() {
            return self.clone();
        }
        let xs = nearest_indices(self.width, width);
        let ys = nearest_indices(self.height, height);
        GrayImage::from_fn(width, height, |x, y| self.get(xs[x], ys[y]))
    }

    /// Copies the `w` x `h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<GrayImage> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::param(
                "crop",
                format!(
                    "window {w}x{h}+{x0}+{y0} exceeds {}x{}",
                    self.width, self.height
                ),
            ));
        }
        Ok(GrayImage::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y)))
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as u64).sum::<u64>() as f64 / self.data.len() as f64
    }
}

/// Source index for each destination index under nearest-neighbour
/// resampling. Sample centres are aligned, so an exact 2x upscale maps
/// destination `2i` and `2i + 1` onto source `i`.
pub(crate) fn nearest_indices(src: usize, dst: usize) -> Vec<usize> {
    (0..dst)
        .map(|i| ((i * src) / dst).min(src.saturating_sub(1)))
        .collect()
}

/// Binary segmentation. `true` is foreground (particle), `false` is
/// substrate.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        check_len(width, height, data.len())?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub(crate) fn get_mirrored(&self, x: isize, y: isize) -> bool {
        self.get(mirror_index(x, self.width), mirror_index(y, self.height))
    }

    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|b| !b).collect(),
        }
    }

    pub fn flip_horizontal(&self) -> BinaryMask {
        let w = self.width;
        BinaryMask::from_fn(w, self.height, |x, y| self.get(w - 1 - x, y))
    }

    pub fn flip_vertical(&self) -> BinaryMask {
        let h = self.height;
        BinaryMask::from_fn(self.width, h, |x, y| self.get(x, h - 1 - y))
    }

    /// Rotates a quarter turn clockwise.
    pub fn rotate90(&self) -> BinaryMask {
        let h = self.height;
        BinaryMask::from_fn(h, self.width, |x, y| self.get(y, h - 1 - x))
    }

    pub fn resize_nearest(&self, width: usize, height: usize) -> BinaryMask {
        if (width, height) == self.dims() {
            return self.clone();
        }
        let xs = nearest_indices(self.width, width);
        let ys = nearest_indices(self.height, height);
        BinaryMask::from_fn(width, height, |x, y| self.get(xs[x], ys[y]))
    }
}

/// `true` becomes 255, `false` becomes 0.
pub fn mask_to_gray(m: &BinaryMask) -> GrayImage {
    GrayImage {
        width: m.width,
        height: m.height,
        data: m.data.iter().map(|&b| if b { 255 } else { 0 }).collect(),
    }
}

/// Pixels at or above `cut` become foreground.
pub fn gray_to_mask(img: &GrayImage, cut: u8) -> BinaryMask {
    BinaryMask {
        width: img.width,
        height: img.height,
        data: img.data.iter().map(|&v| v >= cut).collect(),
    }
}

pub(crate) fn ensure_same_dims(expected: (usize, usize), found: (usize, usize)) -> Result<()> {
    if expected != found {
        return Err(Error::SizeMismatch { expected, found });
    }
    Ok(())
}
