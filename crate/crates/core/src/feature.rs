//! Image loading and HOG feature extraction.
//!
//! Every image is turned into a globally L1-normalized histogram of oriented
//! gradients so chi-square distances between any two images are commensurable.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Luminance image with row-major pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!("zero dimension {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidImage(format!("{} pixels for a {width}x{height} image", pixels.len())));
        }
        if let Some(bad) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidImage(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self { width, height, pixels })
    }

    /// Builds an image from a function of `(x, y)`; values are clamped to `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// The image rotated by 180 degrees.
    pub fn rotate180(&self) -> Self {
        let mut pixels = self.pixels.clone();
        pixels.reverse();
        Self { width: self.width, height: self.height, pixels }
    }

    /// Encodes the image as an 8-bit binary PGM (P5).
    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().map(|p| (p * 255.0).round() as u8));
        out
    }
}

/// HOG configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HogParams {
    /// Pixels per cell side.
    pub cell_size: usize,
    /// Cells per block side. Blocks slide with a stride of one cell.
    pub block_size: usize,
    /// Orientation bins (N).
    pub bins: usize,
    /// Orientations over 360 degrees instead of 180.
    pub signed_gradients: bool,
}

impl Default for HogParams {
    fn default() -> Self {
        Self { cell_size: 8, block_size: 2, bins: 9, signed_gradients: false }
    }
}

/// Per-block L2 normalization epsilon.
pub const BLOCK_EPSILON: f64 = 1e-6;

impl HogParams {
    pub fn validate(&self) -> Result<()> {
        if self.cell_size < 2 {
            return Err(Error::InvalidHogParams(format!("cell_size {} < 2", self.cell_size)));
        }
        if self.block_size < 1 {
            return Err(Error::InvalidHogParams("block_size must be >= 1".into()));
        }
        if self.bins < 2 {
            return Err(Error::InvalidHogParams(format!("bins {} < 2", self.bins)));
        }
        Ok(())
    }

    /// Descriptor length for an image of the given size (after center-cropping).
    pub fn descriptor_len(&self, width: usize, height: usize) -> Option<usize> {
        let cells_x = width / self.cell_size;
        let cells_y = height / self.cell_size;
        if cells_x < self.block_size || cells_y < self.block_size {
            return None;
        }
        let blocks = (cells_x - self.block_size + 1) * (cells_y - self.block_size + 1);
        Some(blocks * self.block_size * self.block_size * self.bins)
    }
}

/// Extraction geometry: cropped image width (U), height (V) and bin count (N).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Geometry {
    pub width: usize,
    pub height: usize,
    pub bins: usize,
}

impl Geometry {
    pub fn area(&self) -> usize {
        self.width * self.height
    }
}

impl std::fmt::Display for Geometry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "U={} V={} N={}", self.width, self.height, self.bins)
    }
}

/// Non-negative, L1-normalized histogram feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
    geometry: Geometry,
}

impl FeatureVector {
    /// Wraps already-normalized values. Rejects negative or non-finite entries
    /// and vectors whose mass is not 1 within `1e-9`.
    pub fn new(values: Vec<f64>, geometry: Geometry) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Dataset("empty feature vector".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Dataset("feature values must be finite and non-negative".into()));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Dataset(format!("feature vector mass {sum} is not 1")));
        }
        Ok(Self { values, geometry })
    }

    /// Clips negatives to zero and L1-normalizes; an all-zero input becomes uniform.
    pub fn normalized(mut values: Vec<f64>, geometry: Geometry) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Dataset("empty feature vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature value"));
        }
        for v in values.iter_mut() {
            *v = v.max(0.0);
        }
        l1_normalize(&mut values);
        Ok(Self { values, geometry })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn l1_normalize(values: &mut [f64]) {
    let sum: f64 = values.iter().sum();
    if sum > 0.0 {
        for v in values.iter_mut() {
            *v /= sum;
        }
    } else {
        let uniform = 1.0 / values.len() as f64;
        values.iter_mut().for_each(|v| *v = uniform);
    }
}

/// A feature vector with its class label and source path.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVector {
    pub label: String,
    pub path: String,
    pub vector: FeatureVector,
}

/// Computes the HOG descriptor of `img`.
///
/// The image is center-cropped to a multiple of `cell_size`. Gradients use the
/// `[-1, 0, 1]` kernel with edge replication and each pixel votes its gradient
/// magnitude into exactly one orientation bin (bin 0 starts at the horizontal
/// gradient direction). Blocks of `block_size x block_size` cells slide by one
/// cell, each L2-normalized with [`BLOCK_EPSILON`]; the concatenation is then
/// L1-normalized, falling back to the uniform vector when it has no mass.
pub fn extract_hog(img: &GrayImage, params: &HogParams) -> Result<FeatureVector> {
    params.validate()?;
    let cs = params.cell_size;
    let cells_x = img.width / cs;
    let cells_y = img.height / cs;
    if cells_x < params.block_size || cells_y < params.block_size {
        return Err(Error::ImageTooSmall { width: img.width, height: img.height, block_px: params.block_size * cs });
    }
    let (cw, ch) = (cells_x * cs, cells_y * cs);
    let (x0, y0) = ((img.width - cw) / 2, (img.height - ch) / 2);
    let px = |x: usize, y: usize| img.get(x0 + x, y0 + y);

    let bins = params.bins;
    let range = if params.signed_gradients { std::f64::consts::TAU } else { std::f64::consts::PI };
    let mut cells = vec![0.0f64; cells_x * cells_y * bins];
    for y in 0..ch {
        let (up, down) = (y.saturating_sub(1), (y + 1).min(ch - 1));
        for x in 0..cw {
            let (left, right) = (x.saturating_sub(1), (x + 1).min(cw - 1));
            let gx = px(right, y) - px(left, y);
            let gy = px(x, down) - px(x, up);
            let magnitude = gx.hypot(gy);
            if magnitude == 0.0 {
                continue;
            }
            let angle = gy.atan2(gx).rem_euclid(range);
            let bin = ((angle / range * bins as f64) as usize).min(bins - 1);
            let cell = (y / cs) * cells_x + x / cs;
            cells[cell * bins + bin] += magnitude;
        }
    }

    let bs = params.block_size;
    let block_len = bs * bs * bins;
    let (blocks_x, blocks_y) = (cells_x - bs + 1, cells_y - bs + 1);
    let mut values = Vec::with_capacity(blocks_x * blocks_y * block_len);
    let mut block = Vec::with_capacity(block_len);
    for by in 0..blocks_y {
        for bx in 0..blocks_x {
            block.clear();
            for cy in by..by + bs {
                for cx in bx..bx + bs {
                    let cell = cy * cells_x + cx;
                    block.extend_from_slice(&cells[cell * bins..(cell + 1) * bins]);
                }
            }
            let norm = (block.iter().map(|v| v * v).sum::<f64>() + BLOCK_EPSILON * BLOCK_EPSILON).sqrt();
            values.extend(block.iter().map(|v| v / norm));
        }
    }
    l1_normalize(&mut values);
    Ok(FeatureVector { values, geometry: Geometry { width: cw, height: ch, bins } })
}

/// Loads an image as luminance. Binary and ASCII PGM/PPM are decoded
/// natively; PNG and JPEG go through the `image` crate. RGB is converted with
/// `0.299 R + 0.587 G + 0.114 B`.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() >= 2 && bytes[0] == b'P' && matches!(bytes[1], b'2' | b'3' | b'5' | b'6') {
        return decode_pnm(&bytes).map_err(|reason| Error::MalformedImage { path: path.to_path_buf(), reason });
    }
    let format = image::guess_format(&bytes).map_err(|_| Error::UnsupportedFormat(path.display().to_string()))?;
    let decoded = image::load_from_memory_with_format(&bytes, format)
        .map_err(|e| Error::MalformedImage { path: path.to_path_buf(), reason: e.to_string() })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let pixels = match decoded {
        image::DynamicImage::ImageLuma8(g) => g.pixels().map(|p| p[0] as f64 / 255.0).collect(),
        d if !d.color().has_color() => d.to_luma16().pixels().map(|p| p[0] as f64 / 65535.0).collect(),
        d => d
            .to_rgb16()
            .pixels()
            .map(|p| luma(p[0] as f64 / 65535.0, p[1] as f64 / 65535.0, p[2] as f64 / 65535.0))
            .collect(),
    };
    GrayImage::new(w, h, pixels)
}

#[inline]
fn luma(r: f64, g: f64, b: f64) -> f64 {
    (0.299 * r + 0.587 * g + 0.114 * b).clamp(0.0, 1.0)
}

struct PnmCursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl PnmCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.data.len() {
            match self.data[self.pos] {
                b'#' => {
                    while self.pos < self.data.len() && self.data[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self) -> Result<usize, String> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.data.len() && self.data[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.data[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("expected a number at byte {start}"))
    }
}

fn decode_pnm(data: &[u8]) -> Result<GrayImage, String> {
    let kind = data[1];
    let mut cur = PnmCursor { data, pos: 2 };
    let width = cur.number()?;
    let height = cur.number()?;
    let maxval = cur.number()?;
    if width == 0 || height == 0 {
        return Err(format!("zero dimension {width}x{height}"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format!("invalid maxval {maxval}"));
    }
    let channels = if matches!(kind, b'3' | b'6') { 3 } else { 1 };
    let count = width * height * channels;
    let samples: Vec<usize> = if matches!(kind, b'5' | b'6') {
        // exactly one whitespace byte separates the header from the raster
        if cur.pos >= data.len() || !data[cur.pos].is_ascii_whitespace() {
            return Err("missing raster separator".into());
        }
        let raster = &data[cur.pos + 1..];
        let wide = maxval > 255;
        let need = count * if wide { 2 } else { 1 };
        if raster.len() < need {
            return Err(format!("truncated raster: {} of {need} bytes", raster.len()));
        }
        if wide {
            raster[..need].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as usize).collect()
        } else {
            raster[..need].iter().map(|&b| b as usize).collect()
        }
    } else {
        (0..count).map(|_| cur.number()).collect::<Result<_, _>>()?
    };
    let scale = maxval as f64;
    let norm = |v: usize| (v.min(maxval) as f64 / scale).clamp(0.0, 1.0);
    let pixels = if channels == 3 {
        samples.chunks_exact(3).map(|c| luma(norm(c[0]), norm(c[1]), norm(c[2]))).collect()
    } else {
        samples.into_iter().map(norm).collect()
    };
    GrayImage::new(width, height, pixels).map_err(|e| e.to_string())
}

/// Extracts every readable image under `<dir>/<class_label>/`.
///
/// Records come back ordered lexicographically by path. Files that cannot be
/// decoded as images are skipped; a class left with no images is an error.
pub fn extract_directory(dir: impl AsRef<Path>, params: &HogParams) -> Result<Vec<LabeledVector>> {
    params.validate()?;
    let dir = dir.as_ref();
    let mut classes: Vec<(String, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            let label = entry.file_name().to_string_lossy().into_owned();
            classes.push((label, path));
        }
    }
    if classes.is_empty() {
        return Err(Error::Dataset(format!("{} contains no class directories", dir.display())));
    }
    classes.sort_by(|a, b| a.1.cmp(&b.1));

    let mut files: Vec<(String, PathBuf)> = Vec::new();
    for (label, class_dir) in &classes {
        let mut class_files = Vec::new();
        for entry in fs::read_dir(class_dir).map_err(|e| Error::io(class_dir, e))? {
            let path = entry.map_err(|e| Error::io(class_dir, e))?.path();
            if path.is_file() {
                class_files.push(path);
            }
        }
        class_files.sort();
        files.extend(class_files.into_iter().map(|p| (label.clone(), p)));
    }
    files.sort_by(|a, b| a.1.cmp(&b.1));

    let extracted: Vec<Option<LabeledVector>> = files
        .par_iter()
        .map(|(label, path)| {
            let img = match load_image(path) {
                Ok(img) => img,
                Err(
                    Error::Io { .. }
                    | Error::UnsupportedFormat(_)
                    | Error::MalformedImage { .. }
                    | Error::InvalidImage(_),
                ) => return Ok(None),
                Err(e) => return Err(e),
            };
            let vector = extract_hog(&img, params)?;
            Ok(Some(LabeledVector { label: label.clone(), path: path.display().to_string(), vector }))
        })
        .collect::<Result<_>>()?;
    let records: Vec<LabeledVector> = extracted.into_iter().flatten().collect();

    for (label, _) in &classes {
        if !records.iter().any(|r| &r.label == label) {
            return Err(Error::Dataset(format!("class '{label}' has no readable images")));
        }
    }
    Ok(records)
}
