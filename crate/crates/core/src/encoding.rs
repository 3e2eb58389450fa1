//! Object-token construction: multi-scale RoI align over feature grids, a
//! sin-cos box embedding, and channel fusion of two encoder token grids.
//!
//! An object token is the mean-pooled RoI feature of a box plus the box's
//! positional embedding. Feature grids here are synthetic or loaded from
//! fixture files; no backbone is involved.

use std::f64::consts::PI;
use std::io::{self, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, Extent};

#[derive(Debug, Error)]
pub enum EncodingError {
    #[error("embedding dimension {0} is not a positive multiple of 8")]
    BadEmbeddingDim(usize),
    #[error("feature grid {h}x{w}x{d} expects {expected} values, got {got}")]
    GridShape {
        h: usize,
        w: usize,
        d: usize,
        expected: usize,
        got: usize,
    },
    #[error("feature grid contains a non-finite value")]
    NonFinite,
    #[error("stride must be finite and positive, got {0}")]
    BadStride(f64),
    #[error("pyramid must have at least one level with strictly increasing strides and equal channel counts")]
    BadPyramid,
    #[error("RoI align needs a positive-area box, got {0:?}")]
    ZeroAreaBox(BBox),
    #[error("RoI output size and samples per bin must be at least 1")]
    BadRoiConfig,
    #[error("box {0:?} lies outside the frame")]
    OutsideFrame(BBox),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("token count mismatch: {0} vs {1}")]
    TokenCountMismatch(usize, usize),
    #[error("positional embedding entries must be finite and within [-1, 1]")]
    EmbeddingOutOfRange,
    #[error("feature file unreadable")]
    Io(#[from] io::Error),
}

/// Dense `H x W x D` feature map; cell `(y, x)` covers pixels
/// `[x*stride, (x+1)*stride) x [y*stride, (y+1)*stride)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    height: usize,
    width: usize,
    channels: usize,
    stride: f64,
    values: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        stride: f64,
        values: Vec<f64>,
    ) -> Result<Self, EncodingError> {
        let expected = height * width * channels;
        if height == 0 || width == 0 || channels == 0 || values.len() != expected {
            return Err(EncodingError::GridShape {
                h: height,
                w: width,
                d: channels,
                expected,
                got: values.len(),
            });
        }
        if !(stride.is_finite() && stride > 0.0) {
            return Err(EncodingError::BadStride(stride));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EncodingError::NonFinite);
        }
        Ok(Self {
            height,
            width,
            channels,
            stride,
            values,
        })
    }

    /// Builds a grid from a function of `(y, x, channel)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        stride: f64,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self, EncodingError> {
        let mut values = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    values.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, stride, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn stride(&self) -> f64 {
        self.stride
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.values[(y * self.width + x) * self.channels + c]
    }

    /// `alpha * self + beta * other` on grids of identical shape.
    pub fn linear_combination(
        &self,
        alpha: f64,
        other: &FeatureGrid,
        beta: f64,
    ) -> Result<Self, EncodingError> {
        if (self.height, self.width, self.channels) != (other.height, other.width, other.channels) {
            return Err(EncodingError::DimensionMismatch(
                self.values.len(),
                other.values.len(),
            ));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| alpha * a + beta * b)
            .collect();
        Self::new(self.height, self.width, self.channels, self.stride, values)
    }

    /// Reads one grid record: `u32 H, u32 W, u32 D, f32 stride` followed by
    /// `H*W*D` `f32` values in `(y, x, channel)` order, all little-endian.
    pub fn read_from(reader: &mut impl Read) -> Result<Self, EncodingError> {
        let mut header = [0u8; 16];
        reader.read_exact(&mut header)?;
        let word = |i: usize| u32::from_le_bytes(header[4 * i..4 * i + 4].try_into().unwrap());
        let (h, w, d) = (word(0) as usize, word(1) as usize, word(2) as usize);
        let stride = f32::from_le_bytes(header[12..16].try_into().unwrap()) as f64;
        let n = h
            .checked_mul(w)
            .and_then(|v| v.checked_mul(d))
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "grid size overflows"))?;
        let mut raw = vec![0u8; n * 4];
        reader.read_exact(&mut raw)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Self::new(h, w, d, stride, values)
    }

    pub fn write_to(&self, writer: &mut impl Write) -> Result<(), EncodingError> {
        for v in [self.height, self.width, self.channels] {
            writer.write_all(&(v as u32).to_le_bytes())?;
        }
        writer.write_all(&(self.stride as f32).to_le_bytes())?;
        for v in &self.values {
            writer.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    /// Bilinear sample at continuous feature coordinates where integer
    /// positions are cell centers. Coordinates are clamped to the grid.
    fn bilinear(&self, y: f64, x: f64, out: &mut [f64], weight: f64) {
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y0 = y.floor() as usize;
        let x0 = x.floor() as usize;
        let y1 = (y0 + 1).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let ly = y - y0 as f64;
        let lx = x - x0 as f64;
        let corners = [
            (y0, x0, (1.0 - ly) * (1.0 - lx)),
            (y0, x1, (1.0 - ly) * lx),
            (y1, x0, ly * (1.0 - lx)),
            (y1, x1, ly * lx),
        ];
        for (yy, xx, w) in corners {
            if w == 0.0 {
                continue;
            }
            let base = (yy * self.width + xx) * self.channels;
            for (o, v) in out.iter_mut().zip(&self.values[base..base + self.channels]) {
                *o += weight * w * v;
            }
        }
    }
}

/// Multi-scale feature maps ordered by strictly increasing stride.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    levels: Vec<FeatureGrid>,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<FeatureGrid>) -> Result<Self, EncodingError> {
        let Some(first) = levels.first() else {
            return Err(EncodingError::BadPyramid);
        };
        let channels = first.channels;
        let ok = levels.iter().all(|l| l.channels == channels)
            && levels.windows(2).all(|w| w[0].stride < w[1].stride);
        if !ok {
            return Err(EncodingError::BadPyramid);
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[FeatureGrid] {
        &self.levels
    }

    pub fn channels(&self) -> usize {
        self.levels[0].channels
    }

    /// Loads consecutive grid records from one file.
    pub fn load(path: &Path) -> Result<Self, EncodingError> {
        let bytes = std::fs::read(path)?;
        let mut cursor = io::Cursor::new(bytes.as_slice());
        let mut levels = Vec::new();
        while (cursor.position() as usize) < bytes.len() {
            levels.push(FeatureGrid::read_from(&mut cursor)?);
        }
        Self::new(levels)
    }

    pub fn save(&self, path: &Path) -> Result<(), EncodingError> {
        let mut buf = Vec::new();
        for l in &self.levels {
            l.write_to(&mut buf)?;
        }
        std::fs::write(path, buf)?;
        Ok(())
    }
}

/// FPN level assignment:
/// `clamp(floor(log2(sqrt(area) / canonical_size) + canonical_level) - level_offset, 0, L-1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelRule {
    pub canonical_size: f64,
    pub canonical_level: f64,
    /// Pyramid level number of the finest grid (2 for a P2..P5 pyramid).
    pub level_offset: i64,
}

impl Default for LevelRule {
    fn default() -> Self {
        Self {
            canonical_size: 224.0,
            canonical_level: 4.0,
            level_offset: 2,
        }
    }
}

impl LevelRule {
    pub fn select(&self, b: &BBox, num_levels: usize) -> usize {
        let scale = b.area().max(f64::MIN_POSITIVE).sqrt();
        let level = (scale / self.canonical_size).log2() + self.canonical_level;
        let idx = level.floor() as i64 - self.level_offset;
        idx.clamp(0, num_levels as i64 - 1) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiAlignConfig {
    pub output_size: usize,
    pub samples_per_bin: usize,
    pub level_rule: LevelRule,
}

impl Default for RoiAlignConfig {
    fn default() -> Self {
        Self {
            output_size: 7,
            samples_per_bin: 2,
            level_rule: LevelRule::default(),
        }
    }
}

/// `P x P x D` patch cut out of one pyramid level.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiPatch {
    pub size: usize,
    pub channels: usize,
    pub values: Vec<f64>,
    pub source: BBox,
    pub level: usize,
}

impl RoiPatch {
    pub fn get(&self, py: usize, px: usize, c: usize) -> f64 {
        self.values[(py * self.size + px) * self.channels + c]
    }

    pub fn mean_pool(&self) -> Vec<f64> {
        let cells = (self.size * self.size) as f64;
        let mut out = vec![0.0; self.channels];
        for cell in self.values.chunks_exact(self.channels) {
            for (o, v) in out.iter_mut().zip(cell) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= cells);
        out
    }
}

/// Bilinear RoI align on a single grid.
pub fn roi_align_grid(
    grid: &FeatureGrid,
    b: &BBox,
    output_size: usize,
    samples_per_bin: usize,
) -> Result<Vec<f64>, EncodingError> {
    if output_size == 0 || samples_per_bin == 0 {
        return Err(EncodingError::BadRoiConfig);
    }
    if b.area() <= 0.0 {
        return Err(EncodingError::ZeroAreaBox(*b));
    }
    let d = grid.channels;
    let x0 = b.xmin / grid.stride - 0.5;
    let y0 = b.ymin / grid.stride - 0.5;
    let bin_w = b.width() / grid.stride / output_size as f64;
    let bin_h = b.height() / grid.stride / output_size as f64;
    let s = samples_per_bin as f64;
    let weight = 1.0 / (s * s);
    let mut out = vec![0.0; output_size * output_size * d];
    for py in 0..output_size {
        for px in 0..output_size {
            let cell = &mut out[(py * output_size + px) * d..(py * output_size + px + 1) * d];
            for iy in 0..samples_per_bin {
                let y = y0 + py as f64 * bin_h + (iy as f64 + 0.5) * bin_h / s;
                for ix in 0..samples_per_bin {
                    let x = x0 + px as f64 * bin_w + (ix as f64 + 0.5) * bin_w / s;
                    grid.bilinear(y, x, cell, weight);
                }
            }
        }
    }
    Ok(out)
}

/// Multi-scale RoI align: picks a pyramid level with the FPN rule, then
/// samples `samples_per_bin^2` bilinear points per output bin and averages.
pub fn roi_align(
    pyr: &FeaturePyramid,
    b: &BBox,
    cfg: &RoiAlignConfig,
) -> Result<RoiPatch, EncodingError> {
    if b.area() <= 0.0 {
        return Err(EncodingError::ZeroAreaBox(*b));
    }
    let level = cfg.level_rule.select(b, pyr.levels.len());
    let values = roi_align_grid(&pyr.levels[level], b, cfg.output_size, cfg.samples_per_bin)?;
    Ok(RoiPatch {
        size: cfg.output_size,
        channels: pyr.channels(),
        values,
        source: *b,
        level,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionalEmbedding(Vec<f64>);

impl PositionalEmbedding {
    /// Wraps raw values; every entry must be finite and within `[-1, 1]`.
    pub fn from_values(values: Vec<f64>) -> Result<Self, EncodingError> {
        if values.iter().all(|v| v.is_finite() && v.abs() <= 1.0) {
            Ok(Self(values))
        } else {
            Err(EncodingError::EmbeddingOutOfRange)
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Sin-cos box embedding parameters. Coordinates are normalized by the frame,
/// multiplied by `scale`, then divided by `temperature^(2k / (dim/4))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeConfig {
    pub dim: usize,
    pub temperature: f64,
    pub scale: f64,
}

impl PeConfig {
    pub fn with_dim(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }
}

impl Default for PeConfig {
    fn default() -> Self {
        Self {
            dim: 256,
            temperature: 10000.0,
            scale: 2.0 * PI,
        }
    }
}

/// Channel layout: four consecutive `dim/4` blocks for xmin, ymin, xmax, ymax;
/// inside a block entries alternate `sin, cos` per frequency.
pub fn sincos_pe(
    b: &BBox,
    frame: &Extent,
    cfg: &PeConfig,
) -> Result<PositionalEmbedding, EncodingError> {
    if cfg.dim == 0 || !cfg.dim.is_multiple_of(8) {
        return Err(EncodingError::BadEmbeddingDim(cfg.dim));
    }
    if !b.is_inside(frame) {
        return Err(EncodingError::OutsideFrame(*b));
    }
    let block = cfg.dim / 4;
    let coords = [
        b.xmin / frame.width,
        b.ymin / frame.height,
        b.xmax / frame.width,
        b.ymax / frame.height,
    ];
    let mut out = Vec::with_capacity(cfg.dim);
    for c in coords {
        for k in 0..block / 2 {
            let freq = cfg.temperature.powf(2.0 * k as f64 / block as f64);
            let angle = c * cfg.scale / freq;
            out.push(angle.sin());
            out.push(angle.cos());
        }
    }
    Ok(PositionalEmbedding(out))
}

/// Per-box LLM input vector: pooled RoI content plus positional embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectToken {
    pub values: Vec<f64>,
    pub source: BBox,
    pub level: usize,
}

pub fn assemble_object_token(
    patch: &RoiPatch,
    pe: &PositionalEmbedding,
) -> Result<ObjectToken, EncodingError> {
    let content = patch.mean_pool();
    if content.len() != pe.dim() {
        return Err(EncodingError::DimensionMismatch(content.len(), pe.dim()));
    }
    let values = content
        .iter()
        .zip(pe.values())
        .map(|(c, p)| c + p)
        .collect();
    Ok(ObjectToken {
        values,
        source: patch.source,
        level: patch.level,
    })
}

/// Encodes every box independently; output order follows input order.
pub fn encode_objects(
    pyr: &FeaturePyramid,
    boxes: &[BBox],
    frame: &Extent,
    roi: &RoiAlignConfig,
    pe: &PeConfig,
) -> Result<Vec<ObjectToken>, EncodingError> {
    if pe.dim != pyr.channels() {
        return Err(EncodingError::DimensionMismatch(pyr.channels(), pe.dim));
    }
    boxes
        .par_iter()
        .map(|b| {
            let patch = roi_align(pyr, b, roi)?;
            assemble_object_token(&patch, &sincos_pe(b, frame, pe)?)
        })
        .collect()
}

/// Flattened `count x channels` token matrix from one vision encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    count: usize,
    channels: usize,
    values: Vec<f64>,
}

impl TokenGrid {
    pub fn new(count: usize, channels: usize, values: Vec<f64>) -> Result<Self, EncodingError> {
        if values.len() != count * channels {
            return Err(EncodingError::DimensionMismatch(
                values.len(),
                count * channels,
            ));
        }
        Ok(Self {
            count,
            channels,
            values,
        })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn token(&self, i: usize) -> &[f64] {
        &self.values[i * self.channels..(i + 1) * self.channels]
    }

    /// Splits every token at channel `at`, undoing [`fuse_dual_features`].
    pub fn split_channels(&self, at: usize) -> Result<(TokenGrid, TokenGrid), EncodingError> {
        if at > self.channels {
            return Err(EncodingError::DimensionMismatch(at, self.channels));
        }
        let mut left = Vec::with_capacity(self.count * at);
        let mut right = Vec::with_capacity(self.count * (self.channels - at));
        for i in 0..self.count {
            let t = self.token(i);
            left.extend_from_slice(&t[..at]);
            right.extend_from_slice(&t[at..]);
        }
        Ok((
            TokenGrid::new(self.count, at, left)?,
            TokenGrid::new(self.count, self.channels - at, right)?,
        ))
    }
}

/// Concatenates low- and high-resolution tokens along channels. The encoders
/// are expected to emit the same token count.
pub fn fuse_dual_features(low: &TokenGrid, high: &TokenGrid) -> Result<TokenGrid, EncodingError> {
    if low.count != high.count {
        return Err(EncodingError::TokenCountMismatch(low.count, high.count));
    }
    let channels = low.channels + high.channels;
    let mut values = Vec::with_capacity(low.count * channels);
    for i in 0..low.count {
        values.extend_from_slice(low.token(i));
        values.extend_from_slice(high.token(i));
    }
    TokenGrid::new(low.count, channels, values)
}
