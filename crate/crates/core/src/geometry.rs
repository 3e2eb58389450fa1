//! Box algebra, overlap measures and coordinate quantization.
//!
//! All boxes are continuous `xyxy` rectangles in pixel units with the origin
//! at the top-left corner of the image.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid box [{0}, {1}, {2}, {3}]: coordinates must be finite with min <= max")]
    InvalidBox(f64, f64, f64, f64),
    #[error("invalid extent {0}x{1}: width and height must be finite and positive")]
    InvalidExtent(f64, f64),
    #[error("generalized IoU is undefined when both boxes have zero area")]
    DegenerateEnclosure,
    #[error("box [{0}, {1}, {2}, {3}] lies outside the {4}x{5} frame")]
    OutsideFrame(f64, f64, f64, f64, f64, f64),
    #[error("bin count must be at least 2, got {0}")]
    TooFewBins(u32),
}

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl BBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self, GeometryError> {
        let b = Self {
            xmin,
            ymin,
            xmax,
            ymax,
        };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(GeometryError::InvalidBox(xmin, ymin, xmax, ymax))
        }
    }

    /// Builds a box from COCO-style `(x, y, width, height)` storage.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        if !(w >= 0.0 && h >= 0.0) {
            return Err(GeometryError::InvalidBox(x, y, x + w, y + h));
        }
        Self::new(x, y, x + w, y + h)
    }

    pub fn is_valid(&self) -> bool {
        let c = self.to_array();
        c.iter().all(|v| v.is_finite()) && self.xmin <= self.xmax && self.ymin <= self.ymax
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.xmin, self.ymin, self.xmax, self.ymax]
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [self.xmin, self.ymin, self.width(), self.height()]
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        area(self)
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax))
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            xmin: self.xmin + dx,
            ymin: self.ymin + dy,
            xmax: self.xmax + dx,
            ymax: self.ymax + dy,
        }
    }

    /// Smallest box containing both inputs.
    pub fn enclosing(&self, other: &BBox) -> BBox {
        BBox {
            xmin: self.xmin.min(other.xmin),
            ymin: self.ymin.min(other.ymin),
            xmax: self.xmax.max(other.xmax),
            ymax: self.ymax.max(other.ymax),
        }
    }

    pub fn is_inside(&self, frame: &Extent) -> bool {
        self.xmin >= 0.0
            && self.ymin >= 0.0
            && self.xmax <= frame.width
            && self.ymax <= frame.height
    }

    /// Clips the box to the frame rectangle.
    pub fn clip_to(&self, frame: &Extent) -> BBox {
        let cx = |v: f64| v.clamp(0.0, frame.width);
        let cy = |v: f64| v.clamp(0.0, frame.height);
        BBox {
            xmin: cx(self.xmin),
            ymin: cy(self.ymin),
            xmax: cx(self.xmax),
            ymax: cy(self.ymax),
        }
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = GeometryError;

    fn try_from(c: [f64; 4]) -> Result<Self, Self::Error> {
        BBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

/// Image frame dimensions in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "(f64, f64)", into = "(f64, f64)")]
pub struct Extent {
    pub width: f64,
    pub height: f64,
}

impl Extent {
    pub fn new(width: f64, height: f64) -> Result<Self, GeometryError> {
        if width.is_finite() && height.is_finite() && width > 0.0 && height > 0.0 {
            Ok(Self { width, height })
        } else {
            Err(GeometryError::InvalidExtent(width, height))
        }
    }

    pub fn square(side: f64) -> Result<Self, GeometryError> {
        Self::new(side, side)
    }

    pub fn full_box(&self) -> BBox {
        BBox {
            xmin: 0.0,
            ymin: 0.0,
            xmax: self.width,
            ymax: self.height,
        }
    }
}

impl TryFrom<(f64, f64)> for Extent {
    type Error = GeometryError;

    fn try_from((w, h): (f64, f64)) -> Result<Self, Self::Error> {
        Extent::new(w, h)
    }
}

impl From<Extent> for (f64, f64) {
    fn from(e: Extent) -> Self {
        (e.width, e.height)
    }
}

pub fn area(b: &BBox) -> f64 {
    (b.xmax - b.xmin) * (b.ymax - b.ymin)
}

fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    let w = (a.xmax.min(b.xmax) - a.xmin.max(b.xmin)).max(0.0);
    let h = (a.ymax.min(b.ymax) - a.ymin.max(b.ymin)).max(0.0);
    w * h
}

/// Intersection over union. A zero union yields 0 rather than an error so
/// that degenerate ground truth never aborts an evaluation.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Generalized IoU: `iou - |C \ (A u B)| / |C|` with `C` the enclosing box.
pub fn giou(a: &BBox, b: &BBox) -> Result<f64, GeometryError> {
    let area_a = area(a);
    let area_b = area(b);
    if area_a <= 0.0 && area_b <= 0.0 {
        return Err(GeometryError::DegenerateEnclosure);
    }
    let inter = intersection_area(a, b);
    let union = area_a + area_b - inter;
    let enclosing = area(&a.enclosing(b));
    let overlap = if union <= 0.0 { 0.0 } else { inter / union };
    Ok(overlap - (enclosing - union) / enclosing)
}

/// Sum of absolute coordinate differences, x normalized by frame width and y
/// by frame height.
pub fn l1_distance(a: &BBox, b: &BBox, frame: &Extent) -> f64 {
    (a.xmin - b.xmin).abs() / frame.width
        + (a.ymin - b.ymin).abs() / frame.height
        + (a.xmax - b.xmax).abs() / frame.width
        + (a.ymax - b.ymax).abs() / frame.height
}

/// Box expressed as coordinate-bin indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuantizedBox {
    pub indices: [u32; 4],
    pub bins: u32,
}

fn bin_index(coord: f64, dim: f64, bins: u32) -> u32 {
    let raw = (coord / dim * bins as f64).floor();
    raw.clamp(0.0, (bins - 1) as f64) as u32
}

fn bin_center(index: u32, dim: f64, bins: u32) -> f64 {
    (index as f64 + 0.5) * dim / bins as f64
}

/// Maps each coordinate to `floor(coord / dim * bins)`, clamped to the last bin.
pub fn quantize(b: &BBox, frame: &Extent, bins: u32) -> Result<QuantizedBox, GeometryError> {
    if bins < 2 {
        return Err(GeometryError::TooFewBins(bins));
    }
    if !b.is_inside(frame) {
        return Err(GeometryError::OutsideFrame(
            b.xmin,
            b.ymin,
            b.xmax,
            b.ymax,
            frame.width,
            frame.height,
        ));
    }
    Ok(QuantizedBox {
        indices: [
            bin_index(b.xmin, frame.width, bins),
            bin_index(b.ymin, frame.height, bins),
            bin_index(b.xmax, frame.width, bins),
            bin_index(b.ymax, frame.height, bins),
        ],
        bins,
    })
}

/// Inverse of [`quantize`]: every index maps to the center of its bin, which
/// bounds the per-coordinate round-trip error by half a bin.
pub fn dequantize(q: &QuantizedBox, frame: &Extent) -> BBox {
    let [x0, y0, x1, y1] = q.indices;
    BBox {
        xmin: bin_center(x0, frame.width, q.bins),
        ymin: bin_center(y0, frame.height, q.bins),
        xmax: bin_center(x1, frame.width, q.bins),
        ymax: bin_center(y1, frame.height, q.bins),
    }
}

/// `dequantize(quantize(b))`.
pub fn round_trip(b: &BBox, frame: &Extent, bins: u32) -> Result<BBox, GeometryError> {
    Ok(dequantize(&quantize(b, frame, bins)?, frame))
}
