//! Overlap and correctness metrics behind all answer rewards and quality
//! thresholds: IoU for boxes, temporal IoU for segments, character-index F1
//! for text spans, Dice for pixel masks, and the composite segmentation
//! score over box-derived masks and point-prompt consistency.
//!
//! Conventions the underlying formulas leave open: F1 and Dice are 1.0 when
//! both sides are empty, so "nothing manipulated" predicted against "nothing
//! manipulated" scores perfectly.

use std::collections::BTreeSet;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::types::{hex_decode, hex_encode};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("invalid segment: {0}")]
    InvalidSegment(String),
    #[error("mask dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("point list is empty")]
    EmptyPointList,
}

/// Axis-aligned box in normalized coordinates, `x1 < x2`, `y1 < y2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Rect {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Rect, MetricError> {
        let r = Rect { x1, y1, x2, y2 };
        for v in [x1, y1, x2, y2] {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(MetricError::InvalidBox(format!("coordinate {v} out of range")));
            }
        }
        if x1 >= x2 || y1 >= y2 {
            return Err(MetricError::InvalidBox("expected x1<x2 and y1<y2".into()));
        }
        Ok(r)
    }

    pub fn from_array(a: [f64; 4]) -> Result<Rect, MetricError> {
        Rect::new(a[0], a[1], a[2], a[3])
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }
}

/// Temporal interval in normalized time, `t1 < t2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub t1: f64,
    pub t2: f64,
}

impl Segment {
    pub fn new(t1: f64, t2: f64) -> Result<Segment, MetricError> {
        for v in [t1, t2] {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(MetricError::InvalidSegment(format!("time {v} out of range")));
            }
        }
        if t1 >= t2 {
            return Err(MetricError::InvalidSegment("expected t1<t2".into()));
        }
        Ok(Segment { t1, t2 })
    }

    pub fn from_array(a: [f64; 2]) -> Result<Segment, MetricError> {
        Segment::new(a[0], a[1])
    }
}

/// Binary pixel mask. Serialized with bits packed four per lowercase hex
/// character, row-major, high bit first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelMask {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl PixelMask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), (width * height) as usize);
        PixelMask {
            width,
            height,
            bits,
        }
    }

    pub fn empty(width: u32, height: u32) -> Self {
        PixelMask::new(width, height, vec![false; (width * height) as usize])
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[(y * self.width + x) as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// True if the point in normalized coordinates lands on a set pixel.
    /// Points exactly on the far edge are clamped into the last pixel.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return false;
        }
        let px = ((x * self.width as f64) as u32).min(self.width - 1);
        let py = ((y * self.height as f64) as u32).min(self.height - 1);
        self.get(px, py)
    }
}

#[derive(Serialize, Deserialize)]
struct MaskWire {
    w: u32,
    h: u32,
    bits: String,
}

impl Serialize for PixelMask {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut packed = vec![0u8; self.bits.len().div_ceil(8)];
        for (i, b) in self.bits.iter().enumerate() {
            if *b {
                packed[i / 8] |= 0x80 >> (i % 8);
            }
        }
        MaskWire {
            w: self.width,
            h: self.height,
            bits: hex_encode(&packed),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PixelMask {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let wire = MaskWire::deserialize(deserializer)?;
        let packed = hex_decode(&wire.bits).map_err(D::Error::custom)?;
        let n = (wire.w * wire.h) as usize;
        if packed.len() != n.div_ceil(8) {
            return Err(D::Error::custom("mask bit count mismatch"));
        }
        let mut bits = Vec::with_capacity(n);
        for i in 0..n {
            bits.push(packed[i / 8] & (0x80 >> (i % 8)) != 0);
        }
        Ok(PixelMask {
            width: wire.w,
            height: wire.h,
            bits,
        })
    }
}

/// Intersection over union of two boxes. Zero when disjoint.
pub fn iou(a: &Rect, b: &Rect) -> f64 {
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// Temporal IoU of two segments.
pub fn tiou(a: &Segment, b: &Segment) -> f64 {
    let inter = (a.t2.min(b.t2) - a.t1.max(b.t1)).max(0.0);
    let union = (a.t2 - a.t1) + (b.t2 - b.t1) - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// F1 over two character-index sets, computed as `2|A∩B| / (|A|+|B|)`.
/// Defined as 1.0 when both sets are empty.
pub fn span_f1(pred: &BTreeSet<u32>, gt: &BTreeSet<u32>) -> f64 {
    if pred.is_empty() && gt.is_empty() {
        return 1.0;
    }
    if pred.is_empty() || gt.is_empty() {
        return 0.0;
    }
    let inter = pred.intersection(gt).count() as f64;
    2.0 * inter / (pred.len() + gt.len()) as f64
}

/// Dice score `2|A∩B| / (|A|+|B|)` of two equally sized masks.
/// Defined as 1.0 when both masks are empty.
pub fn dice(pred: &PixelMask, gt: &PixelMask) -> Result<f64, MetricError> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(MetricError::DimensionMismatch(
            pred.width, pred.height, gt.width, gt.height,
        ));
    }
    let inter = pred
        .bits
        .iter()
        .zip(&gt.bits)
        .filter(|(a, b)| **a && **b)
        .count();
    let total = pred.count() + gt.count();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Rasterize a box: a pixel is set exactly when its center falls inside
/// `[x1,x2) x [y1,y2)`.
pub fn box_to_mask(b: &Rect, width: u32, height: u32) -> PixelMask {
    let mut mask = PixelMask::empty(width, height);
    for y in 0..height {
        let cy = (y as f64 + 0.5) / height as f64;
        if cy < b.y1 || cy >= b.y2 {
            continue;
        }
        for x in 0..width {
            let cx = (x as f64 + 0.5) / width as f64;
            if cx >= b.x1 && cx < b.x2 {
                mask.set(x, y, true);
            }
        }
    }
    mask
}

/// A prompt point with its claimed polarity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabeledPoint {
    pub x: f64,
    pub y: f64,
    pub positive: bool,
}

/// Fraction of points whose polarity matches ground-truth mask membership:
/// positive points should land inside the mask, negative points outside.
pub fn point_consistency(points: &[LabeledPoint], gt: &PixelMask) -> Result<f64, MetricError> {
    if points.is_empty() {
        return Err(MetricError::EmptyPointList);
    }
    let consistent = points
        .iter()
        .filter(|p| gt.contains_point(p.x, p.y) == p.positive)
        .count();
    Ok(consistent as f64 / points.len() as f64)
}

/// IoU between two equally sized masks; 1.0 when both are empty.
pub fn mask_iou(a: &PixelMask, b: &PixelMask) -> Result<f64, MetricError> {
    if a.width != b.width || a.height != b.height {
        return Err(MetricError::DimensionMismatch(
            a.width, a.height, b.width, b.height,
        ));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (x, y) in a.bits.iter().zip(&b.bits) {
        if *x && *y {
            inter += 1;
        }
        if *x || *y {
            union += 1;
        }
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Composite segmentation score:
/// `clip(0.7 * IoU(box_to_mask(box), gt) + 0.3 * point_consistency, 0, 1)`.
pub fn seg_score(
    region: &Rect,
    points: &[LabeledPoint],
    gt: &PixelMask,
) -> Result<f64, MetricError> {
    let pred_mask = box_to_mask(region, gt.width, gt.height);
    let box_iou = mask_iou(&pred_mask, gt)?;
    let pc = point_consistency(points, gt)?;
    Ok((0.7 * box_iou + 0.3 * pc).clamp(0.0, 1.0))
}
