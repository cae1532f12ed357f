//! Axis-aligned boxes, the IoU family of overlap metrics and the anchor-grid
//! decode that turns one raw detector row into a [`BoxCandidate`].

use alloc::vec::Vec;
use core::f64::consts::PI;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Axis-aligned box in corner form, pixel coordinates.
///
/// Construction through [`BBox::new`] orders the corners, so `x1 <= x2` and
/// `y1 <= y2` always hold.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1: x1.min(x2), y1: y1.min(y2), x2: x1.max(x2), y2: y1.max(y2) }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn is_degenerate(&self) -> bool {
        self.width() <= 0.0 || self.height() <= 0.0
    }

    /// Clamp both corners into `[0, width] x [0, height]`.
    pub fn clamp_to(&self, width: f64, height: f64) -> Self {
        Self {
            x1: self.x1.clamp(0.0, width),
            y1: self.y1.clamp(0.0, height),
            x2: self.x2.clamp(0.0, width),
            y2: self.y2.clamp(0.0, height),
        }
    }

    fn intersection(&self, other: &Self) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    fn enclosing(&self, other: &Self) -> Self {
        Self {
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
            x2: self.x2.max(other.x2),
            y2: self.y2.max(other.y2),
        }
    }
}

/// Returns `(iou, union)`; a zero union yields an IoU of 0.
fn iou_and_union(a: &BBox, b: &BBox) -> (f64, f64) {
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        (0.0, union)
    } else {
        (inter / union, union)
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    iou_and_union(a, b).0
}

/// Generalized IoU: `iou - (|C| - |A u B|) / |C|`, `C` the smallest enclosing box.
pub fn giou(a: &BBox, b: &BBox) -> f64 {
    let (iou, union) = iou_and_union(a, b);
    let enclosing = a.enclosing(b).area();
    if enclosing <= 0.0 {
        return iou;
    }
    iou - (enclosing - union) / enclosing
}

/// Squared center distance over squared enclosing diagonal; 0 when the
/// enclosing box has no extent.
fn center_penalty(a: &BBox, b: &BBox) -> f64 {
    let c = a.enclosing(b);
    let diag2 = c.width() * c.width() + c.height() * c.height();
    if diag2 <= 0.0 {
        return 0.0;
    }
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    ((ax - bx) * (ax - bx) + (ay - by) * (ay - by)) / diag2
}

/// Distance IoU: `iou - rho^2 / c^2`.
pub fn diou(a: &BBox, b: &BBox) -> f64 {
    iou(a, b) - center_penalty(a, b)
}

/// Complete IoU: DIoU minus the aspect-ratio consistency term `alpha * v`.
///
/// The unclamped formula dips to about -1.5 for tiny, far-apart boxes of
/// opposite aspect ratio; the result is floored at -1.
pub fn ciou(a: &BBox, b: &BBox) -> f64 {
    let iou = iou(a, b);
    let d = iou - center_penalty(a, b);
    let dv = libm::atan2(b.width(), b.height()) - libm::atan2(a.width(), a.height());
    let v = 4.0 / (PI * PI) * dv * dv;
    let aspect = if v > 0.0 { v * v / ((1.0 - iou) + v) } else { 0.0 };
    (d - aspect).max(-1.0)
}

/// Which overlap metric a suppression kernel uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(rename_all = "snake_case"))]
pub enum OverlapMetric {
    #[default]
    Iou,
    Giou,
    Diou,
    Ciou,
}

impl OverlapMetric {
    #[inline]
    pub fn eval(self, a: &BBox, b: &BBox) -> f64 {
        match self {
            OverlapMetric::Iou => iou(a, b),
            OverlapMetric::Giou => giou(a, b),
            OverlapMetric::Diou => diou(a, b),
            OverlapMetric::Ciou => ciou(a, b),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OverlapMetric::Iou => "iou",
            OverlapMetric::Giou => "giou",
            OverlapMetric::Diou => "diou",
            OverlapMetric::Ciou => "ciou",
        }
    }
}

impl core::str::FromStr for OverlapMetric {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "iou" => Ok(Self::Iou),
            "giou" => Ok(Self::Giou),
            "diou" => Ok(Self::Diou),
            "ciou" => Ok(Self::Ciou),
            other => Err(crate::Error::InvalidConfig(alloc::format!("unknown metric {other:?}"))),
        }
    }
}

/// One detector proposal.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct BoxCandidate {
    pub bbox: BBox,
    /// Box confidence `c`.
    pub objectness: f64,
    /// Independent per-class sigmoid scores; they need not sum to one.
    pub class_probs: Vec<f64>,
    /// Argmax of `class_probs`, lowest index on ties.
    pub class_id: usize,
}

impl BoxCandidate {
    /// Builds a candidate, deriving `class_id` from `class_probs`.
    pub fn new(bbox: BBox, objectness: f64, class_probs: Vec<f64>) -> Self {
        let class_id = argmax(&class_probs);
        Self { bbox, objectness, class_probs, class_id }
    }

    pub fn max_class_prob(&self) -> f64 {
        self.class_probs.get(self.class_id).copied().unwrap_or(0.0)
    }

    /// `objectness * max_i p_i`; the one score used for both filtering and sorting.
    pub fn confidence(&self) -> f64 {
        self.objectness * self.max_class_prob()
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[inline]
pub fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-t))
}

/// Size logits are clamped to this magnitude before exponentiation.
pub const SIZE_LOGIT_CLAMP: f64 = 6.0;

/// Anchor prior in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Anchor {
    pub w: f64,
    pub h: f64,
}

/// Where a raw row sits on the detection grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSlot {
    pub cell_x: usize,
    pub cell_y: usize,
    pub anchor: Anchor,
    pub stride: f64,
}

/// Decode `(t_x, t_y, t_w, t_h, t_obj, t_1..t_K)` with the exponential size
/// rule, clamping the resulting box to `image_w x image_h`.
pub fn decode(raw: &[f64], slot: GridSlot, image_w: f64, image_h: f64) -> BoxCandidate {
    debug_assert!(raw.len() >= 5);
    let cx = (sigmoid(raw[0]) + slot.cell_x as f64) * slot.stride;
    let cy = (sigmoid(raw[1]) + slot.cell_y as f64) * slot.stride;
    let w = slot.anchor.w * libm::exp(raw[2].clamp(-SIZE_LOGIT_CLAMP, SIZE_LOGIT_CLAMP));
    let h = slot.anchor.h * libm::exp(raw[3].clamp(-SIZE_LOGIT_CLAMP, SIZE_LOGIT_CLAMP));
    let bbox = BBox::from_center(cx, cy, w, h).clamp_to(image_w, image_h);
    let class_probs = raw[5..].iter().map(|&t| sigmoid(t)).collect();
    BoxCandidate::new(bbox, sigmoid(raw[4]), class_probs)
}
