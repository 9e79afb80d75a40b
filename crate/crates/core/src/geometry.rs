//! Axis-aligned box algebra: overlap measures, the center/log-size offset
//! transform, and greedy non-maxima suppression.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Axis-aligned rectangle in continuous pixel coordinates.
///
/// Invariant: `x_max > x_min` and `y_max > y_min`, so the area is strictly
/// positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    /// Builds a box, returning `None` when the corners do not describe a
    /// positive-area rectangle.
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Option<Self> {
        if x_max > x_min && y_max > y_min && [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite())
        {
            Some(Self { x_min, y_min, x_max, y_max })
        } else {
            None
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }

    /// Intersection area with another box; zero when disjoint.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = f64::min(self.x_max, other.x_max) - f64::max(self.x_min, other.x_min);
        let h = f64::min(self.y_max, other.y_max) - f64::max(self.y_min, other.y_min);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }
}

/// Center shift in units of the object size plus log size ratios, mapping an
/// object box onto a part window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetVector {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
}

impl OffsetVector {
    pub const ZERO: OffsetVector = OffsetVector { tx: 0.0, ty: 0.0, tw: 0.0, th: 0.0 };

    pub fn as_array(&self) -> [f64; 4] {
        [self.tx, self.ty, self.tw, self.th]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self { tx: v[0], ty: v[1], tw: v[2], th: v[3] }
    }
}

/// Intersection-over-Union of two boxes, in `[0, 1]`.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Fraction of the area of `p` covered by `s`.
pub fn containment_fraction(p: &BBox, s: &BBox) -> f64 {
    p.intersection_area(s) / p.area()
}

/// Offset vector mapping `object` onto `part` (R-CNN style parameterization).
pub fn encode_offset(object: &BBox, part: &BBox) -> OffsetVector {
    let (ocx, ocy) = object.center();
    let (pcx, pcy) = part.center();
    OffsetVector {
        tx: (pcx - ocx) / object.width(),
        ty: (pcy - ocy) / object.height(),
        tw: libm::log(part.width() / object.width()),
        th: libm::log(part.height() / object.height()),
    }
}

/// Inverse of [`encode_offset`]: places the window described by `dv` relative
/// to `object`.
pub fn apply_offset(object: &BBox, dv: &OffsetVector) -> BBox {
    let (ocx, ocy) = object.center();
    let cx = ocx + dv.tx * object.width();
    let cy = ocy + dv.ty * object.height();
    let w = object.width() * libm::exp(dv.tw);
    let h = object.height() * libm::exp(dv.th);
    BBox {
        x_min: cx - 0.5 * w,
        y_min: cy - 0.5 * h,
        x_max: cx + 0.5 * w,
        y_max: cy + 0.5 * h,
    }
}

/// Greedy non-maxima suppression.
///
/// Repeatedly keeps the highest-scored box and suppresses every box with IoU
/// above `iou_threshold` against it. Score ties break by ascending input
/// index. Returns the survivors sorted by descending score.
pub fn nms(detections: &[(BBox, f64)], iou_threshold: f64) -> Vec<(BBox, f64)> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b].1
            .partial_cmp(&detections[a].1)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut suppressed = alloc::vec![false; detections.len()];
    let mut kept = Vec::new();
    for (i, &idx) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        kept.push(detections[idx]);
        for (j, &other) in order.iter().enumerate().skip(i + 1) {
            if !suppressed[j] && iou(&detections[idx].0, &detections[other].0) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn iou_identical() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn iou_disjoint() {
        assert_eq!(iou(&bx(0.0, 0.0, 1.0, 1.0), &bx(5.0, 5.0, 6.0, 6.0)), 0.0);
    }

    #[test]
    fn iou_partial_overlap() {
        // intersection 1, union 7
        let v = iou(&bx(0.0, 0.0, 2.0, 2.0), &bx(1.0, 1.0, 3.0, 3.0));
        assert!((v - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn containment_cases() {
        assert_eq!(containment_fraction(&bx(2.0, 2.0, 4.0, 4.0), &bx(0.0, 0.0, 10.0, 10.0)), 1.0);
        assert_eq!(containment_fraction(&bx(0.0, 0.0, 2.0, 2.0), &bx(5.0, 5.0, 9.0, 9.0)), 0.0);
        assert_eq!(containment_fraction(&bx(0.0, 0.0, 2.0, 2.0), &bx(1.0, 0.0, 3.0, 2.0)), 0.5);
    }

    #[test]
    fn encode_identity() {
        let o = bx(0.0, 0.0, 100.0, 100.0);
        let dv = encode_offset(&o, &o);
        assert_eq!(dv, OffsetVector::ZERO);
    }

    #[test]
    fn encode_half_size() {
        let o = bx(0.0, 0.0, 100.0, 100.0);
        let p = bx(0.0, 0.0, 50.0, 50.0);
        let dv = encode_offset(&o, &p);
        assert!((dv.tx - -0.25).abs() < 1e-12);
        assert!((dv.ty - -0.25).abs() < 1e-12);
        assert!((dv.tw - libm::log(0.5)).abs() < 1e-12);
        assert!((dv.th - libm::log(0.5)).abs() < 1e-12);
    }

    #[test]
    fn apply_zero_offset() {
        let o = bx(3.0, 4.0, 10.0, 20.0);
        let w = apply_offset(&o, &OffsetVector::ZERO);
        assert!((w.x_min - o.x_min).abs() < 1e-12);
        assert!((w.y_max - o.y_max).abs() < 1e-12);
    }

    #[test]
    fn apply_known_offset() {
        let o = bx(0.0, 0.0, 100.0, 100.0);
        let dv = OffsetVector { tx: 0.25, ty: 0.25, tw: libm::log(0.5), th: libm::log(0.5) };
        let w = apply_offset(&o, &dv);
        assert!((w.x_min - 50.0).abs() < 1e-9);
        assert!((w.y_min - 50.0).abs() < 1e-9);
        assert!((w.x_max - 100.0).abs() < 1e-9);
        assert!((w.y_max - 100.0).abs() < 1e-9);
    }

    #[test]
    fn nms_duplicate_removal() {
        let b = bx(0.0, 0.0, 10.0, 10.0);
        let out = nms(&[(b, 0.9), (b, 0.8)], 0.3);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].1, 0.9);
    }

    #[test]
    fn nms_disjoint_survive() {
        let out = nms(&[(bx(0.0, 0.0, 1.0, 1.0), 0.5), (bx(5.0, 5.0, 6.0, 6.0), 0.4)], 0.3);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn nms_empty() {
        assert!(nms(&[], 0.5).is_empty());
    }
}
