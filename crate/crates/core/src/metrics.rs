//! Ranked-detection metrics: greedy matching against ground truth at an IoU
//! threshold and all-points interpolated average precision.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geometry::{iou, BBox};

/// A scored detection attributed to an image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedDetection {
    pub image_id: u64,
    pub bbox: BBox,
    pub score: f64,
}

/// A ground-truth box attributed to an image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtBox {
    pub image_id: u64,
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApOutcome {
    pub ap: f64,
    pub curve: Vec<PrPoint>,
    pub num_gt: usize,
    pub num_detections: usize,
}

/// Marks each detection, in descending score order (ties by ascending input
/// index), as true positive when it overlaps an unmatched ground truth of its
/// image above `iou_threshold`. Each ground truth matches at most once.
/// Returns the per-rank TP flags in ranked order.
pub fn match_detections(
    detections: &[RankedDetection],
    gts: &[GtBox],
    iou_threshold: f64,
) -> Vec<bool> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b].score
            .partial_cmp(&detections[a].score)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut gt_by_image: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, gt) in gts.iter().enumerate() {
        gt_by_image.entry(gt.image_id).or_default().push(i);
    }
    let mut matched = alloc::vec![false; gts.len()];
    let mut flags = Vec::with_capacity(detections.len());
    for &idx in &order {
        let det = &detections[idx];
        let mut best: Option<(f64, usize)> = None;
        if let Some(cands) = gt_by_image.get(&det.image_id) {
            for &g in cands {
                if matched[g] {
                    continue;
                }
                let v = iou(&det.bbox, &gts[g].bbox);
                if v > iou_threshold && best.map_or(true, |(bv, _)| v > bv) {
                    best = Some((v, g));
                }
            }
        }
        match best {
            Some((_, g)) => {
                matched[g] = true;
                flags.push(true);
            }
            None => flags.push(false),
        }
    }
    flags
}

/// VOC-style average precision with all-points interpolation (the precision
/// envelope integrated over recall). Returns `None` when there is no ground
/// truth for the class.
pub fn average_precision(
    detections: &[RankedDetection],
    gts: &[GtBox],
    iou_threshold: f64,
) -> Option<ApOutcome> {
    if gts.is_empty() {
        return None;
    }
    let flags = match_detections(detections, gts, iou_threshold);
    let mut curve = Vec::with_capacity(flags.len());
    let mut tp = 0usize;
    let mut fp = 0usize;
    for &is_tp in &flags {
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        curve.push(PrPoint {
            recall: tp as f64 / gts.len() as f64,
            precision: tp as f64 / (tp + fp) as f64,
        });
    }

    // precision envelope, right to left
    let mut env = curve.clone();
    for i in (0..env.len().saturating_sub(1)).rev() {
        if env[i + 1].precision > env[i].precision {
            env[i].precision = env[i + 1].precision;
        }
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for p in &env {
        if p.recall > prev_recall {
            ap += (p.recall - prev_recall) * p.precision;
            prev_recall = p.recall;
        }
    }
    Some(ApOutcome { ap, curve, num_gt: gts.len(), num_detections: detections.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn single_perfect_detection() {
        let b = bx(0.0, 0.0, 10.0, 10.0);
        let out = average_precision(
            &[RankedDetection { image_id: 0, bbox: b, score: 0.9 }],
            &[GtBox { image_id: 0, bbox: b }],
            0.5,
        )
        .unwrap();
        assert_eq!(out.ap, 1.0);
    }

    #[test]
    fn fp_above_tp_halves_ap() {
        let gt = bx(0.0, 0.0, 10.0, 10.0);
        let far = bx(50.0, 50.0, 60.0, 60.0);
        let out = average_precision(
            &[
                RankedDetection { image_id: 0, bbox: far, score: 0.9 },
                RankedDetection { image_id: 0, bbox: gt, score: 0.8 },
            ],
            &[GtBox { image_id: 0, bbox: gt }],
            0.5,
        )
        .unwrap();
        assert!((out.ap - 0.5).abs() < 1e-12);
    }

    #[test]
    fn no_gt_is_undefined() {
        assert!(average_precision(&[], &[], 0.5).is_none());
    }

    #[test]
    fn each_gt_matches_once() {
        let gt = bx(0.0, 0.0, 10.0, 10.0);
        let out = average_precision(
            &[
                RankedDetection { image_id: 0, bbox: gt, score: 0.9 },
                RankedDetection { image_id: 0, bbox: gt, score: 0.8 },
            ],
            &[GtBox { image_id: 0, bbox: gt }],
            0.5,
        )
        .unwrap();
        // second detection is a duplicate FP; AP still 1.0 since the TP ranks first
        assert_eq!(out.ap, 1.0);
        assert_eq!(out.num_detections, 2);
    }

    #[test]
    fn envelope_is_non_increasing() {
        let gt1 = bx(0.0, 0.0, 10.0, 10.0);
        let gt2 = bx(20.0, 0.0, 30.0, 10.0);
        let far = bx(50.0, 50.0, 60.0, 60.0);
        let out = average_precision(
            &[
                RankedDetection { image_id: 0, bbox: gt1, score: 0.9 },
                RankedDetection { image_id: 0, bbox: far, score: 0.85 },
                RankedDetection { image_id: 0, bbox: gt2, score: 0.8 },
            ],
            &[GtBox { image_id: 0, bbox: gt1 }, GtBox { image_id: 0, bbox: gt2 }],
            0.5,
        )
        .unwrap();
        // curve: (0.5,1), (0.5,0.5), (1,2/3); AP = 0.5*1 + 0.5*2/3
        assert!((out.ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
    }
}
