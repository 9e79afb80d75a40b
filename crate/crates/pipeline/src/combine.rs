//! Mixing-weight search: per part class, a convex blend of the initial score
//! and the relative-location score is tuned by grid search on training AP.

use std::collections::BTreeMap;

use partctx_core::geometry::BBox;
use partctx_core::metrics::{average_precision, GtBox, RankedDetection};
use partctx_core::mix::mix;
use serde::{Deserialize, Serialize};

pub const DEFAULT_GRID_STEP: f64 = 0.05;
pub const AP_IOU: f64 = 0.5;

/// A candidate part box carrying both cue scores, before mixing and NMS.
#[derive(Debug, Clone)]
pub struct ScoredCandidate {
    pub image_id: u64,
    pub bbox: BBox,
    pub initial: f64,
    pub rl: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixingWeights {
    /// per part class, weight on the relative-location score
    pub alphas: BTreeMap<String, f64>,
}

fn detections_at_alpha(
    candidates: &[ScoredCandidate],
    alpha: f64,
    nms_iou: f64,
) -> Vec<RankedDetection> {
    let mut by_image: BTreeMap<u64, Vec<(BBox, f64)>> = BTreeMap::new();
    for c in candidates {
        by_image.entry(c.image_id).or_default().push((c.bbox, mix(c.initial, c.rl, alpha)));
    }
    let mut out = Vec::new();
    for (&image_id, items) in &by_image {
        for idx in crate::detect::nms_indices(items, nms_iou) {
            let (bbox, score) = items[idx];
            out.push(RankedDetection { image_id, bbox, score });
        }
    }
    out
}

/// AP at one mixing weight, after per-image NMS. `None` when the class has no
/// ground truth.
pub fn ap_at_alpha(
    candidates: &[ScoredCandidate],
    gts: &[GtBox],
    alpha: f64,
    nms_iou: f64,
) -> Option<f64> {
    let dets = detections_at_alpha(candidates, alpha, nms_iou);
    average_precision(&dets, gts, AP_IOU).map(|o| o.ap)
}

/// Grid search over the mixing weight per part class, maximizing training AP.
/// Ties go to the smaller weight. Classes without ground truth get weight 0.
pub fn fit_weights(
    candidates_by_class: &BTreeMap<String, Vec<ScoredCandidate>>,
    gts_by_class: &BTreeMap<String, Vec<GtBox>>,
    grid_step: f64,
    nms_iou: f64,
) -> MixingWeights {
    let mut alphas = BTreeMap::new();
    for (class, candidates) in candidates_by_class {
        let gts = gts_by_class.get(class).map(Vec::as_slice).unwrap_or(&[]);
        if gts.is_empty() {
            log::warn!("part class `{class}` has no ground truth for weight fitting; weight 0");
            alphas.insert(class.clone(), 0.0);
            continue;
        }
        let steps = (1.0 / grid_step).round() as usize;
        let mut best = (f64::NEG_INFINITY, 0.0);
        for k in 0..=steps {
            let alpha = (k as f64 * grid_step).min(1.0);
            let ap = ap_at_alpha(candidates, gts, alpha, nms_iou).unwrap_or(0.0);
            if ap > best.0 {
                best = (ap, alpha);
            }
        }
        alphas.insert(class.clone(), best.1);
    }
    MixingWeights { alphas }
}
