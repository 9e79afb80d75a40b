//! Detection-side orchestration: object detections from score tables,
//! relative-location scores for part proposals, final part detections with
//! cue mixing, and diagnostic heatmaps.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use partctx_core::geometry::{containment_fraction, iou, BBox};
use partctx_core::mix::mix;
use partctx_core::scoring::{relative_location_score, suggest_windows, ObjectDetection, SuggestedWindow};
use serde::{Deserialize, Serialize};

use crate::combine::MixingWeights;
use crate::data::{Dataset, PriorModel};
use crate::error::{PipelineError, Result};
use crate::train::TrainedOffsetRegressor;

pub const DEFAULT_NMS_IOU: f64 = 0.3;
pub const DEFAULT_SCORE_FLOOR: f64 = 0.05;

/// An object detection surviving per-class NMS, with its source proposal id.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectedObject {
    pub proposal_id: u64,
    pub image_id: u64,
    pub class: String,
    pub bbox: [f64; 4],
    pub score: f64,
}

/// Object detections grouped by image and class, with feature vectors.
#[derive(Debug, Clone, Default)]
pub struct ObjectDetectionSet {
    pub by_image: BTreeMap<u64, Vec<DetectedObject>>,
    pub features: BTreeMap<u64, Vec<f64>>,
}

impl ObjectDetectionSet {
    pub fn of_class<'a>(&'a self, image_id: u64, class: &'a str) -> impl Iterator<Item = &'a DetectedObject> {
        self.by_image
            .get(&image_id)
            .into_iter()
            .flatten()
            .filter(move |d| d.class == class)
    }

    pub fn all(&self) -> impl Iterator<Item = &DetectedObject> {
        self.by_image.values().flatten()
    }
}

/// Greedy NMS over an indexed list; same tie rule as the core routine but
/// returns surviving indices in descending score order.
pub fn nms_indices(items: &[(BBox, f64)], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| {
        items[b].1.partial_cmp(&items[a].1).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let mut suppressed = vec![false; items.len()];
    let mut kept = Vec::new();
    for (i, &idx) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        kept.push(idx);
        for (j, &other) in order.iter().enumerate().skip(i + 1) {
            if !suppressed[j] && iou(&items[idx].0, &items[other].0) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    kept
}

/// Object detections from the score table: per image and class, proposals at
/// or above the score floor survive NMS. Scores are clamped into `[0, 1]` on
/// ingestion.
pub fn build_object_detections(
    dataset: &Dataset,
    nms_iou: f64,
    score_floor: f64,
) -> ObjectDetectionSet {
    let classes = dataset.object_classes();
    let mut set = ObjectDetectionSet::default();
    for image in &dataset.images {
        let mut per_image = Vec::new();
        for class in &classes {
            let mut candidates: Vec<(BBox, f64, u64)> = Vec::new();
            for proposal in dataset.object_proposals_of(image.id) {
                let Some(row) = dataset.object_scores.get(&proposal.id) else { continue };
                let score = row.scores.get(class).copied().unwrap_or(0.0).clamp(0.0, 1.0);
                if score >= score_floor {
                    candidates.push((proposal.bbox, score, proposal.id));
                }
            }
            let items: Vec<(BBox, f64)> = candidates.iter().map(|(b, s, _)| (*b, *s)).collect();
            for idx in nms_indices(&items, nms_iou) {
                let (bbox, score, proposal_id) = candidates[idx];
                if let Some(feature) = dataset.object_features.get(&proposal_id) {
                    set.features.insert(proposal_id, feature.clone());
                } else if !dataset.object_features.is_empty() {
                    log::warn!("object detection {proposal_id} lacks a feature row; skipped");
                    continue;
                }
                per_image.push(DetectedObject {
                    proposal_id,
                    image_id: image.id,
                    class: class.clone(),
                    bbox: crate::schema::bbox_to_array(&bbox),
                    score,
                });
            }
        }
        if !per_image.is_empty() {
            set.by_image.insert(image.id, per_image);
        }
    }
    set
}

fn core_detections(
    set: &ObjectDetectionSet,
    image_id: u64,
    class: &str,
) -> Vec<ObjectDetection> {
    set.of_class(image_id, class)
        .filter_map(|d| {
            let feature = set.features.get(&d.proposal_id)?.clone();
            Some(ObjectDetection {
                bbox: BBox::new(d.bbox[0], d.bbox[1], d.bbox[2], d.bbox[3])?,
                score: d.score,
                feature,
            })
        })
        .collect()
}

/// Relative-location scores for every (part proposal, kept part class) pair.
/// Each part class sees only detections of its owning object class.
pub fn rl_scores(
    dataset: &Dataset,
    detections: &ObjectDetectionSet,
    net: &TrainedOffsetRegressor,
    priors: &PriorModel,
) -> Result<BTreeMap<u64, BTreeMap<String, f64>>> {
    let mut out: BTreeMap<u64, BTreeMap<String, f64>> = BTreeMap::new();
    for image in &dataset.images {
        for entry in &priors.entries {
            let Some(class_id) = net.class_id(&entry.part_class) else { continue };
            let dets = core_detections(detections, image.id, &entry.object_class);
            let windows: Vec<Vec<SuggestedWindow>> = dets
                .iter()
                .map(|d| suggest_windows(&net.params, d, class_id))
                .collect::<std::result::Result<_, _>>()
                .map_err(PipelineError::from)?;
            for proposal in dataset.part_proposals_of(image.id) {
                let score = relative_location_score(&proposal.bbox, &dets, &windows);
                out.entry(proposal.id).or_default().insert(entry.part_class.clone(), score);
            }
        }
    }
    Ok(out)
}

/// Final part detection: mixed score, surviving per-class NMS, with the
/// supporting object detection attributed by the containment/argmax rule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartDetection {
    pub image_id: u64,
    pub class: String,
    pub bbox: [f64; 4],
    pub score: f64,
    /// proposal id of the supporting object detection, when one qualifies
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<u64>,
}

/// Composes initial scores, relative-location scores and the fitted mixing
/// weights into final per-class part detections after NMS.
pub fn compose_detections(
    dataset: &Dataset,
    initial: &BTreeMap<u64, BTreeMap<String, f64>>,
    rl: &BTreeMap<u64, BTreeMap<String, f64>>,
    weights: &MixingWeights,
    detections: &ObjectDetectionSet,
    nms_iou: f64,
    containment_threshold: f64,
) -> Vec<PartDetection> {
    let mut out = Vec::new();
    let classes: Vec<&String> = weights.alphas.keys().collect();
    for image in &dataset.images {
        let proposals: Vec<_> = dataset.part_proposals_of(image.id).collect();
        for class in &classes {
            let alpha = weights.alphas[*class];
            let mut candidates: Vec<(BBox, f64, u64)> = Vec::new();
            for p in &proposals {
                let init = initial.get(&p.id).and_then(|row| row.get(*class)).copied();
                let Some(init) = init else { continue };
                let rl_score = rl.get(&p.id).and_then(|row| row.get(*class)).copied().unwrap_or(0.0);
                candidates.push((p.bbox, mix(init, rl_score, alpha), p.id));
            }
            let items: Vec<(BBox, f64)> = candidates.iter().map(|(b, s, _)| (*b, *s)).collect();
            for idx in nms_indices(&items, nms_iou) {
                let (bbox, score, _) = candidates[idx];
                let support = select_support_detection(&bbox, detections, image.id, containment_threshold);
                out.push(PartDetection {
                    image_id: image.id,
                    class: (*class).clone(),
                    bbox: crate::schema::bbox_to_array(&bbox),
                    score,
                    support,
                });
            }
        }
    }
    out
}

/// Supporting object detection for a part box: among detections containing at
/// least `threshold` of it, the one with the highest class score (ties by
/// lowest proposal id).
pub fn select_support_detection(
    part: &BBox,
    detections: &ObjectDetectionSet,
    image_id: u64,
    threshold: f64,
) -> Option<u64> {
    let mut best: Option<(&DetectedObject, f64)> = None;
    for det in detections.by_image.get(&image_id).into_iter().flatten() {
        let bbox = BBox::new(det.bbox[0], det.bbox[1], det.bbox[2], det.bbox[3])?;
        if containment_fraction(part, &bbox) < threshold {
            continue;
        }
        let better = match best {
            None => true,
            Some((b, bs)) => det.score > bs || (det.score == bs && det.proposal_id < b.proposal_id),
        };
        if better {
            best = Some((det, det.score));
        }
    }
    best.map(|(d, _)| d.proposal_id)
}

/// Writes a binary PGM (P5) heatmap of the relative-location score for one
/// image and part class: each cell scores a window of the class's mean
/// training size centered on the cell.
pub fn write_rl_heatmap(
    path: &Path,
    dataset: &Dataset,
    image_id: u64,
    part_class: &str,
    detections: &ObjectDetectionSet,
    net: &TrainedOffsetRegressor,
    priors: &PriorModel,
    grid: usize,
) -> Result<()> {
    let image = dataset
        .image(image_id)
        .ok_or_else(|| PipelineError::Config(format!("unknown image id {image_id}")))?;
    let entry = priors
        .entry(part_class)
        .ok_or_else(|| PipelineError::Config(format!("no prior for part class `{part_class}`")))?;
    let class_id = net
        .class_id(part_class)
        .ok_or_else(|| PipelineError::Config(format!("regressor has no class `{part_class}`")))?;

    let dets = core_detections(detections, image_id, &entry.object_class);
    let windows: Vec<Vec<SuggestedWindow>> = dets
        .iter()
        .map(|d| suggest_windows(&net.params, d, class_id))
        .collect::<std::result::Result<_, _>>()
        .map_err(PipelineError::from)?;

    // mean normalized part size from the prior, scaled by the mean detection size
    let mut norm_w = 0.0;
    let mut norm_h = 0.0;
    let mut n = 0usize;
    for mean in entry.mode_means.iter().flatten() {
        norm_w += mean[2] - mean[0];
        norm_h += mean[3] - mean[1];
        n += 1;
    }
    let (norm_w, norm_h) = if n > 0 { (norm_w / n as f64, norm_h / n as f64) } else { (0.2, 0.2) };
    let (det_w, det_h) = if dets.is_empty() {
        (image.width * 0.5, image.height * 0.5)
    } else {
        (
            dets.iter().map(|d| d.bbox.width()).sum::<f64>() / dets.len() as f64,
            dets.iter().map(|d| d.bbox.height()).sum::<f64>() / dets.len() as f64,
        )
    };
    let win_w = (norm_w * det_w).max(2.0);
    let win_h = (norm_h * det_h).max(2.0);

    let mut pixels = Vec::with_capacity(grid * grid);
    for gy in 0..grid {
        for gx in 0..grid {
            let cx = (gx as f64 + 0.5) / grid as f64 * image.width;
            let cy = (gy as f64 + 0.5) / grid as f64 * image.height;
            let probe = BBox::new(cx - win_w / 2.0, cy - win_h / 2.0, cx + win_w / 2.0, cy + win_h / 2.0)
                .expect("probe window is valid");
            let score = relative_location_score(&probe, &dets, &windows);
            pixels.push((score * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }

    let mut file = std::fs::File::create(path)
        .map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })?;
    write!(file, "P5\n{grid} {grid}\n255\n")
        .and_then(|_| file.write_all(&pixels))
        .map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use partctx_core::geometry::nms as core_nms;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nms_indices_agrees_with_core() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let items: Vec<(BBox, f64)> = (0..15)
                .map(|_| {
                    let x = rng.gen_range(0.0..50.0);
                    let y = rng.gen_range(0.0..50.0);
                    (
                        BBox::new(x, y, x + rng.gen_range(5.0..30.0), y + rng.gen_range(5.0..30.0)).unwrap(),
                        rng.gen_range(0.0..1.0),
                    )
                })
                .collect();
            let via_indices: Vec<(BBox, f64)> =
                nms_indices(&items, 0.4).into_iter().map(|i| items[i]).collect();
            assert_eq!(via_indices, core_nms(&items, 0.4));
        }
    }
}
