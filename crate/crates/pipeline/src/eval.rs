//! Evaluation: per-class average precision with PR curves, object-centric
//! part coverage metrics, and report serialization.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use partctx_core::geometry::{iou, BBox};
use partctx_core::metrics::{average_precision, GtBox, PrPoint, RankedDetection};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PriorModel};
use crate::detect::PartDetection;
use crate::error::{PipelineError, Result};

pub const EVAL_IOU: f64 = 0.5;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassReport {
    pub ap: f64,
    pub num_gt: usize,
    pub num_detections: usize,
    pub curve: Vec<PrPoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: BTreeMap<String, ClassReport>,
    /// classes present in the detections but absent from the ground truth;
    /// AP is undefined for them and they do not enter the mean
    pub excluded: Vec<String>,
    pub mean_ap: f64,
    pub iou_threshold: f64,
}

/// Ground-truth part boxes per class, optionally restricted to parts whose
/// owning object is occluded. The restricted form errors when any object of
/// an owning class lacks the occlusion flag.
pub fn part_gts_by_class(
    dataset: &Dataset,
    occluded_only: bool,
) -> Result<BTreeMap<String, Vec<GtBox>>> {
    let mut out: BTreeMap<String, Vec<GtBox>> = BTreeMap::new();
    for part in &dataset.parts {
        let owner = dataset.owner(part);
        if occluded_only {
            match owner.occluded {
                Some(true) => {}
                Some(false) => continue,
                None => return Err(PipelineError::MissingOccludedFlags),
            }
        }
        out.entry(part.class.clone())
            .or_default()
            .push(GtBox { image_id: part.image_id, bbox: part.bbox });
    }
    Ok(out)
}

/// Per-class AP over final detections. Classes with detections but no ground
/// truth are listed as excluded; the mean runs over evaluated classes only.
pub fn evaluate(
    detections: &[PartDetection],
    gts_by_class: &BTreeMap<String, Vec<GtBox>>,
    iou_threshold: f64,
) -> EvalReport {
    let mut dets_by_class: BTreeMap<String, Vec<RankedDetection>> = BTreeMap::new();
    for d in detections {
        if let Some(bbox) = BBox::new(d.bbox[0], d.bbox[1], d.bbox[2], d.bbox[3]) {
            dets_by_class.entry(d.class.clone()).or_default().push(RankedDetection {
                image_id: d.image_id,
                bbox,
                score: d.score,
            });
        }
    }
    let mut per_class = BTreeMap::new();
    let mut excluded = Vec::new();
    let mut classes: Vec<String> = gts_by_class.keys().cloned().collect();
    for class in dets_by_class.keys() {
        if !gts_by_class.contains_key(class) {
            excluded.push(class.clone());
        }
    }
    classes.sort();
    for class in classes {
        let empty = Vec::new();
        let dets = dets_by_class.get(&class).unwrap_or(&empty);
        let gts = &gts_by_class[&class];
        match average_precision(dets, gts, iou_threshold) {
            Some(outcome) => {
                per_class.insert(
                    class,
                    ClassReport {
                        ap: outcome.ap,
                        num_gt: outcome.num_gt,
                        num_detections: outcome.num_detections,
                        curve: outcome.curve,
                    },
                );
            }
            None => excluded.push(class),
        }
    }
    let mean_ap = if per_class.is_empty() {
        0.0
    } else {
        per_class.values().map(|r| r.ap).sum::<f64>() / per_class.len() as f64
    };
    EvalReport { per_class, excluded, mean_ap, iou_threshold }
}

/// Object-centric coverage for one part class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageEntry {
    /// ground-truth objects of the owning class holding at least one part
    pub objects_with_part: usize,
    /// of those, objects whose retained detection has a qualifying part detection
    pub objects_covered: usize,
    /// of the covered objects, those whose top part detection localizes a part
    pub objects_correct: usize,
    pub pop: Option<f64>,
    pub pcp: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageReport {
    pub per_class: BTreeMap<String, CoverageEntry>,
}

/// Part coverage over objects (POP) and correctness of the top part
/// detection per object (PCP).
///
/// Per part class and ground-truth object holding that part: the object
/// detection of the owning class with the largest overlap is retained;
/// qualifying part detections are those attributed to it. POP counts objects
/// with at least one qualifying detection; PCP, over covered objects, counts
/// those whose highest-scoring qualifying detection overlaps a ground-truth
/// part of the object above the IoU threshold.
pub fn coverage(
    dataset: &Dataset,
    priors: &PriorModel,
    detections: &[PartDetection],
    object_detections: &crate::detect::ObjectDetectionSet,
    iou_threshold: f64,
    occluded_only: bool,
) -> Result<CoverageReport> {
    let mut per_class = BTreeMap::new();
    for entry in &priors.entries {
        let mut with_part = 0usize;
        let mut covered = 0usize;
        let mut correct = 0usize;
        for (&image_id, objects) in &dataset.objects {
            for (object_index, gt) in objects.iter().enumerate() {
                if gt.class != entry.object_class {
                    continue;
                }
                if occluded_only {
                    match gt.occluded {
                        Some(true) => {}
                        Some(false) => continue,
                        None => return Err(PipelineError::MissingOccludedFlags),
                    }
                }
                let gt_parts: Vec<&BBox> = dataset
                    .parts
                    .iter()
                    .filter(|p| {
                        p.image_id == image_id
                            && p.object_index == object_index
                            && p.class == entry.part_class
                    })
                    .map(|p| &p.bbox)
                    .collect();
                if gt_parts.is_empty() {
                    continue;
                }
                with_part += 1;

                // retained object detection: best overlap with this ground truth
                let retained = object_detections
                    .of_class(image_id, &entry.object_class)
                    .filter_map(|d| {
                        let bbox = BBox::new(d.bbox[0], d.bbox[1], d.bbox[2], d.bbox[3])?;
                        Some((d.proposal_id, iou(&bbox, &gt.bbox)))
                    })
                    .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(b.0.cmp(&a.0)));
                let Some((retained_id, _)) = retained else { continue };

                let mut qualifying: Vec<&PartDetection> = detections
                    .iter()
                    .filter(|d| {
                        d.image_id == image_id
                            && d.class == entry.part_class
                            && d.support == Some(retained_id)
                    })
                    .collect();
                if qualifying.is_empty() {
                    continue;
                }
                covered += 1;
                qualifying.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
                let top = qualifying[0];
                if let Some(top_box) = BBox::new(top.bbox[0], top.bbox[1], top.bbox[2], top.bbox[3]) {
                    if gt_parts.iter().any(|g| iou(&top_box, g) > iou_threshold) {
                        correct += 1;
                    }
                }
            }
        }
        per_class.insert(
            entry.part_class.clone(),
            CoverageEntry {
                objects_with_part: with_part,
                objects_covered: covered,
                objects_correct: correct,
                pop: (with_part > 0).then(|| covered as f64 / with_part as f64),
                pcp: (covered > 0).then(|| correct as f64 / covered as f64),
            },
        );
    }
    Ok(CoverageReport { per_class })
}

/// Fixed-width summary table, one row per class.
pub fn report_table(report: &EvalReport) -> String {
    let width = report
        .per_class
        .keys()
        .chain(report.excluded.iter())
        .map(|c| c.len())
        .max()
        .unwrap_or(5)
        .max(5);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>7}  {:>6}  {:>6}", "class", "ap", "gt", "dets");
    for (class, r) in &report.per_class {
        let _ = writeln!(
            out,
            "{:<width$}  {:>7.4}  {:>6}  {:>6}",
            class, r.ap, r.num_gt, r.num_detections
        );
    }
    for class in &report.excluded {
        let _ = writeln!(out, "{:<width$}  {:>7}  {:>6}  {:>6}", class, "n/a", 0, "-");
    }
    let _ = writeln!(out, "{:<width$}  {:>7.4}", "mean", report.mean_ap);
    out
}

/// Precision/recall curves as CSV: class,recall,precision.
pub fn write_pr_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut body = String::from("class,recall,precision\n");
    for (class, r) in &report.per_class {
        for p in &r.curve {
            let _ = writeln!(body, "{class},{},{}", p.recall, p.precision);
        }
    }
    std::fs::write(path, body)
        .map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
}
