//! Object context for part proposals: supporting-proposal selection and the
//! per-part-class linear combiner that turns appearance plus object cues into
//! initial part scores.

use std::collections::BTreeMap;

use partctx_core::geometry::{containment_fraction, iou, BBox};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PartClassCatalog, Proposal};
use crate::error::Result;

pub const DEFAULT_CONTAINMENT_THRESHOLD: f64 = 0.9;
pub const POSITIVE_IOU: f64 = 0.6;
pub const NEGATIVE_IOU: f64 = 0.3;

// full-batch gradient descent settings for the combiner; inputs are bounded
// so a step of 0.5 stays well under the logistic curvature limit
const GD_STEP: f64 = 0.5;
const GD_ITERATIONS: usize = 2000;
const GD_L2: f64 = 1e-4;

/// Outcome of supporting-proposal selection for one part proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportAssignment {
    pub part_proposal_id: u64,
    /// id of the supporting object proposal, when one qualifies
    pub support: Option<u64>,
    /// max over object classes of the support's class score
    pub support_score: f64,
    /// K class scores in catalog order, then background
    pub class_scores: Vec<f64>,
}

/// An object proposal candidate with its class score row: K scores in a fixed
/// class order plus background.
#[derive(Debug, Clone)]
pub struct ScoredObjectProposal {
    pub id: u64,
    pub bbox: BBox,
    /// K scores in the caller's object-class order
    pub class_scores: Vec<f64>,
    pub background: f64,
}

/// Selects the supporting proposal for a part proposal: among object
/// proposals containing at least `containment_threshold` of it, the one whose
/// best object-class score (background excluded) is highest. Ties break by
/// lowest proposal id.
pub fn select_support(
    part: &Proposal,
    object_proposals: &[ScoredObjectProposal],
    containment_threshold: f64,
) -> SupportAssignment {
    let mut best: Option<(&ScoredObjectProposal, f64)> = None;
    for cand in object_proposals {
        if containment_fraction(&part.bbox, &cand.bbox) < containment_threshold {
            continue;
        }
        let top = cand.class_scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let better = match best {
            None => true,
            Some((b, bt)) => top > bt || (top == bt && cand.id < b.id),
        };
        if better {
            best = Some((cand, top));
        }
    }
    match best {
        Some((sup, top)) => SupportAssignment {
            part_proposal_id: part.id,
            support: Some(sup.id),
            support_score: top,
            class_scores: sup
                .class_scores
                .iter()
                .cloned()
                .chain(std::iter::once(sup.background))
                .collect(),
        },
        None => SupportAssignment {
            part_proposal_id: part.id,
            support: None,
            support_score: 0.0,
            class_scores: Vec::new(),
        },
    }
}

/// Builds score rows for every object proposal of an image, in a fixed object
/// class order.
pub fn scored_object_proposals(
    dataset: &Dataset,
    image_id: u64,
    object_classes: &[String],
) -> Vec<ScoredObjectProposal> {
    dataset
        .object_proposals_of(image_id)
        .filter_map(|p| {
            let row = dataset.object_scores.get(&p.id)?;
            Some(ScoredObjectProposal {
                id: p.id,
                bbox: p.bbox,
                class_scores: object_classes
                    .iter()
                    .map(|c| row.scores.get(c).copied().unwrap_or(0.0))
                    .collect(),
                background: row.background,
            })
        })
        .collect()
}

/// Support assignments for every part proposal in the dataset, keyed by
/// proposal id.
pub fn assign_supports(
    dataset: &Dataset,
    containment_threshold: f64,
) -> BTreeMap<u64, SupportAssignment> {
    let object_classes = dataset.object_classes();
    let mut out = BTreeMap::new();
    for image in &dataset.images {
        let candidates = scored_object_proposals(dataset, image.id, &object_classes);
        for part in dataset.part_proposals_of(image.id) {
            out.insert(part.id, select_support(part, &candidates, containment_threshold));
        }
    }
    out
}

/// Per-part-class weights of the linear context combiner. The input layout is
/// `[appearance, K object class scores, background, D object feature dims]`,
/// with the feature block present only when the dataset carries features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CombinerClassParams {
    pub weights: Vec<f64>,
    pub bias: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContextCombinerParams {
    pub object_classes: Vec<String>,
    pub feature_dim: usize,
    pub classes: BTreeMap<String, CombinerClassParams>,
}

impl ContextCombinerParams {
    pub fn input_dim(&self) -> usize {
        1 + self.object_classes.len() + 1 + self.feature_dim
    }

    /// Appearance passthrough: weight 1 on the appearance score, zeros
    /// elsewhere, bias 0.
    pub fn passthrough_class(&self) -> CombinerClassParams {
        let mut weights = vec![0.0; self.input_dim()];
        weights[0] = 1.0;
        CombinerClassParams { weights, bias: 0.0 }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Combiner input vector for one (proposal, part class) pair. Proposals with
/// no qualifying support use zeros for all object inputs.
pub fn combiner_input(
    appearance: f64,
    assignment: &SupportAssignment,
    support_feature: Option<&[f64]>,
    num_object_classes: usize,
    feature_dim: usize,
) -> Vec<f64> {
    let mut x = Vec::with_capacity(1 + num_object_classes + 1 + feature_dim);
    x.push(appearance);
    if assignment.support.is_some() {
        x.extend_from_slice(&assignment.class_scores);
    } else {
        x.extend(std::iter::repeat(0.0).take(num_object_classes + 1));
    }
    match support_feature {
        Some(f) if assignment.support.is_some() => x.extend_from_slice(f),
        _ => x.extend(std::iter::repeat(0.0).take(feature_dim)),
    }
    x
}

pub fn combiner_score(params: &CombinerClassParams, input: &[f64]) -> f64 {
    let z: f64 = params.bias + params.weights.iter().zip(input).map(|(w, v)| w * v).sum::<f64>();
    sigmoid(z)
}

/// Fits per-class logistic-regression weights by full-batch gradient descent.
///
/// Positive samples overlap a ground-truth part of the class above
/// [`POSITIVE_IOU`]; negatives fall below [`NEGATIVE_IOU`]; proposals in
/// between are excluded. A class with zero positives degenerates to the
/// appearance passthrough.
pub fn train_combiner(
    dataset: &Dataset,
    assignments: &BTreeMap<u64, SupportAssignment>,
    catalog: &PartClassCatalog,
) -> Result<ContextCombinerParams> {
    let object_classes = dataset.object_classes();
    let feature_dim = dataset.feature_dim().unwrap_or(0);
    let mut params = ContextCombinerParams {
        object_classes: object_classes.clone(),
        feature_dim,
        classes: BTreeMap::new(),
    };

    for entry in catalog.kept() {
        let class = &entry.name;
        let gts: Vec<(u64, BBox)> = dataset
            .parts
            .iter()
            .filter(|p| &p.class == class)
            .map(|p| (p.image_id, p.bbox))
            .collect();
        let mut xs: Vec<Vec<f64>> = Vec::new();
        let mut ys: Vec<f64> = Vec::new();
        for proposal in &dataset.part_proposals {
            let Some(scores) = dataset.part_scores.get(&proposal.id) else { continue };
            let Some(&appearance) = scores.get(class) else { continue };
            let best_iou = gts
                .iter()
                .filter(|(im, _)| *im == proposal.image_id)
                .map(|(_, gt)| iou(&proposal.bbox, gt))
                .fold(0.0, f64::max);
            let label = if best_iou > POSITIVE_IOU {
                1.0
            } else if best_iou < NEGATIVE_IOU {
                0.0
            } else {
                continue;
            };
            let assignment = &assignments[&proposal.id];
            let feature = assignment
                .support
                .and_then(|id| dataset.object_features.get(&id))
                .map(|f| f.as_slice());
            xs.push(combiner_input(appearance, assignment, feature, object_classes.len(), feature_dim));
            ys.push(label);
        }

        let has_positive = ys.iter().any(|&y| y > 0.5);
        if !has_positive {
            log::warn!("part class `{class}` has no positive combiner samples; using appearance passthrough");
            params.classes.insert(class.clone(), params.passthrough_class());
            continue;
        }
        params.classes.insert(class.clone(), fit_logistic(&xs, &ys, params.input_dim()));
    }
    Ok(params)
}

fn fit_logistic(xs: &[Vec<f64>], ys: &[f64], dim: usize) -> CombinerClassParams {
    let n = xs.len() as f64;
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    for _ in 0..GD_ITERATIONS {
        let mut gw = vec![0.0; dim];
        let mut gb = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let z: f64 = b + w.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>();
            let err = sigmoid(z) - y;
            for (g, xi) in gw.iter_mut().zip(x) {
                *g += err * xi;
            }
            gb += err;
        }
        for (wi, gi) in w.iter_mut().zip(&gw) {
            *wi -= GD_STEP * (gi / n + GD_L2 * *wi);
        }
        b -= GD_STEP * gb / n;
    }
    CombinerClassParams { weights: w, bias: b }
}

/// Initial part scores for every (proposal, kept part class) pair.
pub fn initial_scores(
    dataset: &Dataset,
    assignments: &BTreeMap<u64, SupportAssignment>,
    params: &ContextCombinerParams,
    catalog: &PartClassCatalog,
) -> BTreeMap<u64, BTreeMap<String, f64>> {
    let mut out: BTreeMap<u64, BTreeMap<String, f64>> = BTreeMap::new();
    for proposal in &dataset.part_proposals {
        let Some(scores) = dataset.part_scores.get(&proposal.id) else { continue };
        let Some(assignment) = assignments.get(&proposal.id) else { continue };
        let feature = assignment
            .support
            .and_then(|id| dataset.object_features.get(&id))
            .map(|f| f.as_slice());
        let mut row = BTreeMap::new();
        for entry in catalog.kept() {
            let Some(&appearance) = scores.get(&entry.name) else { continue };
            let Some(class_params) = params.classes.get(&entry.name) else { continue };
            let x = combiner_input(
                appearance,
                assignment,
                feature,
                params.object_classes.len(),
                params.feature_dim,
            );
            row.insert(entry.name.clone(), combiner_score(class_params, &x));
        }
        out.insert(proposal.id, row);
    }
    out
}
