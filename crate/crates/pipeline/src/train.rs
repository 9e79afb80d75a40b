//! Offset-regressor training: sample construction from object ground truth
//! and high-overlap proposals, mode assignment, and two-phase momentum SGD.

use std::collections::BTreeMap;

use partctx_core::geometry::{encode_offset, iou, BBox};
use partctx_core::regressor::{self, ModeTarget, RegressorParams};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{assign_modes, Dataset, PriorModel};
use crate::error::{PipelineError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OffsetRegressorConfig {
    pub hidden_dim: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub lr_phase1: f64,
    pub epochs_phase1: usize,
    pub lr_phase2: f64,
    pub epochs_phase2: usize,
    pub seed: u64,
    /// object proposals this close to a ground truth join the training set
    pub object_iou: f64,
}

impl Default for OffsetRegressorConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            batch_size: 64,
            momentum: 0.9,
            lr_phase1: 1e-3,
            epochs_phase1: 12,
            lr_phase2: 1e-4,
            epochs_phase2: 4,
            seed: 0,
            object_iou: 0.7,
        }
    }
}

/// Trained regressor plus the part-class order its head banks follow.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedOffsetRegressor {
    pub class_names: Vec<String>,
    pub params: RegressorParams,
}

impl TrainedOffsetRegressor {
    pub fn class_id(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }
}

/// Object training sample: a box near (or equal to) a ground-truth object,
/// its feature vector, and the ground truth it belongs to.
struct ObjectSample {
    bbox: BBox,
    feature: Vec<f64>,
    image_id: u64,
    object_index: usize,
}

fn collect_object_samples(dataset: &Dataset, min_iou: f64) -> Vec<ObjectSample> {
    let mut samples = Vec::new();
    for (&image_id, objects) in &dataset.objects {
        for (object_index, gt) in objects.iter().enumerate() {
            let mut gt_covered = false;
            let mut best: Option<(f64, &Vec<f64>)> = None;
            for proposal in dataset.object_proposals_of(image_id) {
                let Some(feature) = dataset.object_features.get(&proposal.id) else { continue };
                let overlap = iou(&proposal.bbox, &gt.bbox);
                if overlap >= min_iou {
                    samples.push(ObjectSample {
                        bbox: proposal.bbox,
                        feature: feature.clone(),
                        image_id,
                        object_index,
                    });
                    if overlap >= 0.999 {
                        gt_covered = true;
                    }
                }
                if best.as_ref().map_or(true, |(b, _)| overlap > *b) {
                    best = Some((overlap, feature));
                }
            }
            // the ground-truth box itself, borrowing the closest proposal's feature
            if !gt_covered {
                match best {
                    Some((overlap, feature)) if overlap >= min_iou => samples.push(ObjectSample {
                        bbox: gt.bbox,
                        feature: feature.clone(),
                        image_id,
                        object_index,
                    }),
                    _ => log::warn!(
                        "object gt in image {image_id} has no feature-bearing proposal; skipped"
                    ),
                }
            }
        }
    }
    samples
}

fn xavier_init(params: &mut RegressorParams, rng: &mut ChaCha8Rng) {
    let mut fill = |w: &mut [f64], fan_in: usize, fan_out: usize| {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in w.iter_mut() {
            *v = rng.gen_range(-a..a);
        }
    };
    let (d, h) = (params.input_dim, params.hidden_dim);
    let mut trunk = std::mem::take(&mut params.trunk_w);
    fill(&mut trunk, d, h);
    params.trunk_w = trunk;
    for class in &mut params.classes {
        for head in &mut class.modes {
            let mut w = std::mem::take(&mut head.offset_w);
            fill(&mut w, h, 4);
            head.offset_w = w;
            let mut p = std::mem::take(&mut head.presence_w);
            fill(&mut p, h, 1);
            head.presence_w = p;
        }
    }
}

/// Trains one regressor across all part classes of the prior model.
///
/// The training set per class couples every object sample with the mode
/// assignment of its ground truth's parts; the trunk accumulates gradient
/// from every class. Returns the parameters with the lowest training loss
/// seen over the epoch schedule.
pub fn train_offset_regressor(
    dataset: &Dataset,
    priors: &PriorModel,
    config: &OffsetRegressorConfig,
) -> Result<TrainedOffsetRegressor> {
    let feature_dim = dataset
        .feature_dim()
        .ok_or_else(|| PipelineError::Config("offset training requires object features".into()))?;
    let class_names: Vec<String> = priors.entries.iter().map(|e| e.part_class.clone()).collect();
    let mode_counts: Vec<usize> = priors.entries.iter().map(|e| e.mode_count).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = RegressorParams::zeros(feature_dim, config.hidden_dim, &mode_counts);
    xavier_init(&mut params, &mut rng);

    // build per-class batches of mode targets
    let samples = collect_object_samples(dataset, config.object_iou);
    let mut per_class: Vec<Vec<ModeTarget>> = vec![Vec::new(); class_names.len()];
    for sample in &samples {
        let gt = &dataset.objects[&sample.image_id][sample.object_index];
        for (class_id, entry) in priors.entries.iter().enumerate() {
            if entry.object_class != gt.class {
                continue;
            }
            let part_boxes: Vec<BBox> = dataset
                .parts
                .iter()
                .filter(|p| {
                    p.image_id == sample.image_id
                        && p.object_index == sample.object_index
                        && p.class == entry.part_class
                })
                .map(|p| p.bbox)
                .collect();
            let assignment = assign_modes(&sample.bbox, &part_boxes, entry.mode_count, &mut rng);
            let modes = assignment
                .iter()
                .map(|slot| slot.map(|i| encode_offset(&sample.bbox, &part_boxes[i])))
                .collect();
            per_class[class_id].push(ModeTarget { feature: sample.feature.clone(), modes });
        }
    }
    for (class_id, batch) in per_class.iter().enumerate() {
        if batch.is_empty() {
            log::warn!(
                "part class `{}` has no training objects; its heads stay at initialization",
                class_names[class_id]
            );
        }
    }

    let total_loss = |p: &RegressorParams| -> Result<f64> {
        let mut sum = 0.0;
        for (class_id, batch) in per_class.iter().enumerate() {
            if !batch.is_empty() {
                sum += regressor::loss(p, batch, class_id)?;
            }
        }
        Ok(sum)
    };

    let mut flat = params.to_flat();
    let mut velocity = vec![0.0; flat.len()];
    let mut best = (total_loss(&params)?, params.clone());

    let schedule: Vec<f64> = std::iter::repeat(config.lr_phase1)
        .take(config.epochs_phase1)
        .chain(std::iter::repeat(config.lr_phase2).take(config.epochs_phase2))
        .collect();
    for lr in schedule {
        for (class_id, batch) in per_class.iter().enumerate() {
            if batch.is_empty() {
                continue;
            }
            let mut order: Vec<usize> = (0..batch.len()).collect();
            order.shuffle(&mut rng);
            for chunk in order.chunks(config.batch_size) {
                let minibatch: Vec<ModeTarget> = chunk.iter().map(|&i| batch[i].clone()).collect();
                let g = regressor::grad(&params, &minibatch, class_id)?;
                let gflat = g.to_flat();
                for ((v, g), p) in velocity.iter_mut().zip(&gflat).zip(flat.iter_mut()) {
                    *v = config.momentum * *v - lr * g / minibatch.len() as f64;
                    *p += *v;
                }
                params.assign_from_flat(&flat);
            }
        }
        let loss = total_loss(&params)?;
        if loss < best.0 {
            best = (loss, params.clone());
        }
    }

    Ok(TrainedOffsetRegressor { class_names, params: best.1 })
}

/// Fraction of (object, mode) decisions where the sigmoid presence score
/// falls on the correct side of 0.5; truth is whether the mode's interval
/// holds a part in the ground truth. Used to verify mode-activity learning
/// on held-out data.
pub fn presence_accuracy(
    net: &TrainedOffsetRegressor,
    priors: &PriorModel,
    dataset: &Dataset,
) -> Result<(usize, usize)> {
    let mut correct = 0usize;
    let mut total = 0usize;
    let samples = collect_object_samples(dataset, 0.999);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for sample in &samples {
        let gt = &dataset.objects[&sample.image_id][sample.object_index];
        for (class_id, entry) in priors.entries.iter().enumerate() {
            if entry.object_class != gt.class {
                continue;
            }
            let part_boxes: Vec<BBox> = dataset
                .parts
                .iter()
                .filter(|p| {
                    p.image_id == sample.image_id
                        && p.object_index == sample.object_index
                        && p.class == entry.part_class
                })
                .map(|p| p.bbox)
                .collect();
            let truth = assign_modes(&sample.bbox, &part_boxes, entry.mode_count, &mut rng);
            let out = regressor::forward(&net.params, &sample.feature, class_id)?;
            for (mode, (_, rho)) in out.iter().enumerate() {
                let active = truth[mode].is_some();
                if (active && *rho > 0.5) || (!active && *rho < 0.5) {
                    correct += 1;
                }
                total += 1;
            }
        }
    }
    Ok((correct, total))
}

/// Per-class mode targets reused by tests; maps (class id -> training batch).
pub fn training_batches(
    dataset: &Dataset,
    priors: &PriorModel,
    config: &OffsetRegressorConfig,
) -> Result<BTreeMap<usize, Vec<ModeTarget>>> {
    let samples = collect_object_samples(dataset, config.object_iou);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out: BTreeMap<usize, Vec<ModeTarget>> = BTreeMap::new();
    for sample in &samples {
        let gt = &dataset.objects[&sample.image_id][sample.object_index];
        for (class_id, entry) in priors.entries.iter().enumerate() {
            if entry.object_class != gt.class {
                continue;
            }
            let part_boxes: Vec<BBox> = dataset
                .parts
                .iter()
                .filter(|p| {
                    p.image_id == sample.image_id
                        && p.object_index == sample.object_index
                        && p.class == entry.part_class
                })
                .map(|p| p.bbox)
                .collect();
            let assignment = assign_modes(&sample.bbox, &part_boxes, entry.mode_count, &mut rng);
            let modes = assignment
                .iter()
                .map(|slot| slot.map(|i| encode_offset(&sample.bbox, &part_boxes[i])))
                .collect();
            out.entry(class_id)
                .or_default()
                .push(ModeTarget { feature: sample.feature.clone(), modes });
        }
    }
    Ok(out)
}
