//! Deterministic synthetic-scene generator: plants objects with
//! viewpoint-dependent part layouts, emits the full dataset bundle plus a
//! manifest of everything planted, and degrades scores/features with
//! configurable noise.

use std::collections::BTreeMap;

use partctx_core::geometry::{iou, BBox};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ImageInfo, ObjectGt, ObjectScoreRow, PartGt, Proposal};
use crate::error::{PipelineError, Result};
use crate::schema::{ManifestObject, ManifestPart, ManifestPartClass, ManifestRecord};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthObjectClass {
    pub name: String,
    pub width_range: (f64, f64),
    pub height_range: (f64, f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthPartClass {
    pub name: String,
    pub object_class: String,
    /// per-mode anchor boxes in the owner's normalized frame
    pub anchors: Vec<[f64; 4]>,
    /// activity\[viewpoint\]\[mode\]
    pub activity: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub num_images: usize,
    pub image_width: f64,
    pub image_height: f64,
    pub object_classes: Vec<SynthObjectClass>,
    pub part_classes: Vec<SynthPartClass>,
    pub viewpoints: Vec<String>,
    /// appearance-score noise on part proposals
    pub sigma_app: f64,
    /// probability that a true part proposal loses its appearance indicator
    #[serde(default)]
    pub miss_prob: f64,
    /// probability that a distractor gains a full appearance indicator
    #[serde(default)]
    pub false_fire_prob: f64,
    /// score noise on object proposals
    pub sigma_obj: f64,
    /// additive feature noise
    pub sigma_feat: f64,
    /// positional jitter for proposal copies, relative to box size
    pub proposal_jitter: f64,
    /// jitter applied to planted parts around their anchors
    pub part_jitter: f64,
    /// random part-sized boxes planted inside each object
    pub distractors_per_object: usize,
    /// random boxes per image outside any object
    pub background_distractors: usize,
    pub occlusion_prob: f64,
    pub feature_dim: usize,
}

impl SynthConfig {
    /// Desk-scale benchmark: one object class with four part classes covering
    /// mode counts 1 through 4 and viewpoint-dependent mode activity.
    pub fn benchmark(seed: u64, num_images: usize, sigma_app: f64) -> Self {
        let wheel_anchor = |cx: f64| [cx - 0.09, 0.76, cx + 0.09, 0.94];
        let door_anchor = |cx: f64| [cx - 0.11, 0.30, cx + 0.11, 0.70];
        let lamp_anchor = |cx: f64| [cx - 0.06, 0.24, cx + 0.06, 0.36];
        SynthConfig {
            seed,
            num_images,
            image_width: 640.0,
            image_height: 480.0,
            object_classes: vec![SynthObjectClass {
                name: "car".into(),
                width_range: (240.0, 320.0),
                height_range: (160.0, 220.0),
            }],
            part_classes: vec![
                SynthPartClass {
                    name: "wheel".into(),
                    object_class: "car".into(),
                    anchors: vec![wheel_anchor(0.15), wheel_anchor(0.5), wheel_anchor(0.85)],
                    // profile-left, profile-right, oblique
                    activity: vec![
                        vec![true, true, false],
                        vec![false, true, true],
                        vec![true, true, true],
                    ],
                },
                SynthPartClass {
                    name: "door".into(),
                    object_class: "car".into(),
                    anchors: vec![door_anchor(0.3), door_anchor(0.7)],
                    activity: vec![
                        vec![true, true],
                        vec![true, true],
                        vec![true, false],
                    ],
                },
                SynthPartClass {
                    name: "roof".into(),
                    object_class: "car".into(),
                    anchors: vec![[0.25, 0.02, 0.75, 0.18]],
                    activity: vec![vec![true], vec![true], vec![true]],
                },
                SynthPartClass {
                    name: "lamp".into(),
                    object_class: "car".into(),
                    anchors: vec![
                        lamp_anchor(0.08),
                        lamp_anchor(0.36),
                        lamp_anchor(0.64),
                        lamp_anchor(0.92),
                    ],
                    activity: vec![
                        vec![true, false, false, true],
                        vec![true, false, false, true],
                        vec![true, true, true, true],
                    ],
                },
            ],
            viewpoints: vec!["profile-left".into(), "profile-right".into(), "oblique".into()],
            sigma_app,
            miss_prob: 0.5 * sigma_app,
            false_fire_prob: 0.05 * sigma_app,
            sigma_obj: 0.1,
            sigma_feat: 0.05,
            proposal_jitter: 0.08,
            part_jitter: 0.02,
            distractors_per_object: 6,
            background_distractors: 4,
            occlusion_prob: 0.0,
            feature_dim: 16,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.part_classes.is_empty() {
            return Err(PipelineError::Config("config yields zero part classes".into()));
        }
        for p in [
            self.sigma_app,
            self.sigma_obj,
            self.occlusion_prob,
            self.miss_prob,
            self.false_fire_prob,
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(PipelineError::Config(format!("probability/noise level {p} outside [0,1]")));
            }
        }
        for pc in &self.part_classes {
            if pc.activity.len() != self.viewpoints.len() {
                return Err(PipelineError::Config(format!(
                    "part class `{}` activity rows ({}) do not match viewpoint count ({})",
                    pc.name,
                    pc.activity.len(),
                    self.viewpoints.len()
                )));
            }
            for row in &pc.activity {
                if row.len() != pc.anchors.len() {
                    return Err(PipelineError::Config(format!(
                        "part class `{}` activity mask does not match its mode count",
                        pc.name
                    )));
                }
            }
            for a in &pc.anchors {
                if a.iter().any(|v| !(-0.5..=1.5).contains(v)) {
                    return Err(PipelineError::Config(format!(
                        "part class `{}` anchor outside the normalized frame",
                        pc.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Noise model interpolating perfect and random scores:
/// `clamp(indicator * (1 - sigma * u) + sigma * u', 0, 1)`.
fn noisy_score(indicator: f64, sigma: f64, rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.gen_range(0.0..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (indicator * (1.0 - sigma * u) + sigma * u2).clamp(0.0, 1.0)
}

fn clamp_box(b: BBox, w: f64, h: f64) -> BBox {
    BBox::new(
        b.x_min.clamp(0.0, w - 1.0),
        b.y_min.clamp(0.0, h - 1.0),
        b.x_max.clamp(1.0, w),
        b.y_max.clamp(1.0, h),
    )
    .expect("clamped box stays valid")
}

fn jittered_copy(b: &BBox, rel: f64, w: f64, h: f64, rng: &mut ChaCha8Rng) -> BBox {
    let dx = rng.gen_range(-rel..=rel) * b.width();
    let dy = rng.gen_range(-rel..=rel) * b.height();
    let ds = 1.0 + rng.gen_range(-rel..=rel);
    let (cx, cy) = b.center();
    let nw = b.width() * ds;
    let nh = b.height() * ds;
    clamp_box(
        BBox::new(cx + dx - nw / 2.0, cy + dy - nh / 2.0, cx + dx + nw / 2.0, cy + dy + nh / 2.0)
            .unwrap_or(*b),
        w,
        h,
    )
}

/// Generates the dataset and the matching truth manifest. Fully deterministic
/// under the seed: each image draws from its own random stream.
pub fn generate(config: &SynthConfig) -> Result<(Dataset, Vec<ManifestRecord>)> {
    config.validate()?;
    let mut dataset = Dataset::default();
    let mut manifest = vec![ManifestRecord::Meta {
        part_classes: config
            .part_classes
            .iter()
            .map(|pc| ManifestPartClass {
                name: pc.name.clone(),
                object_class: pc.object_class.clone(),
                mode_count: pc.anchors.len(),
                anchors: pc.anchors.clone(),
                activity: pc.activity.clone(),
            })
            .collect(),
        viewpoints: config.viewpoints.clone(),
    }];

    let (iw, ih) = (config.image_width, config.image_height);
    let mut next_part_proposal_id = 0u64;
    let mut next_object_proposal_id = 0u64;

    for image_id in 0..config.num_images as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(image_id + 1);
        dataset.images.push(ImageInfo { id: image_id, width: iw, height: ih });

        // one planted object per image
        let oc = &config.object_classes[rng.gen_range(0..config.object_classes.len())];
        let ow = rng.gen_range(oc.width_range.0..=oc.width_range.1);
        let oh = rng.gen_range(oc.height_range.0..=oc.height_range.1);
        let ox = rng.gen_range(0.0..=(iw - ow));
        let oy = rng.gen_range(0.0..=(ih - oh));
        let object_box = BBox::new(ox, oy, ox + ow, oy + oh).unwrap();
        let viewpoint = rng.gen_range(0..config.viewpoints.len());
        let occluded = rng.gen_bool(config.occlusion_prob);

        dataset.objects.entry(image_id).or_default().push(ObjectGt {
            image_id,
            class: oc.name.clone(),
            bbox: object_box,
            occluded: Some(occluded),
        });

        // plant parts at the active mode anchors
        let mut manifest_parts = Vec::new();
        let mut part_boxes: Vec<(String, BBox)> = Vec::new();
        for pc in config.part_classes.iter().filter(|pc| pc.object_class == oc.name) {
            for (mode, anchor) in pc.anchors.iter().enumerate() {
                if !pc.activity[viewpoint][mode] {
                    continue;
                }
                let jx = rng.gen_range(-config.part_jitter..=config.part_jitter) * ow;
                let jy = rng.gen_range(-config.part_jitter..=config.part_jitter) * oh;
                let bbox = clamp_box(
                    BBox::new(
                        ox + anchor[0] * ow + jx,
                        oy + anchor[1] * oh + jy,
                        ox + anchor[2] * ow + jx,
                        oy + anchor[3] * oh + jy,
                    )
                    .unwrap(),
                    iw,
                    ih,
                );
                dataset.parts.push(PartGt {
                    image_id,
                    class: pc.name.clone(),
                    object_index: 0,
                    bbox,
                });
                part_boxes.push((pc.name.clone(), bbox));
                manifest_parts.push(ManifestPart {
                    class: pc.name.clone(),
                    mode,
                    bbox: crate::schema::bbox_to_array(&bbox),
                });
            }
        }

        manifest.push(ManifestRecord::Image {
            id: image_id,
            objects: vec![ManifestObject {
                class: oc.name.clone(),
                viewpoint: config.viewpoints[viewpoint].clone(),
                occluded,
                bbox: crate::schema::bbox_to_array(&object_box),
                parts: manifest_parts,
            }],
        });

        // --- object proposals: GT copy, jittered copies, background boxes ---
        let mut object_props: Vec<BBox> = vec![object_box];
        for _ in 0..3 {
            object_props.push(jittered_copy(&object_box, config.proposal_jitter, iw, ih, &mut rng));
        }
        for _ in 0..2 {
            let w = rng.gen_range(40.0..160.0);
            let h = rng.gen_range(40.0..120.0);
            let x = rng.gen_range(0.0..=(iw - w));
            let y = rng.gen_range(0.0..=(ih - h));
            object_props.push(BBox::new(x, y, x + w, y + h).unwrap());
        }
        for bbox in object_props {
            let id = next_object_proposal_id;
            next_object_proposal_id += 1;
            dataset.object_proposals.push(Proposal { id, image_id, bbox });

            // class scores from overlap indicators
            let mut scores = BTreeMap::new();
            let mut any = 0.0f64;
            for cls in &config.object_classes {
                let ind = if cls.name == oc.name && iou(&bbox, &object_box) > 0.5 { 1.0 } else { 0.0 };
                any = any.max(ind);
                scores.insert(cls.name.clone(), noisy_score(ind, config.sigma_obj, &mut rng));
            }
            let background = noisy_score(1.0 - any, config.sigma_obj, &mut rng);
            dataset.object_scores.insert(id, ObjectScoreRow { scores, background });

            // feature: viewpoint one-hot (object-like proposals only), then
            // normalized geometry, then noise padding
            let object_like = iou(&bbox, &object_box) > 0.5;
            let mut feature = vec![0.0; config.feature_dim];
            for (v, f) in feature.iter_mut().take(config.viewpoints.len()).enumerate() {
                if object_like && v == viewpoint {
                    *f = 1.0;
                }
            }
            let base = config.viewpoints.len();
            let (cx, cy) = bbox.center();
            let geom = [cx / iw, cy / ih, bbox.width() / iw, bbox.height() / ih];
            for (k, g) in geom.iter().enumerate() {
                if base + k < feature.len() {
                    feature[base + k] = *g;
                }
            }
            for f in feature.iter_mut() {
                *f += rng.gen_range(-config.sigma_feat..=config.sigma_feat);
            }
            dataset.object_features.insert(id, feature);
        }

        // --- part proposals: GT copies, jittered copies, distractors ---
        let mut part_props: Vec<BBox> = Vec::new();
        for (_, bbox) in &part_boxes {
            part_props.push(*bbox);
            part_props.push(jittered_copy(bbox, config.proposal_jitter, iw, ih, &mut rng));
        }
        for _ in 0..config.distractors_per_object {
            let w = rng.gen_range(0.08..0.25) * ow;
            let h = rng.gen_range(0.08..0.25) * oh;
            let x = rng.gen_range(ox..=(ox + ow - w));
            let y = rng.gen_range(oy..=(oy + oh - h));
            part_props.push(BBox::new(x, y, x + w, y + h).unwrap());
        }
        for _ in 0..config.background_distractors {
            let w = rng.gen_range(15.0..70.0);
            let h = rng.gen_range(15.0..70.0);
            let x = rng.gen_range(0.0..=(iw - w));
            let y = rng.gen_range(0.0..=(ih - h));
            part_props.push(BBox::new(x, y, x + w, y + h).unwrap());
        }
        for bbox in part_props {
            let id = next_part_proposal_id;
            next_part_proposal_id += 1;
            dataset.part_proposals.push(Proposal { id, image_id, bbox });
            let mut scores = BTreeMap::new();
            for pc in &config.part_classes {
                let ind = part_boxes
                    .iter()
                    .filter(|(name, _)| *name == pc.name)
                    .map(|(_, gt)| iou(&bbox, gt))
                    .fold(0.0, f64::max);
                let mut ind = if ind > 0.5 { 1.0 } else { 0.0 };
                // detector-style errors: drop true indicators, fire on distractors
                if ind > 0.5 {
                    if config.miss_prob > 0.0 && rng.gen_bool(config.miss_prob) {
                        ind = 0.0;
                    }
                } else if config.false_fire_prob > 0.0 && rng.gen_bool(config.false_fire_prob) {
                    ind = 1.0;
                }
                scores.insert(pc.name.clone(), noisy_score(ind, config.sigma_app, &mut rng));
            }
            dataset.part_scores.insert(id, scores);
        }
    }

    Ok((dataset, manifest))
}

/// The manifest alone; identical to the records produced by [`generate`].
pub fn truth_manifest(config: &SynthConfig) -> Result<Vec<ManifestRecord>> {
    Ok(generate(config)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_under_seed() {
        let config = SynthConfig::benchmark(42, 10, 0.5);
        let (a, _) = generate(&config).unwrap();
        let (b, _) = generate(&config).unwrap();
        assert_eq!(a.parts.len(), b.parts.len());
        for (x, y) in a.parts.iter().zip(&b.parts) {
            assert_eq!(x.bbox, y.bbox);
            assert_eq!(x.class, y.class);
        }
        for (x, y) in a.part_scores.iter().zip(&b.part_scores) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn parts_lie_inside_owner_frame() {
        let config = SynthConfig::benchmark(7, 20, 0.5);
        let (ds, _) = generate(&config).unwrap();
        for part in &ds.parts {
            let owner = ds.owner(part);
            // planted anchors sit inside [0,1]; jitter is small
            let frac = partctx_core::geometry::containment_fraction(&part.bbox, &owner.bbox);
            assert!(frac > 0.8, "part barely inside owner: {frac}");
        }
    }

    #[test]
    fn manifest_mirrors_dataset_parts() {
        let config = SynthConfig::benchmark(3, 15, 0.5);
        let (ds, manifest) = generate(&config).unwrap();
        let mut manifest_boxes = Vec::new();
        for rec in &manifest {
            if let ManifestRecord::Image { objects, .. } = rec {
                for o in objects {
                    for p in &o.parts {
                        manifest_boxes.push((p.class.clone(), p.bbox));
                    }
                }
            }
        }
        assert_eq!(manifest_boxes.len(), ds.parts.len());
        for part in &ds.parts {
            let arr = crate::schema::bbox_to_array(&part.bbox);
            assert!(manifest_boxes.iter().any(|(c, b)| *c == part.class && *b == arr));
        }
    }

    #[test]
    fn meta_mode_counts_match_config() {
        let config = SynthConfig::benchmark(1, 1, 0.5);
        let manifest = truth_manifest(&config).unwrap();
        let ManifestRecord::Meta { part_classes, .. } = &manifest[0] else {
            panic!("first record must be meta");
        };
        for (pc, planted) in part_classes.iter().zip(&config.part_classes) {
            assert_eq!(pc.mode_count, planted.anchors.len());
        }
    }

    #[test]
    fn zero_part_classes_rejected() {
        let mut config = SynthConfig::benchmark(1, 1, 0.5);
        config.part_classes.clear();
        assert!(generate(&config).is_err());
    }

    #[test]
    fn score_tables_cover_every_proposal() {
        let config = SynthConfig::benchmark(9, 10, 0.7);
        let (ds, _) = generate(&config).unwrap();
        for p in &ds.part_proposals {
            assert!(ds.part_scores.contains_key(&p.id));
        }
        for p in &ds.object_proposals {
            assert!(ds.object_scores.contains_key(&p.id));
            assert!(ds.object_features.contains_key(&p.id));
        }
    }
}
