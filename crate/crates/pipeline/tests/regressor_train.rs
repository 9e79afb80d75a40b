//! Trains the offset regressor on generated scenes and checks that suggested
//! windows land on the planted parts and that mode activity is learned.

use std::collections::BTreeMap;

use partctx::data::{build_prior, preprocess_catalog, PriorModel};
use partctx::synth::{generate, SynthConfig, SynthObjectClass, SynthPartClass};
use partctx::train::{presence_accuracy, train_offset_regressor, OffsetRegressorConfig};
use partctx_core::geometry::iou;
use partctx_core::scoring::{suggest_windows, ObjectDetection};

fn fixed_layout_config(seed: u64, num_images: usize) -> SynthConfig {
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
        part_classes: vec![SynthPartClass {
            name: "body".into(),
            object_class: "car".into(),
            anchors: vec![[0.2, 0.2, 0.8, 0.8]],
            activity: vec![vec![true]],
        }],
        viewpoints: vec!["profile".into()],
        sigma_app: 0.0,
        miss_prob: 0.0,
        false_fire_prob: 0.0,
        sigma_obj: 0.0,
        sigma_feat: 0.0,
        proposal_jitter: 0.02,
        part_jitter: 0.0,
        distractors_per_object: 2,
        background_distractors: 1,
        occlusion_prob: 0.0,
        feature_dim: 16,
    }
}

fn priors_for(dataset: &partctx::data::Dataset) -> PriorModel {
    let catalog = preprocess_catalog(dataset, &BTreeMap::new(), 15.0, 10).unwrap();
    let mut priors = PriorModel::default();
    for entry in catalog.kept() {
        priors.entries.push(build_prior(dataset, &catalog, &entry.name, 64, None).unwrap());
    }
    priors
}

#[test]
fn fixed_layout_windows_localize_the_part() {
    let (train_set, _) = generate(&fixed_layout_config(11, 120)).unwrap();
    let priors = priors_for(&train_set);
    assert_eq!(priors.entries.len(), 1);
    // the canonical epoch budget assumes far more minibatches per epoch than
    // this small set provides; scale the schedule up to compensate
    let config = OffsetRegressorConfig {
        epochs_phase1: 240,
        epochs_phase2: 60,
        lr_phase1: 3e-3,
        lr_phase2: 3e-4,
        ..OffsetRegressorConfig::default()
    };
    let net = train_offset_regressor(&train_set, &priors, &config).unwrap();

    let (test_set, _) = generate(&fixed_layout_config(911, 25)).unwrap();
    let class_id = net.class_id("body").unwrap();
    let mut checked = 0;
    let mut sum = 0.0;
    for image in &test_set.images {
        let gt = &test_set.objects[&image.id][0];
        // the first object proposal of each image is the ground-truth copy
        let proposal = test_set
            .object_proposals_of(image.id)
            .find(|p| iou(&p.bbox, &gt.bbox) > 0.999)
            .expect("gt proposal present");
        let det = ObjectDetection {
            bbox: gt.bbox,
            score: 1.0,
            feature: test_set.object_features[&proposal.id].clone(),
        };
        let windows = suggest_windows(&net.params, &det, class_id).unwrap();
        let best = windows
            .iter()
            .max_by(|a, b| a.presence.partial_cmp(&b.presence).unwrap())
            .unwrap();
        let part = test_set
            .parts
            .iter()
            .find(|p| p.image_id == image.id && p.class == "body")
            .unwrap();
        let overlap = iou(&best.window, &part.bbox);
        assert!(overlap > 0.8, "image {}: window overlap {overlap}", image.id);
        sum += overlap;
        checked += 1;
    }
    assert_eq!(checked, 25);
    let mean = sum / checked as f64;
    assert!(mean > 0.9, "mean window overlap {mean}");
}

#[test]
fn mode_activity_is_learned_across_viewpoints() {
    let (train_set, _) = generate(&SynthConfig::benchmark(5, 150, 0.4)).unwrap();
    let priors = priors_for(&train_set);
    let net = train_offset_regressor(&train_set, &priors, &OffsetRegressorConfig::default()).unwrap();

    let (test_set, _) = generate(&SynthConfig::benchmark(1005, 60, 0.4)).unwrap();
    let (correct, total) = presence_accuracy(&net, &priors, &test_set).unwrap();
    let accuracy = correct as f64 / total as f64;
    assert!(accuracy >= 0.9, "presence accuracy {accuracy} ({correct}/{total})");
}
