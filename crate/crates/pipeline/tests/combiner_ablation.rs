//! With pure-noise object scores the context combiner has nothing to add and
//! must stay close to the appearance-only baseline on held-out data.

use std::collections::BTreeMap;

use partctx::combine::{ap_at_alpha, ScoredCandidate};
use partctx::context::{assign_supports, initial_scores, train_combiner};
use partctx::data::{preprocess_catalog, Dataset, ObjectScoreRow};
use partctx::eval::part_gts_by_class;
use partctx::synth::{generate, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn randomize_object_scores(ds: &mut Dataset, rng: &mut ChaCha8Rng) {
    let classes = ds.object_classes();
    for row in ds.object_scores.values_mut() {
        *row = ObjectScoreRow {
            scores: classes.iter().map(|c| (c.clone(), rng.gen_range(0.0..1.0))).collect(),
            background: rng.gen_range(0.0..1.0),
        };
    }
}

fn scored_map(ds: &Dataset, scores: &BTreeMap<u64, BTreeMap<String, f64>>) -> f64 {
    let gts = part_gts_by_class(ds, false).unwrap();
    let mut sum = 0.0;
    let mut n = 0;
    for (class, g) in &gts {
        let candidates: Vec<ScoredCandidate> = ds
            .part_proposals
            .iter()
            .filter_map(|p| {
                let s = scores.get(&p.id)?.get(class)?;
                Some(ScoredCandidate { image_id: p.image_id, bbox: p.bbox, initial: *s, rl: 0.0 })
            })
            .collect();
        sum += ap_at_alpha(&candidates, g, 0.0, 0.3).unwrap();
        n += 1;
    }
    sum / n as f64
}

#[test]
fn noise_object_scores_degrade_to_appearance_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut config = SynthConfig::benchmark(61, 300, 0.6);
    config.miss_prob = 0.0;
    config.false_fire_prob = 0.0;
    let (mut train, _) = generate(&config).unwrap();
    config.seed = 1061;
    config.num_images = 150;
    let (mut test, _) = generate(&config).unwrap();
    randomize_object_scores(&mut train, &mut rng);
    randomize_object_scores(&mut test, &mut rng);

    let catalog = preprocess_catalog(&train, &BTreeMap::new(), 15.0, 10).unwrap();
    let assignments = assign_supports(&train, 0.9);
    let combiner = train_combiner(&train, &assignments, &catalog).unwrap();

    let assignments_test = assign_supports(&test, 0.9);
    let combined = initial_scores(&test, &assignments_test, &combiner, &catalog);
    let combined_map = scored_map(&test, &combined);

    let appearance: BTreeMap<u64, BTreeMap<String, f64>> = test
        .part_proposals
        .iter()
        .map(|p| (p.id, test.part_scores[&p.id].clone()))
        .collect();
    let appearance_map = scored_map(&test, &appearance);

    let diff = (combined_map - appearance_map).abs();
    assert!(
        diff < 0.01,
        "combiner with noise object scores drifted {diff:.4} from appearance-only \
         ({combined_map:.4} vs {appearance_map:.4})"
    );
}
