//! Finite-difference verification of the regressor's analytic gradient.

use partctx_core::geometry::OffsetVector;
use partctx_core::regressor::{grad, loss, ModeTarget, RegressorParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_setup(rng: &mut ChaCha8Rng) -> (RegressorParams, Vec<ModeTarget>, usize) {
    let input_dim = rng.gen_range(2..6);
    let hidden_dim = rng.gen_range(2..9);
    let num_classes = rng.gen_range(1..4);
    let mode_counts: Vec<usize> = (0..num_classes).map(|_| rng.gen_range(1..4)).collect();
    let mut params = RegressorParams::zeros(input_dim, hidden_dim, &mode_counts);
    let flat: Vec<f64> = params.to_flat().iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
    params.assign_from_flat(&flat);

    let class = rng.gen_range(0..num_classes);
    let m = mode_counts[class];
    let batch: Vec<ModeTarget> = (0..rng.gen_range(1..5))
        .map(|_| ModeTarget {
            feature: (0..input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            modes: (0..m)
                .map(|_| {
                    if rng.gen_bool(0.7) {
                        Some(OffsetVector {
                            tx: rng.gen_range(-2.0..2.0),
                            ty: rng.gen_range(-2.0..2.0),
                            tw: rng.gen_range(-1.0..1.0),
                            th: rng.gen_range(-1.0..1.0),
                        })
                    } else {
                        None
                    }
                })
                .collect(),
        })
        .collect();
    (params, batch, class)
}

/// Checks one random draw; returns the worst relative error seen.
pub fn check_once(rng: &mut ChaCha8Rng) -> f64 {
    let (params, batch, class) = random_setup(rng);
    let analytic = grad(&params, &batch, class).unwrap().to_flat();
    let flat = params.to_flat();
    let step = 1e-5;
    let mut worst = 0.0f64;
    let mut scratch = params.clone();
    for i in 0..flat.len() {
        let mut plus = flat.clone();
        plus[i] += step;
        scratch.assign_from_flat(&plus);
        let lp = loss(&scratch, &batch, class).unwrap();
        let mut minus = flat.clone();
        minus[i] -= step;
        scratch.assign_from_flat(&minus);
        let lm = loss(&scratch, &batch, class).unwrap();
        let fd = (lp - lm) / (2.0 * step);
        let a = analytic[i];
        let diff = (a - fd).abs();
        if diff < 1e-8 {
            continue;
        }
        let rel = diff / (a.abs() + fd.abs());
        if rel > worst {
            worst = rel;
        }
    }
    worst
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..100 {
        let worst = check_once(&mut rng);
        assert!(worst < 1e-4, "trial {trial}: worst relative error {worst}");
    }
}

#[test]
fn gradient_vanishes_at_minimum() {
    // targets equal to the (zero) predictions and presence at its optimum
    let mut params = RegressorParams::zeros(2, 3, &[1]);
    // saturate presence so sigmoid(-x) ~ 0
    params.classes[0].modes[0].presence_b = 40.0;
    let batch = [ModeTarget {
        feature: vec![0.3, -0.4],
        modes: vec![Some(OffsetVector::ZERO)],
    }];
    let g = grad(&params, &batch, 0).unwrap();
    let norm: f64 = g.to_flat().iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm < 1e-10, "gradient norm {norm}");
}
