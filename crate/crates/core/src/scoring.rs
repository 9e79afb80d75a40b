//! Suggested-window generation and the relative-location score: every object
//! detection proposes part windows via the regressor, and a part proposal is
//! scored by its best overlap-weighted window.

use alloc::vec::Vec;

use crate::geometry::{apply_offset, iou, BBox};
use crate::regressor::{forward, RegressorError, RegressorParams};

/// An object detection feeding the relative-location score: box, clamped
/// detection score and the feature vector the regressor conditions on.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectDetection {
    pub bbox: BBox,
    pub score: f64,
    pub feature: Vec<f64>,
}

/// One suggested part window with its presence score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuggestedWindow {
    pub window: BBox,
    pub presence: f64,
}

/// Applies the regressor's offset vectors to a detection box, yielding one
/// window per mode of the part class.
pub fn suggest_windows(
    params: &RegressorParams,
    detection: &ObjectDetection,
    class: usize,
) -> Result<Vec<SuggestedWindow>, RegressorError> {
    let pairs = forward(params, &detection.feature, class)?;
    Ok(pairs
        .into_iter()
        .map(|(dv, presence)| SuggestedWindow { window: apply_offset(&detection.bbox, &dv), presence })
        .collect())
}

/// Relative-location score of a part proposal: the maximum over all
/// detections and their suggested windows of IoU x presence x detection
/// score. Zero when there are no detections.
///
/// `windows[i]` must hold the suggested windows generated for `detections[i]`.
pub fn relative_location_score(
    proposal: &BBox,
    detections: &[ObjectDetection],
    windows: &[Vec<SuggestedWindow>],
) -> f64 {
    debug_assert_eq!(detections.len(), windows.len());
    let mut best = 0.0;
    for (det, wins) in detections.iter().zip(windows) {
        for w in wins {
            let s = iou(proposal, &w.window) * w.presence * det.score;
            if s > best {
                best = s;
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::OffsetVector;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn perfect_window_scores_one() {
        let p = bx(10.0, 10.0, 20.0, 20.0);
        let det = ObjectDetection { bbox: bx(0.0, 0.0, 40.0, 40.0), score: 1.0, feature: Vec::new() };
        let wins = alloc::vec![alloc::vec![SuggestedWindow { window: p, presence: 1.0 }]];
        assert_eq!(relative_location_score(&p, &[det], &wins), 1.0);
    }

    #[test]
    fn max_over_candidates() {
        // (IoU 0.6, rho 0.9, phi 0.8) vs (IoU 0.7, rho 0.2, phi 0.8) -> 0.432
        let p = bx(0.0, 0.0, 10.0, 10.0);
        let near = |target_iou: f64| {
            // shift box horizontally until IoU matches: IoU = (10-d)/(10+d)
            let d = 10.0 * (1.0 - target_iou) / (1.0 + target_iou);
            bx(d, 0.0, 10.0 + d, 10.0)
        };
        let w1 = near(0.6);
        let w2 = near(0.7);
        let det = ObjectDetection { bbox: bx(0.0, 0.0, 40.0, 40.0), score: 0.8, feature: Vec::new() };
        let wins = alloc::vec![alloc::vec![
            SuggestedWindow { window: w1, presence: 0.9 },
            SuggestedWindow { window: w2, presence: 0.2 },
        ]];
        let s = relative_location_score(&p, &[det], &wins);
        assert!((s - 0.432).abs() < 1e-9, "got {s}");
    }

    #[test]
    fn no_detections_scores_zero() {
        let p = bx(0.0, 0.0, 1.0, 1.0);
        assert_eq!(relative_location_score(&p, &[], &[]), 0.0);
    }

    #[test]
    fn zero_offsets_reproduce_detection_box() {
        let mut params = RegressorParams::zeros(2, 2, &[3]);
        params.classes[0].modes[1].offset_b = [0.0; 4];
        let det = ObjectDetection {
            bbox: bx(5.0, 5.0, 25.0, 15.0),
            score: 0.9,
            feature: alloc::vec![1.0, 0.0],
        };
        let wins = suggest_windows(&params, &det, 0).unwrap();
        assert_eq!(wins.len(), 3);
        for w in &wins {
            assert!((w.window.x_min - 5.0).abs() < 1e-12);
            assert!((w.window.y_max - 15.0).abs() < 1e-12);
            assert_eq!(w.presence, 0.5);
        }
    }

    #[test]
    fn hand_set_offset_window() {
        let mut params = RegressorParams::zeros(1, 1, &[1]);
        // h = relu(0*f + 1) = 1; offsets = biases
        params.trunk_b = alloc::vec![1.0];
        params.classes[0].modes[0].offset_b = [0.25, 0.25, 0.0, 0.0];
        let det = ObjectDetection {
            bbox: bx(0.0, 0.0, 100.0, 100.0),
            score: 1.0,
            feature: alloc::vec![0.0],
        };
        let wins = suggest_windows(&params, &det, 0).unwrap();
        let expected = apply_offset(
            &det.bbox,
            &OffsetVector { tx: 0.25, ty: 0.25, tw: 0.0, th: 0.0 },
        );
        assert_eq!(wins[0].window, expected);
    }
}
