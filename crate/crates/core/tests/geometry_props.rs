use partctx_core::geometry::{
    apply_offset, containment_fraction, encode_offset, iou, nms, BBox,
};
use proptest::prelude::*;

fn arb_box() -> impl Strategy<Value = BBox> {
    (
        -100.0f64..100.0,
        -100.0f64..100.0,
        0.5f64..80.0,
        0.5f64..80.0,
    )
        .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
}

/// Reference NMS: literal transcription of the greedy definition, rebuilding
/// the candidate set on every round.
fn nms_reference(detections: &[(BBox, f64)], threshold: f64) -> Vec<(BBox, f64)> {
    let mut remaining: Vec<usize> = (0..detections.len()).collect();
    let mut kept = Vec::new();
    while !remaining.is_empty() {
        let &best = remaining
            .iter()
            .min_by(|&&a, &&b| {
                detections[b].1
                    .partial_cmp(&detections[a].1)
                    .unwrap()
                    .then(a.cmp(&b))
            })
            .unwrap();
        kept.push(detections[best]);
        remaining.retain(|&i| i != best && iou(&detections[i].0, &detections[best].0) <= threshold);
    }
    kept
}

proptest! {
    #[test]
    fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
        let ab = iou(&a, &b);
        let ba = iou(&b, &a);
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn containment_full_iff_subset(p in arb_box(), s in arb_box()) {
        let c = containment_fraction(&p, &s);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&c));
        let subset = p.x_min >= s.x_min && p.y_min >= s.y_min && p.x_max <= s.x_max && p.y_max <= s.y_max;
        if subset {
            prop_assert!((c - 1.0).abs() < 1e-12);
        }
        if (c - 1.0).abs() < 1e-12 {
            prop_assert!(p.intersection_area(&s) >= p.area() * (1.0 - 1e-12));
        }
    }

    #[test]
    fn offset_round_trip(object in arb_box(), part in arb_box()) {
        let dv = encode_offset(&object, &part);
        let back = apply_offset(&object, &dv);
        for (a, b) in [
            (back.x_min, part.x_min),
            (back.y_min, part.y_min),
            (back.x_max, part.x_max),
            (back.y_max, part.y_max),
        ] {
            let rel = (a - b).abs() / b.abs().max(1.0);
            prop_assert!(rel < 1e-9, "mismatch: {a} vs {b}");
        }
    }

    #[test]
    fn nms_matches_reference(
        boxes in proptest::collection::vec((arb_box(), 0.0f64..1.0), 0..20),
        threshold in 0.05f64..0.95,
    ) {
        let fast = nms(&boxes, threshold);
        let slow = nms_reference(&boxes, threshold);
        prop_assert_eq!(fast, slow);
    }

    #[test]
    fn nms_survivors_do_not_overlap(
        boxes in proptest::collection::vec((arb_box(), 0.0f64..1.0), 0..20),
        threshold in 0.05f64..0.95,
    ) {
        let kept = nms(&boxes, threshold);
        for i in 0..kept.len() {
            for j in (i + 1)..kept.len() {
                prop_assert!(iou(&kept[i].0, &kept[j].0) <= threshold);
            }
        }
        // sorted by descending score
        for w in kept.windows(2) {
            prop_assert!(w[0].1 >= w[1].1);
        }
    }
}
