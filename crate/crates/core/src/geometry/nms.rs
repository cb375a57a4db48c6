use std::cmp::Ordering;

use super::{rotated_iou, Detection};

/// Default suppression threshold for rotated boxes.
pub const DEFAULT_NMS_IOU: f64 = 0.1;

/// Index of the largest entry; ties go to the lowest index. NaN entries are
/// never selected over finite ones.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] || (values[best].is_nan() && !v.is_nan()) {
            best = i;
        }
    }
    best
}

fn by_score_desc(a: (usize, f64), b: (usize, f64)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0))
}

/// Class-wise greedy NMS.
///
/// Each detection competes within its top class. Within a class, boxes are
/// visited by that class's score (descending, lower input index first on
/// ties) and a box is dropped when its IoU with an already kept box exceeds
/// `iou_thr`. The survivors are returned by descending top score.
pub fn nms_rotated(dets: &[Detection], iou_thr: f64) -> Vec<Detection> {
    if dets.is_empty() {
        return Vec::new();
    }
    let num_classes = dets.iter().map(|d| d.scores.len()).max().unwrap_or(0);
    let tops: Vec<(usize, f64)> = dets.iter().map(Detection::top).collect();
    let mut keep = vec![false; dets.len()];
    for class in 0..num_classes {
        let mut members: Vec<(usize, f64)> = tops
            .iter()
            .enumerate()
            .filter(|(_, &(k, _))| k == class)
            .map(|(i, &(_, s))| (i, s))
            .collect();
        members.sort_by(|&a, &b| by_score_desc(a, b));
        let mut kept: Vec<usize> = Vec::new();
        for (i, _) in members {
            let suppressed = kept
                .iter()
                .any(|&j| rotated_iou(&dets[i].bbox, &dets[j].bbox) > iou_thr);
            if !suppressed {
                kept.push(i);
                keep[i] = true;
            }
        }
    }
    let mut order: Vec<(usize, f64)> = tops
        .iter()
        .enumerate()
        .filter(|(i, _)| keep[*i])
        .map(|(i, &(_, s))| (i, s))
        .collect();
    order.sort_by(|&a, &b| by_score_desc(a, b));
    order.into_iter().map(|(i, _)| dets[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::OrientedBox;
    use proptest::prelude::*;

    fn det(cx: f64, cy: f64, w: f64, h: f64, scores: &[f64]) -> Detection {
        Detection::new(OrientedBox::new(cx, cy, w, h, 0.0).unwrap(), scores.to_vec())
    }

    #[test]
    fn empty_and_single() {
        assert!(nms_rotated(&[], 0.5).is_empty());
        let d = det(0.0, 0.0, 2.0, 2.0, &[0.7, 0.3]);
        assert_eq!(nms_rotated(&[d.clone()], 0.5), vec![d]);
    }

    #[test]
    fn duplicate_keeps_higher() {
        let a = det(0.0, 0.0, 2.0, 2.0, &[0.8, 0.2]);
        let b = det(0.0, 0.0, 2.0, 2.0, &[0.9, 0.1]);
        assert_eq!(nms_rotated(&[a, b.clone()], 0.5), vec![b]);
    }

    #[test]
    fn three_box_greedy_trace() {
        // A=[0,10]x[0,10], B shifted by 2.5 in x: overlap 75/125 = 0.6.
        let a = det(5.0, 5.0, 10.0, 10.0, &[0.9, 0.1]);
        let b = det(7.5, 5.0, 10.0, 10.0, &[0.8, 0.2]);
        let c = det(50.0, 50.0, 10.0, 10.0, &[0.7, 0.3]);
        assert!((rotated_iou(&a.bbox, &b.bbox) - 0.6).abs() < 1e-12);
        let kept = nms_rotated(&[c.clone(), b, a.clone()], 0.5);
        assert_eq!(kept, vec![a, c]);
    }

    #[test]
    fn different_classes_do_not_suppress() {
        let a = det(0.0, 0.0, 2.0, 2.0, &[0.9, 0.1]);
        let b = det(0.0, 0.0, 2.0, 2.0, &[0.2, 0.8]);
        assert_eq!(nms_rotated(&[a.clone(), b.clone()], 0.5), vec![a, b]);
    }

    #[test]
    fn ties_break_by_input_index() {
        let a = det(0.0, 0.0, 2.0, 2.0, &[0.5, 0.5]);
        let b = det(0.1, 0.0, 2.0, 2.0, &[0.5, 0.5]);
        let kept = nms_rotated(&[a.clone(), b], 0.5);
        assert_eq!(kept, vec![a]);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }

    proptest! {
        #[test]
        fn output_is_suppressed_subset(
            raw in prop::collection::vec(
                (0.0..30.0f64, 0.0..30.0f64, 2.0..10.0f64, 2.0..10.0f64, -1.5..1.5f64, 0.0..1.0f64),
                0..12),
            thr in 0.05..1.0f64,
        ) {
            let dets: Vec<Detection> = raw.iter().map(|&(x, y, w, h, t, s)| {
                Detection::new(OrientedBox::new(x, y, w, h, t).unwrap(), vec![s, 1.0 - s])
            }).collect();
            let kept = nms_rotated(&dets, thr);
            for k in &kept {
                prop_assert!(dets.contains(k));
            }
            for (i, a) in kept.iter().enumerate() {
                for bb in &kept[i + 1..] {
                    if a.top().0 == bb.top().0 {
                        prop_assert!(rotated_iou(&a.bbox, &bb.bbox) <= thr);
                    }
                }
            }
            for pair in kept.windows(2) {
                prop_assert!(pair[0].top().1 >= pair[1].top().1);
            }
        }
    }
}
