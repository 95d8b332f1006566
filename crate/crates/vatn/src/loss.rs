//! Training objectives: focal classification loss, smooth L1 regression,
//! anchor-label assignment with target encoding, and online hard example
//! mining.

use crate::boxes::{encode_target, iou3d, Cube};
use serde::{Deserialize, Serialize};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-7;

/// IoU at or above which an anchor is positive.
pub const POSITIVE_IOU: f64 = 0.5;
/// IoU below which an anchor is negative; the band between is ignored.
pub const NEGATIVE_IOU: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    /// Modulation exponent; 0 reduces the loss to plain cross-entropy.
    pub gamma: f64,
    /// Class-balance weight.
    pub alpha: f64,
}

impl FocalParams {
    pub fn new(gamma: f64, alpha: f64) -> Self {
        assert!(gamma >= 0.0, "gamma must be >= 0");
        assert!((0.0..=1.0).contains(&alpha), "alpha must be in [0, 1]");
        Self { gamma, alpha }
    }
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            alpha: 0.5,
        }
    }
}

/// `-alpha * (1 - p_t)^gamma * ln(p_t)` with `p_t = p` for positives and
/// `1 - p` for negatives.
pub fn focal_loss(p: f64, is_positive: bool, params: &FocalParams) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let p_t = if is_positive { p } else { 1.0 - p };
    -params.alpha * (1.0 - p_t).powf(params.gamma) * p_t.ln()
}

/// Per-component `|x|` when `|x| > 1`, else `x^2`, summed over the four
/// components of `t* - t`. Both branches meet at 1 when `|x| = 1`.
pub fn smooth_l1(t_star: &[f64; 4], t: &[f64; 4]) -> f64 {
    t_star
        .iter()
        .zip(t)
        .map(|(&a, &b)| {
            let x = a - b;
            if x.abs() > 1.0 {
                x.abs()
            } else {
                x * x
            }
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorLabel {
    Positive,
    Negative,
    Ignore,
}

/// Label and regression target of one anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorAssignment {
    pub label: AnchorLabel,
    /// Matched ground-truth index; present exactly for positives.
    pub gt_index: Option<usize>,
    /// Encoded regression target against this anchor; present for positives.
    pub target: Option<[f64; 4]>,
}

/// Assign every anchor a label by max-IoU matching at the 0.5 / 0.2
/// thresholds, then force the best-IoU anchor of each ground truth positive
/// so no nodule is left unmatched. When two ground truths compete for the
/// same anchor, the later one takes its best still-unclaimed anchor.
pub fn assign_anchors(anchors: &[Cube], gt_boxes: &[Cube]) -> Vec<AnchorAssignment> {
    let mut out: Vec<AnchorAssignment> = anchors
        .iter()
        .map(|anchor| {
            let mut best = 0.0;
            let mut best_gt = None;
            for (gi, gt) in gt_boxes.iter().enumerate() {
                let iou = iou3d(anchor, gt);
                if iou > best {
                    best = iou;
                    best_gt = Some(gi);
                }
            }
            if best >= POSITIVE_IOU {
                let gi = best_gt.expect("positive anchor has a match");
                AnchorAssignment {
                    label: AnchorLabel::Positive,
                    gt_index: Some(gi),
                    target: Some(encode_target(&gt_boxes[gi], anchor)),
                }
            } else if best < NEGATIVE_IOU {
                AnchorAssignment {
                    label: AnchorLabel::Negative,
                    gt_index: None,
                    target: None,
                }
            } else {
                AnchorAssignment {
                    label: AnchorLabel::Ignore,
                    gt_index: None,
                    target: None,
                }
            }
        })
        .collect();

    // forced positives: best anchor per ground truth
    let mut claimed: Vec<Option<usize>> = vec![None; anchors.len()];
    for (ai, a) in out.iter().enumerate() {
        if a.label == AnchorLabel::Positive {
            claimed[ai] = a.gt_index;
        }
    }
    for (gi, gt) in gt_boxes.iter().enumerate() {
        if claimed.iter().any(|&c| c == Some(gi)) {
            continue;
        }
        let mut order: Vec<(usize, f64)> = anchors
            .iter()
            .enumerate()
            .map(|(ai, anchor)| (ai, iou3d(anchor, gt)))
            .collect();
        order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for (ai, _) in order {
            if claimed[ai].is_none() {
                claimed[ai] = Some(gi);
                out[ai] = AnchorAssignment {
                    label: AnchorLabel::Positive,
                    gt_index: Some(gi),
                    target: Some(encode_target(gt, &anchors[ai])),
                };
                break;
            }
        }
    }
    out
}

/// Indices of the `n` highest-probability negatives; ties break toward the
/// lower index. Returns all negatives when fewer than `n` exist.
pub fn ohem_select(neg_probs: &[f64], n: usize) -> Vec<usize> {
    assert!(n >= 1, "ohem selection size must be >= 1");
    let mut order: Vec<usize> = (0..neg_probs.len()).collect();
    order.sort_by(|&a, &b| {
        neg_probs[b]
            .partial_cmp(&neg_probs[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(n);
    order
}

/// Combined detection objective:
/// `lambda * mean(selected classification losses) + mean over positives of
/// the regression losses`. Entries labeled `Ignore` contribute nothing, and
/// the regression term is 0 when no positive exists. `cls_losses` and
/// `reg_losses` align with `labels`; regression values are read only at
/// positive positions.
pub fn combined_loss(
    cls_losses: &[f64],
    reg_losses: &[f64],
    labels: &[AnchorLabel],
    lambda: f64,
) -> f64 {
    assert_eq!(cls_losses.len(), labels.len(), "misaligned classification losses");
    assert_eq!(reg_losses.len(), labels.len(), "misaligned regression losses");
    let mut cls_sum = 0.0;
    let mut cls_count = 0usize;
    let mut reg_sum = 0.0;
    let mut reg_count = 0usize;
    for (i, label) in labels.iter().enumerate() {
        match label {
            AnchorLabel::Positive => {
                cls_sum += cls_losses[i];
                cls_count += 1;
                reg_sum += reg_losses[i];
                reg_count += 1;
            }
            AnchorLabel::Negative => {
                cls_sum += cls_losses[i];
                cls_count += 1;
            }
            AnchorLabel::Ignore => {}
        }
    }
    let cls = if cls_count > 0 {
        cls_sum / cls_count as f64
    } else {
        0.0
    };
    let reg = if reg_count > 0 {
        reg_sum / reg_count as f64
    } else {
        0.0
    };
    lambda * cls + reg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxes::decode_prediction;

    #[test]
    fn focal_reduces_to_cross_entropy_at_gamma_zero() {
        let params = FocalParams::new(0.0, 1.0);
        for i in 1..100 {
            let p = i as f64 / 100.0;
            let expect_pos = -(p.ln());
            let expect_neg = -((1.0 - p).ln());
            assert!((focal_loss(p, true, &params) - expect_pos).abs() < 1e-12);
            assert!((focal_loss(p, false, &params) - expect_neg).abs() < 1e-12);
        }
    }

    #[test]
    fn focal_reference_value() {
        // 0.5 * (0.1)^2 * (-ln 0.9) = 5.268e-4
        let params = FocalParams::new(2.0, 0.5);
        let v = focal_loss(0.9, true, &params);
        assert!((v - 5.268e-4).abs() < 1e-7, "got {v}");
    }

    #[test]
    fn focal_well_classified_limit() {
        let params = FocalParams::new(2.0, 0.5);
        assert!(focal_loss(1.0 - 1e-9, true, &params) < 1e-12);
    }

    #[test]
    fn focal_monotone_decreasing_in_pt() {
        let params = FocalParams::new(2.0, 0.5);
        let mut prev = f64::INFINITY;
        for i in 1..50 {
            let v = focal_loss(i as f64 / 50.0, true, &params);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn smooth_l1_branches_and_continuity() {
        assert_eq!(smooth_l1(&[0.0; 4], &[0.0; 4]), 0.0);
        assert_eq!(smooth_l1(&[0.5, 0.0, 0.0, 0.0], &[0.0; 4]), 0.25);
        assert_eq!(smooth_l1(&[2.0, 0.0, 0.0, 0.0], &[0.0; 4]), 2.0);
        // both branches equal 1 at |x| = 1
        assert_eq!(smooth_l1(&[1.0, 0.0, 0.0, 0.0], &[0.0; 4]), 1.0);
        let just_above = smooth_l1(&[1.0 + 1e-9, 0.0, 0.0, 0.0], &[0.0; 4]);
        assert!((just_above - 1.0).abs() < 1e-8);
    }

    #[test]
    fn encode_decode_round_trip() {
        let anchor = Cube::new(31.0, 17.0, 8.0, 10.0);
        let gt = Cube::new(29.5, 19.25, 8.75, 13.0);
        let t = encode_target(&gt, &anchor);
        let back = decode_prediction(&t, &anchor);
        assert!((back.z - gt.z).abs() < 1e-12);
        assert!((back.y - gt.y).abs() < 1e-12);
        assert!((back.x - gt.x).abs() < 1e-12);
        assert!((back.d - gt.d).abs() < 1e-12);
    }

    #[test]
    fn assignment_thresholds() {
        // identical cube -> positive with IoU 1; disjoint -> negative;
        // IoU exactly 1/3 falls in the ignore band
        let gt = vec![Cube::new(10.0, 10.0, 10.0, 2.0)];
        let anchors = vec![
            Cube::new(10.0, 10.0, 10.0, 2.0), // IoU 1
            Cube::new(50.0, 50.0, 50.0, 2.0), // IoU 0
            Cube::new(10.0, 10.0, 11.0, 2.0), // IoU 1/3
        ];
        let assign = assign_anchors(&anchors, &gt);
        assert_eq!(assign[0].label, AnchorLabel::Positive);
        assert_eq!(assign[0].target, Some([0.0, 0.0, 0.0, 0.0]));
        assert_eq!(assign[1].label, AnchorLabel::Negative);
        assert_eq!(assign[2].label, AnchorLabel::Ignore);
    }

    #[test]
    fn forced_positive_rescues_orphan_gt() {
        // a small nodule can fall below the positive threshold against
        // every anchor; its best-IoU anchor is still forced positive
        let gt = vec![Cube::new(12.0, 12.0, 12.0, 4.0)];
        let anchors = vec![
            Cube::new(4.0, 4.0, 4.0, 5.0),
            Cube::new(12.0, 12.0, 15.0, 5.0), // IoU ~ 0.145, below both thresholds
            Cube::new(20.0, 20.0, 20.0, 5.0),
        ];
        let assign = assign_anchors(&anchors, &gt);
        let positives: Vec<usize> = assign
            .iter()
            .enumerate()
            .filter(|(_, a)| a.label == AnchorLabel::Positive)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(positives, vec![1], "closest anchor is forced positive");
    }

    #[test]
    fn ohem_picks_hardest_negatives() {
        assert_eq!(ohem_select(&[0.9, 0.1, 0.8, 0.2], 2), vec![0, 2]);
        assert_eq!(ohem_select(&[0.3], 2), vec![0]);
        // ties break toward the lower index, matching a full stable sort
        let probs = [0.5, 0.7, 0.5, 0.7];
        let mut oracle: Vec<usize> = (0..probs.len()).collect();
        oracle.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
        assert_eq!(ohem_select(&probs, 3), oracle[..3].to_vec());
    }

    #[test]
    fn combined_loss_hand_case() {
        // three anchors: positive, ohem-selected negative, ignored
        let labels = [AnchorLabel::Positive, AnchorLabel::Negative, AnchorLabel::Ignore];
        let cls = [0.4, 0.6, 99.0];
        let reg = [0.3, 88.0, 77.0];
        // cls mean over the two selected = 0.5; reg mean over the positive = 0.3
        let got = combined_loss(&cls, &reg, &labels, 1.0);
        assert!((got - 0.8).abs() < 1e-12);

        // no positives: pure classification mean
        let labels2 = [AnchorLabel::Negative, AnchorLabel::Negative];
        let got2 = combined_loss(&[0.2, 0.4], &[0.0, 0.0], &labels2, 1.0);
        assert!((got2 - 0.3).abs() < 1e-12);

        // everything ignored: zero
        let labels3 = [AnchorLabel::Ignore, AnchorLabel::Ignore];
        assert_eq!(combined_loss(&[1.0, 2.0], &[3.0, 4.0], &labels3, 1.0), 0.0);
    }
}
