//! Axis-aligned cube geometry in voxel coordinates.
//!
//! Nodules and anchors are cubes `(z, y, x, d)`: center plus edge length
//! (the nodule diameter). Detections carry a probability score on top.

use serde::{Deserialize, Serialize};

/// Center + edge length of an axis-aligned cube.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub z: f64,
    pub y: f64,
    pub x: f64,
    pub d: f64,
}

impl Cube {
    pub fn new(z: f64, y: f64, x: f64, d: f64) -> Self {
        assert!(d > 0.0, "cube edge must be positive, got {d}");
        Self { z, y, x, d }
    }

    pub fn volume(&self) -> f64 {
        self.d * self.d * self.d
    }

    pub fn center_distance(&self, other: &Cube) -> f64 {
        let dz = self.z - other.z;
        let dy = self.y - other.y;
        let dx = self.x - other.x;
        (dz * dz + dy * dy + dx * dx).sqrt()
    }
}

/// Candidate nodule: a cube plus its predicted probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub z: f64,
    pub y: f64,
    pub x: f64,
    pub d: f64,
    pub score: f64,
}

impl DetectionBox {
    pub fn new(z: f64, y: f64, x: f64, d: f64, score: f64) -> Self {
        assert!(d > 0.0, "diameter must be positive, got {d}");
        assert!((0.0..=1.0).contains(&score), "score must be in [0, 1], got {score}");
        Self { z, y, x, d, score }
    }

    pub fn cube(&self) -> Cube {
        Cube {
            z: self.z,
            y: self.y,
            x: self.x,
            d: self.d,
        }
    }
}

/// Intersection over union of two axis-aligned cubes.
pub fn iou3d(a: &Cube, b: &Cube) -> f64 {
    let overlap = |ca: f64, da: f64, cb: f64, db: f64| -> f64 {
        let lo = (ca - da / 2.0).max(cb - db / 2.0);
        let hi = (ca + da / 2.0).min(cb + db / 2.0);
        (hi - lo).max(0.0)
    };
    let inter = overlap(a.z, a.d, b.z, b.d) * overlap(a.y, a.d, b.y, b.d) * overlap(a.x, a.d, b.x, b.d);
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Relative-coordinate target of a ground-truth cube against an anchor:
/// `((z - z_a) / d_a, (y - y_a) / d_a, (x - x_a) / d_a, ln(d / d_a))`.
pub fn encode_target(gt: &Cube, anchor: &Cube) -> [f64; 4] {
    assert!(anchor.d > 0.0 && gt.d > 0.0, "non-positive diameter");
    [
        (gt.z - anchor.z) / anchor.d,
        (gt.y - anchor.y) / anchor.d,
        (gt.x - anchor.x) / anchor.d,
        (gt.d / anchor.d).ln(),
    ]
}

/// Exact inverse of [`encode_target`].
pub fn decode_prediction(t: &[f64; 4], anchor: &Cube) -> Cube {
    assert!(anchor.d > 0.0, "non-positive diameter");
    Cube {
        z: anchor.z + t[0] * anchor.d,
        y: anchor.y + t[1] * anchor.d,
        x: anchor.x + t[2] * anchor.d,
        d: anchor.d * t[3].exp(),
    }
}

/// Greedy non-maximum suppression by descending score: a box is suppressed
/// when its IoU with an already kept box exceeds `iou_threshold`.
pub fn nms(boxes: &[DetectionBox], iou_threshold: f64) -> Vec<DetectionBox> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        boxes[b]
            .score
            .partial_cmp(&boxes[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<DetectionBox> = Vec::new();
    for &i in &order {
        let cand = boxes[i];
        let suppressed = kept
            .iter()
            .any(|k| iou3d(&k.cube(), &cand.cube()) > iou_threshold);
        if !suppressed {
            kept.push(cand);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_identical_and_disjoint() {
        let a = Cube::new(10.0, 10.0, 10.0, 4.0);
        assert!((iou3d(&a, &a) - 1.0).abs() < 1e-12);
        let b = Cube::new(100.0, 100.0, 100.0, 4.0);
        assert_eq!(iou3d(&a, &b), 0.0);
    }

    #[test]
    fn iou_unit_shift_is_one_third() {
        // diameter-2 cubes offset by 1 along one axis:
        // intersection 1*2*2 = 4, union 8 + 8 - 4 = 12
        let a = Cube::new(0.0, 0.0, 0.0, 2.0);
        let b = Cube::new(0.0, 0.0, 1.0, 2.0);
        assert!((iou3d(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn encode_matched_pair_is_zero() {
        let a = Cube::new(20.0, 20.0, 20.0, 10.0);
        assert_eq!(encode_target(&a, &a), [0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn encode_shift_and_scale() {
        let anchor = Cube::new(20.0, 20.0, 20.0, 10.0);
        let gt = Cube::new(25.0, 20.0, 20.0, 20.0);
        let t = encode_target(&gt, &anchor);
        assert!((t[0] - 0.5).abs() < 1e-12);
        assert_eq!(t[1], 0.0);
        assert_eq!(t[2], 0.0);
        assert!((t[3] - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn nms_keeps_best_of_overlapping_pair() {
        let hi = DetectionBox::new(10.0, 10.0, 10.0, 6.0, 0.9);
        let lo = DetectionBox::new(10.0, 10.0, 11.0, 6.0, 0.8);
        assert!(iou3d(&hi.cube(), &lo.cube()) > 0.5);
        let kept = nms(&[lo, hi], 0.1);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);
    }

    #[test]
    fn nms_single_box_survives_and_is_idempotent() {
        let one = vec![DetectionBox::new(5.0, 5.0, 5.0, 3.0, 0.4)];
        assert_eq!(nms(&one, 0.1), one);
        let many = vec![
            DetectionBox::new(5.0, 5.0, 5.0, 4.0, 0.9),
            DetectionBox::new(5.0, 5.0, 6.0, 4.0, 0.8),
            DetectionBox::new(40.0, 40.0, 40.0, 4.0, 0.7),
        ];
        let once = nms(&many, 0.1);
        let twice = nms(&once, 0.1);
        assert_eq!(once, twice);
    }

    #[test]
    #[should_panic(expected = "diameter must be positive")]
    fn zero_diameter_rejected() {
        let _ = DetectionBox::new(0.0, 0.0, 0.0, 0.0, 0.5);
    }
}
