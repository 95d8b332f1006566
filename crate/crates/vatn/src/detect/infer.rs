//! Inference orchestration: patch decoding, sliding-window tiling,
//! test-time augmentation, candidate selection, context crops, and
//! two-stage score ensembling.

use super::anchors::anchor_grid;
use super::fpr::FprModel;
use super::rpn::RpnModel;
use crate::boxes::{decode_prediction, nms, DetectionBox};
use crate::data::augment::CrossSection;
use crate::data::patches::{extract_patch, extract_test_tiles};
use crate::data::Volume;
use crate::graph::{Graph, Mode, ParamStore};
use crate::kernels::resize_cubic3d;
use crate::tensor::Tensor;

/// Initial candidate pool size after score sorting.
pub const TOP_K: usize = 300;
/// Candidate and final-ensemble score threshold.
pub const SCORE_THRESHOLD: f64 = 0.3;
/// IoU above which NMS suppresses an overlapping box.
pub const NMS_IOU: f64 = 0.1;

#[derive(Debug, Clone, Copy)]
pub struct InferConfig {
    pub patch: usize,
    pub overlap: usize,
    /// Raw decode threshold; boxes below it never enter the pool.
    pub score_keep_threshold: f64,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            patch: 128,
            overlap: 32,
            score_keep_threshold: 0.1,
        }
    }
}

/// Run the proposal network on one patch tensor and decode every anchor
/// with score at or above the keep threshold, in patch-local coordinates.
pub fn rpn_infer_patch(
    model: &RpnModel,
    store: &ParamStore<f32>,
    patch: &Tensor<f32>,
    keep_threshold: f64,
) -> Vec<DetectionBox> {
    let s = patch.shape();
    assert_eq!(s.len(), 3, "patch must be (D, H, W)");
    let mut g = Graph::new(Mode::Eval);
    let x = g.input(patch.reshape(vec![1, 1, s[0], s[1], s[2]]));
    let out = model.forward(&mut g, store, x);
    let cls = g.value(out.cls);
    let reg = g.value(out.reg);

    let grid = {
        let cs = cls.shape();
        [cs[2], cs[3], cs[4]]
    };
    let stride = model.config.output_stride();
    let anchors = anchor_grid(grid, stride, &model.config.anchor_sizes);
    let cells = grid[0] * grid[1] * grid[2];
    let a_count = model.config.num_anchors();

    let mut boxes = Vec::new();
    let cls_data = cls.data();
    let reg_data = reg.data();
    for a in 0..a_count {
        for cell in 0..cells {
            let logit = cls_data[a * cells + cell] as f64;
            let score = 1.0 / (1.0 + (-logit).exp());
            if score < keep_threshold {
                continue;
            }
            let t = [
                reg_data[(4 * a) * cells + cell] as f64,
                reg_data[(4 * a + 1) * cells + cell] as f64,
                reg_data[(4 * a + 2) * cells + cell] as f64,
                reg_data[(4 * a + 3) * cells + cell] as f64,
            ];
            let cube = decode_prediction(&t, &anchors[a * cells + cell]);
            boxes.push(DetectionBox::new(cube.z, cube.y, cube.x, cube.d, score));
        }
    }
    boxes
}

/// Tile the volume with overlap, run the model per tile, decode into global
/// coordinates, and deduplicate: a box is owned by the tile whose center is
/// nearest to the box center, so overlap regions report each box once.
pub fn sliding_window_infer(
    model: &RpnModel,
    store: &ParamStore<f32>,
    volume: &Volume,
    cfg: &InferConfig,
) -> Vec<DetectionBox> {
    let tiles = extract_test_tiles(volume, cfg.patch, cfg.overlap);
    let centers: Vec<[f64; 3]> = tiles
        .iter()
        .map(|t| {
            [
                t.origin[0] as f64 + cfg.patch as f64 / 2.0,
                t.origin[1] as f64 + cfg.patch as f64 / 2.0,
                t.origin[2] as f64 + cfg.patch as f64 / 2.0,
            ]
        })
        .collect();
    let [vd, vh, vw] = volume.shape();

    let mut out = Vec::new();
    for (ti, tile) in tiles.iter().enumerate() {
        let local = rpn_infer_patch(model, store, &tile.data, cfg.score_keep_threshold);
        for b in local {
            let global = DetectionBox {
                z: b.z + tile.origin[0] as f64,
                y: b.y + tile.origin[1] as f64,
                x: b.x + tile.origin[2] as f64,
                ..b
            };
            // spurious hits in zero padding
            if global.z < 0.0
                || global.z >= vd as f64
                || global.y < 0.0
                || global.y >= vh as f64
                || global.x < 0.0
                || global.x >= vw as f64
            {
                continue;
            }
            let owner = centers
                .iter()
                .enumerate()
                .min_by(|(ai, a), (bi, b2)| {
                    let da = dist2(a, &global);
                    let db = dist2(b2, &global);
                    da.partial_cmp(&db).unwrap().then(ai.cmp(bi))
                })
                .map(|(i, _)| i)
                .expect("at least one tile");
            if owner == ti {
                out.push(global);
            }
        }
    }
    out
}

fn dist2(c: &[f64; 3], b: &DetectionBox) -> f64 {
    let dz = c[0] - b.z;
    let dy = c[1] - b.y;
    let dx = c[2] - b.x;
    dz * dz + dy * dy + dx * dx
}

/// Pool detections from the axial volume and its coronal and sagittal
/// reorientations, mapped back to the original frame. The pooled set is a
/// superset of the axial-only set; downstream NMS resolves duplicates.
pub fn tta_detect(
    model: &RpnModel,
    store: &ParamStore<f32>,
    volume: &Volume,
    cfg: &InferConfig,
) -> Vec<DetectionBox> {
    let mut pool = Vec::new();
    for cs in CrossSection::ALL {
        let view = cs.apply_to_volume(volume);
        for b in sliding_window_infer(model, store, &view, cfg) {
            let cube = cs.cube_to_original(&b.cube());
            pool.push(DetectionBox {
                z: cube.z,
                y: cube.y,
                x: cube.x,
                d: cube.d,
                score: b.score,
            });
        }
    }
    pool
}

/// Keep the 300 highest-scoring boxes, drop scores below 0.3, and apply NMS
/// at IoU 0.1.
pub fn candidate_select(boxes: &[DetectionBox]) -> Vec<DetectionBox> {
    let mut sorted: Vec<DetectionBox> = boxes.to_vec();
    sorted.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(std::cmp::Ordering::Equal));
    sorted.truncate(TOP_K);
    sorted.retain(|b| b.score >= SCORE_THRESHOLD);
    nms(&sorted, NMS_IOU)
}

/// Extract the three context crops around a candidate center and resize
/// each to the common target edge. Borders are zero padded.
pub fn mlsc_crop(
    volume: &Volume,
    center: [f64; 3],
    sizes: [usize; 3],
    target: usize,
) -> [Tensor<f32>; 3] {
    let one = |size: usize| {
        let origin = [
            center[0].round() as isize - (size / 2) as isize,
            center[1].round() as isize - (size / 2) as isize,
            center[2].round() as isize - (size / 2) as isize,
        ];
        let patch = extract_patch(volume, origin, size);
        resize_cubic3d(&patch.data, [target, target, target])
    };
    [one(sizes[0]), one(sizes[1]), one(sizes[2])]
}

/// Score every candidate with the false positive reduction network.
pub fn fpr_score(
    model: &FprModel,
    store: &ParamStore<f32>,
    volume: &Volume,
    candidates: &[DetectionBox],
) -> Vec<f64> {
    if candidates.is_empty() {
        return Vec::new();
    }
    let t = model.config.resize_target;
    let mut scale_batches: Vec<Vec<f32>> = vec![Vec::new(); 3];
    for cand in candidates {
        let crops = mlsc_crop(volume, [cand.z, cand.y, cand.x], model.config.crop_sizes, t);
        for (s, crop) in scale_batches.iter_mut().zip(crops) {
            s.extend_from_slice(crop.data());
        }
    }
    let b = candidates.len();
    let mut g = Graph::new(Mode::Eval);
    let crops = [0, 1, 2].map(|i| {
        g.input(Tensor::new(
            vec![b, 1, t, t, t],
            std::mem::take(&mut scale_batches[i]),
        ))
    });
    let logits = model.forward(&mut g, store, crops);
    let probs = g.sigmoid(logits);
    g.value(probs).data().iter().map(|&p| p as f64).collect()
}

/// Average the two stage scores per candidate and keep those at or above
/// the final threshold.
pub fn ensemble_scores(
    rpn_boxes: &[DetectionBox],
    fpr_probs: &[f64],
    final_threshold: f64,
) -> Vec<DetectionBox> {
    assert_eq!(
        rpn_boxes.len(),
        fpr_probs.len(),
        "one probability per candidate required"
    );
    rpn_boxes
        .iter()
        .zip(fpr_probs)
        .filter_map(|(b, &p)| {
            let score = (b.score + p) / 2.0;
            (score >= final_threshold).then(|| DetectionBox { score, ..*b })
        })
        .collect()
}
