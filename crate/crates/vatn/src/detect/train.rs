//! SGD training for both detection stages.
//!
//! The proposal stage optimizes the combined objective (focal
//! classification over positives plus the hardest mined negatives, smooth
//! L1 regression over positives); the false positive reduction stage
//! optimizes plain cross-entropy (focal with gamma 0). Weights come
//! He-initialized from the model builders; runs are bit-reproducible under
//! a fixed seed.

use super::anchors::anchor_grid;
use super::fpr::FprModel;
use super::rpn::{RpnModel, RpnOutputs};
use crate::data::patches::sample_train_patch;
use crate::data::Volume;
use crate::error::{Error, Result};
use crate::graph::{Graph, Mode, ParamStore, Var};
use crate::loss::{assign_anchors, ohem_select, AnchorAssignment, AnchorLabel, FocalParams, PROB_EPS};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// SGD with momentum and L2 weight decay.
pub struct Sgd {
    velocities: Vec<Tensor<f32>>,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Sgd {
    pub fn new(store: &ParamStore<f32>, momentum: f64, weight_decay: f64) -> Self {
        Self {
            velocities: store
                .entries()
                .iter()
                .map(|e| Tensor::zeros(e.value.shape().to_vec()))
                .collect(),
            momentum,
            weight_decay,
        }
    }

    /// `v <- momentum * v + grad + wd * value; value <- value - lr * v`
    /// applied to trainable entries only.
    pub fn step(&mut self, store: &mut ParamStore<f32>, lr: f64) {
        let (mo, wd, lr) = (self.momentum as f32, self.weight_decay as f32, lr as f32);
        for (id, vel) in store.ids().zip(self.velocities.iter_mut()).collect::<Vec<_>>() {
            let entry = store.entry_mut(id);
            if !entry.trainable {
                continue;
            }
            let vd = vel.data_mut();
            let gd = entry.grad.data();
            let pd = entry.value.data_mut();
            for ((v, &g), p) in vd.iter_mut().zip(gd).zip(pd.iter_mut()) {
                *v = mo * *v + g + wd * *p;
                *p -= lr * *v;
            }
        }
    }
}

/// Piecewise-constant learning rate: the initial value until the first
/// milestone epoch, then each milestone's rate from its epoch onward.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub milestones: Vec<(usize, f64)>,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        Self {
            initial: lr,
            milestones: Vec::new(),
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let mut lr = self.initial;
        for &(at, rate) in &self.milestones {
            if epoch >= at {
                lr = rate;
            }
        }
        lr
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    /// `(mean train loss, validation loss)` per epoch.
    pub epoch_losses: Vec<(f64, f64)>,
    pub best_epoch: usize,
}

/// Focal term over selected probability rows: `-alpha * (1 - p_t)^gamma *
/// ln(p_t)`, summed.
fn focal_sum<T: crate::tensor::Scalar>(
    g: &mut Graph<T>,
    probs: Var,
    rows: Arc<Vec<usize>>,
    positive: bool,
    focal: &FocalParams,
) -> Var {
    let p = g.select_rows(probs, rows);
    let p_t = if positive {
        p
    } else {
        let neg = g.mul_scalar(p, -1.0);
        g.add_scalar(neg, 1.0)
    };
    let flip = g.mul_scalar(p_t, -1.0);
    let one_minus = g.add_scalar(flip, 1.0);
    let modulation = g.pow_const(one_minus, focal.gamma);
    let log_pt = g.ln(p_t);
    let term = g.mul(modulation, log_pt);
    let sum = g.sum_all(term);
    g.mul_scalar(sum, -focal.alpha)
}

/// Assemble the combined stage-one loss for a batch on the graph.
///
/// `assignments` holds one entry per batch element, each aligned with the
/// flattened `(A * G^3)` anchor order. Mining keeps the `ohem_n` highest-
/// probability negatives per batch element; the classification term is the
/// mean over positives plus mined negatives, the regression term the mean
/// over positives.
pub fn rpn_batch_loss<T: crate::tensor::Scalar>(
    g: &mut Graph<T>,
    outputs: &RpnOutputs,
    assignments: &[Vec<AnchorAssignment>],
    focal: &FocalParams,
    ohem_n: usize,
    lambda: f64,
) -> Var {
    let cls_shape = g.shape(outputs.cls).to_vec();
    let (n, a) = (cls_shape[0], cls_shape[1]);
    let cells: usize = cls_shape[2..].iter().product();
    let rows_per_elem = a * cells;
    assert_eq!(assignments.len(), n, "one assignment list per batch element");
    for asg in assignments {
        assert_eq!(asg.len(), rows_per_elem, "assignment length must match anchors");
    }

    let cls_rows = g.reshape(outputs.cls, vec![n * rows_per_elem, 1]);
    let probs_raw = g.sigmoid(cls_rows);
    let probs = g.clamp(probs_raw, PROB_EPS, 1.0 - PROB_EPS);

    // reshape (N, 4A, cells) -> (N, A, 4, cells) -> rows of 4
    let reg4 = g.reshape(outputs.reg, vec![n, a, 4, cells]);
    let reg_perm = g.permute(reg4, &[0, 1, 3, 2]);
    let reg_rows = g.reshape(reg_perm, vec![n * rows_per_elem, 4]);

    let prob_values = g.value(probs).clone();
    let mut pos_rows: Vec<usize> = Vec::new();
    let mut pos_targets: Vec<f64> = Vec::new();
    let mut neg_rows: Vec<usize> = Vec::new();
    for (elem, asg) in assignments.iter().enumerate() {
        let base = elem * rows_per_elem;
        let mut elem_negs: Vec<usize> = Vec::new();
        for (i, aa) in asg.iter().enumerate() {
            match aa.label {
                AnchorLabel::Positive => {
                    pos_rows.push(base + i);
                    pos_targets.extend(aa.target.expect("positive has target"));
                }
                AnchorLabel::Negative => elem_negs.push(base + i),
                AnchorLabel::Ignore => {}
            }
        }
        let neg_probs: Vec<f64> = elem_negs
            .iter()
            .map(|&r| prob_values.data()[r].as_f64())
            .collect();
        for k in ohem_select(&neg_probs, ohem_n) {
            neg_rows.push(elem_negs[k]);
        }
    }

    let selected = pos_rows.len() + neg_rows.len();
    if selected == 0 {
        return g.input(Tensor::scalar(T::zero()));
    }

    let mut cls_sum = None;
    if !pos_rows.is_empty() {
        let s = focal_sum(g, probs, Arc::new(pos_rows.clone()), true, focal);
        cls_sum = Some(s);
    }
    if !neg_rows.is_empty() {
        let s = focal_sum(g, probs, Arc::new(neg_rows), false, focal);
        cls_sum = Some(match cls_sum {
            Some(prev) => g.add(prev, s),
            None => s,
        });
    }
    let cls_mean = {
        let s = cls_sum.expect("selected > 0");
        g.mul_scalar(s, 1.0 / selected as f64)
    };

    let mut loss = g.mul_scalar(cls_mean, lambda);
    if !pos_rows.is_empty() {
        let n_pos = pos_rows.len();
        let sel = g.select_rows(reg_rows, Arc::new(pos_rows));
        let t_star = g.input(Tensor::new(
            vec![n_pos, 4],
            pos_targets.iter().map(|&v| T::from_f64(v)).collect(),
        ));
        let diff = g.sub(t_star, sel);
        let piecewise = g.smooth_l1(diff);
        let reg_sum = g.sum_all(piecewise);
        let reg_mean = g.mul_scalar(reg_sum, 1.0 / n_pos as f64);
        loss = g.add(loss, reg_mean);
    }
    loss
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RpnTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub patches_per_volume: usize,
    /// Training patch edge; must equal the model's configured patch when
    /// cross-sectional attention is active (its weights are extent-bound).
    pub patch: usize,
    pub focal: FocalParams,
    pub ohem_n: usize,
    pub lambda: f64,
    pub lr: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Probability that a sampled training patch is centered on a nodule.
    pub nodule_patch_prob: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for RpnTrainConfig {
    /// Paper-scale protocol.
    fn default() -> Self {
        Self {
            epochs: 250,
            batch_size: 7,
            patches_per_volume: 1,
            patch: 128,
            focal: FocalParams::new(2.0, 0.5),
            ohem_n: 2,
            lambda: 1.0,
            lr: LrSchedule {
                initial: 0.01,
                milestones: vec![(50, 0.001), (100, 0.0005), (150, 0.0001)],
            },
            momentum: 0.9,
            weight_decay: 1e-4,
            nodule_patch_prob: 0.7,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

impl RpnTrainConfig {
    pub fn desk() -> Self {
        Self {
            epochs: 16,
            batch_size: 2,
            patches_per_volume: 2,
            patch: 64,
            lr: LrSchedule {
                initial: 0.01,
                milestones: vec![(12, 0.001)],
            },
            ..Default::default()
        }
    }
}

struct PreparedPatch {
    data: Tensor<f32>,
    assignment: Vec<AnchorAssignment>,
}

fn prepare_patch(
    volume: &Volume,
    patch: usize,
    nodule_prob: f64,
    anchors: &[crate::boxes::Cube],
    rng: &mut ChaCha8Rng,
) -> PreparedPatch {
    let p = sample_train_patch(volume, patch, nodule_prob, rng);
    let assignment = assign_anchors(anchors, &p.annotations);
    PreparedPatch {
        data: p.data,
        assignment,
    }
}

fn batch_forward_loss(
    model: &RpnModel,
    store: &ParamStore<f32>,
    batch: &[&PreparedPatch],
    cfg: &RpnTrainConfig,
    mode: Mode,
    graph_seed: u64,
) -> (Graph<f32>, Var) {
    let b = batch.len();
    let p = cfg.patch;
    let mut data = Vec::with_capacity(b * p * p * p);
    for item in batch {
        data.extend_from_slice(item.data.data());
    }
    let mut g = Graph::with_seed(mode, graph_seed);
    let x = g.input(Tensor::new(vec![b, 1, p, p, p], data));
    let out = model.forward(&mut g, store, x);
    let assignments: Vec<Vec<AnchorAssignment>> =
        batch.iter().map(|item| item.assignment.clone()).collect();
    let loss = rpn_batch_loss(&mut g, &out, &assignments, &cfg.focal, cfg.ohem_n, cfg.lambda);
    (g, loss)
}

/// Train the proposal stage. Returns the loss history; the store ends at
/// the parameters of the best validation epoch.
pub fn train_rpn(
    model: &RpnModel,
    store: &mut ParamStore<f32>,
    volumes: &[Volume],
    cfg: &RpnTrainConfig,
) -> Result<TrainReport> {
    if volumes.is_empty() {
        return Err(Error::data("no training volumes"));
    }
    let stride = model.config.output_stride();
    if cfg.patch % stride != 0 {
        return Err(Error::config(format!(
            "train patch {} must be divisible by the output stride {stride}",
            cfg.patch
        )));
    }
    let grid = cfg.patch / stride;
    let anchors = anchor_grid([grid; 3], stride, &model.config.anchor_sizes);

    let n_val = ((volumes.len() as f64 * cfg.val_fraction).round() as usize)
        .clamp(usize::from(volumes.len() > 1), volumes.len() / 2 + 1);
    let (train_vols, val_vols) = if n_val == 0 || n_val >= volumes.len() {
        (volumes, volumes)
    } else {
        volumes.split_at(volumes.len() - n_val)
    };

    // fixed validation patches, comparable across epochs
    let mut val_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x76616c);
    let val_patches: Vec<PreparedPatch> = val_vols
        .iter()
        .flat_map(|v| {
            (0..cfg.patches_per_volume)
                .map(|_| prepare_patch(v, cfg.patch, 1.0, &anchors, &mut val_rng))
                .collect::<Vec<_>>()
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sgd = Sgd::new(store, cfg.momentum, cfg.weight_decay);
    let mut step_losses = Vec::new();
    let mut epoch_losses = Vec::new();
    let mut best = (f64::INFINITY, 0usize, store.snapshot());
    let mut step_counter = 0u64;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr.lr_at(epoch);
        let mut patches: Vec<PreparedPatch> = Vec::new();
        for v in train_vols {
            for _ in 0..cfg.patches_per_volume {
                patches.push(prepare_patch(v, cfg.patch, cfg.nodule_patch_prob, &anchors, &mut rng));
            }
        }
        let mut order: Vec<usize> = (0..patches.len()).collect();
        order.shuffle(&mut rng);

        let mut epoch_sum = 0.0;
        let mut epoch_count = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PreparedPatch> = chunk.iter().map(|&i| &patches[i]).collect();
            store.zero_grads();
            let (mut g, loss) =
                batch_forward_loss(model, store, &batch, cfg, Mode::Train, cfg.seed ^ step_counter);
            let loss_val = g.value(loss).data()[0] as f64;
            if !loss_val.is_finite() {
                return Err(Error::numerical(format!(
                    "divergence: non-finite loss {loss_val} at epoch {epoch}, step {step_counter}"
                )));
            }
            g.backward_params(loss, store);
            for (id, t) in g.take_stat_updates() {
                store.set_value(id, t);
            }
            sgd.step(store, lr);
            step_losses.push(loss_val);
            epoch_sum += loss_val;
            epoch_count += 1;
            step_counter += 1;
        }

        let mut val_sum = 0.0;
        let mut val_count = 0usize;
        for chunk in val_patches.chunks(cfg.batch_size) {
            let batch: Vec<&PreparedPatch> = chunk.iter().collect();
            let (g, loss) = batch_forward_loss(model, store, &batch, cfg, Mode::Eval, 0);
            val_sum += g.value(loss).data()[0] as f64;
            val_count += 1;
        }
        let val_loss = if val_count > 0 { val_sum / val_count as f64 } else { f64::NAN };
        let train_loss = if epoch_count > 0 { epoch_sum / epoch_count as f64 } else { f64::NAN };
        epoch_losses.push((train_loss, val_loss));
        if val_loss < best.0 {
            best = (val_loss, epoch, store.snapshot());
        }
    }

    store.restore(&best.2);
    Ok(TrainReport {
        step_losses,
        epoch_losses,
        best_epoch: best.1,
    })
}

/// One false-positive-reduction training sample: the three context crops of
/// a candidate plus its nodule/non-nodule label.
#[derive(Clone)]
pub struct FprSample {
    pub crops: [Tensor<f32>; 3],
    pub label: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FprTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub focal: FocalParams,
    pub lr: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Fraction of each batch drawn from the positive pool.
    pub pos_fraction: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for FprTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            // gamma 0 makes the focal objective plain cross-entropy
            focal: FocalParams::new(0.0, 1.0),
            lr: LrSchedule::constant(0.01),
            momentum: 0.9,
            weight_decay: 1e-4,
            pos_fraction: 0.5,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

impl FprTrainConfig {
    pub fn desk() -> Self {
        Self {
            epochs: 6,
            batch_size: 16,
            ..Default::default()
        }
    }
}

fn fpr_forward_loss(
    model: &FprModel,
    store: &ParamStore<f32>,
    samples: &[&FprSample],
    focal: &FocalParams,
    mode: Mode,
) -> (Graph<f32>, Var) {
    let b = samples.len();
    let t = model.config.resize_target;
    let mut g = Graph::new(mode);
    let crops = [0usize, 1, 2].map(|scale| {
        let mut data = Vec::with_capacity(b * t * t * t);
        for s in samples {
            data.extend_from_slice(s.crops[scale].data());
        }
        g.input(Tensor::new(vec![b, 1, t, t, t], data))
    });
    let logits = model.forward(&mut g, store, crops);
    let probs_raw = g.sigmoid(logits);
    let probs = g.clamp(probs_raw, PROB_EPS, 1.0 - PROB_EPS);

    let pos_rows: Vec<usize> = (0..b).filter(|&i| samples[i].label).collect();
    let neg_rows: Vec<usize> = (0..b).filter(|&i| !samples[i].label).collect();
    let mut sum = None;
    if !pos_rows.is_empty() {
        sum = Some(focal_sum(&mut g, probs, Arc::new(pos_rows), true, focal));
    }
    if !neg_rows.is_empty() {
        let s = focal_sum(&mut g, probs, Arc::new(neg_rows), false, focal);
        sum = Some(match sum {
            Some(prev) => g.add(prev, s),
            None => s,
        });
    }
    let total = sum.expect("non-empty batch");
    let loss = g.mul_scalar(total, 1.0 / b as f64);
    (g, loss)
}

/// Train the false positive reduction stage on labeled candidate crops.
pub fn train_fpr(
    model: &FprModel,
    store: &mut ParamStore<f32>,
    samples: &[FprSample],
    cfg: &FprTrainConfig,
) -> Result<TrainReport> {
    if samples.is_empty() {
        return Err(Error::data("no training candidates for the reduction stage"));
    }
    let n_val = ((samples.len() as f64 * cfg.val_fraction).round() as usize)
        .clamp(usize::from(samples.len() > 1), samples.len() / 2 + 1);
    let (train, val) = if n_val == 0 || n_val >= samples.len() {
        (samples, samples)
    } else {
        samples.split_at(samples.len() - n_val)
    };
    let positives: Vec<&FprSample> = train.iter().filter(|s| s.label).collect();
    let negatives: Vec<&FprSample> = train.iter().filter(|s| !s.label).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sgd = Sgd::new(store, cfg.momentum, cfg.weight_decay);
    let mut step_losses = Vec::new();
    let mut epoch_losses = Vec::new();
    let mut best = (f64::INFINITY, 0usize, store.snapshot());

    let steps_per_epoch = train.len().div_ceil(cfg.batch_size).max(1);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr.lr_at(epoch);
        let mut epoch_sum = 0.0;
        for _ in 0..steps_per_epoch {
            let batch: Vec<&FprSample> = (0..cfg.batch_size.min(train.len()))
                .map(|_| {
                    let pick_pos = rng.random::<f64>() < cfg.pos_fraction;
                    match (pick_pos, positives.is_empty(), negatives.is_empty()) {
                        (true, false, _) => positives[rng.random_range(0..positives.len())],
                        (false, _, false) => negatives[rng.random_range(0..negatives.len())],
                        (_, false, _) => positives[rng.random_range(0..positives.len())],
                        _ => negatives[rng.random_range(0..negatives.len())],
                    }
                })
                .collect();
            store.zero_grads();
            let (mut g, loss) = fpr_forward_loss(model, store, &batch, &cfg.focal, Mode::Train);
            let loss_val = g.value(loss).data()[0] as f64;
            if !loss_val.is_finite() {
                return Err(Error::numerical(format!(
                    "divergence: non-finite loss {loss_val} at epoch {epoch}"
                )));
            }
            g.backward_params(loss, store);
            for (id, t) in g.take_stat_updates() {
                store.set_value(id, t);
            }
            sgd.step(store, lr);
            step_losses.push(loss_val);
            epoch_sum += loss_val;
        }

        let mut val_sum = 0.0;
        let mut val_batches = 0usize;
        for chunk in val.chunks(cfg.batch_size) {
            let batch: Vec<&FprSample> = chunk.iter().collect();
            let (g, loss) = fpr_forward_loss(model, store, &batch, &cfg.focal, Mode::Eval);
            val_sum += g.value(loss).data()[0] as f64;
            val_batches += 1;
        }
        let val_loss = val_sum / val_batches.max(1) as f64;
        epoch_losses.push((epoch_sum / steps_per_epoch as f64, val_loss));
        if val_loss < best.0 {
            best = (val_loss, epoch, store.snapshot());
        }
    }

    store.restore(&best.2);
    Ok(TrainReport {
        step_losses,
        epoch_losses,
        best_epoch: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{combined_loss, focal_loss};

    #[test]
    fn lr_schedule_milestones() {
        let lr = LrSchedule {
            initial: 0.01,
            milestones: vec![(50, 0.001), (100, 0.0005), (150, 0.0001)],
        };
        assert_eq!(lr.lr_at(0), 0.01);
        assert_eq!(lr.lr_at(49), 0.01);
        assert_eq!(lr.lr_at(50), 0.001);
        assert_eq!(lr.lr_at(120), 0.0005);
        assert_eq!(lr.lr_at(400), 0.0001);
    }

    #[test]
    fn graph_loss_matches_pure_functions() {
        // build a fake batch of head outputs and compare the graph-assembled
        // loss against the reference arithmetic
        use crate::boxes::Cube;
        use crate::graph::Graph;

        let n = 1;
        let a = 1;
        let cells = 8; // 2x2x2 grid
        let cls = Tensor::<f64>::from_fn(vec![n, a, 2, 2, 2], |i| {
            (i[2] as f64 - 0.5) * 1.3 + i[3] as f64 * 0.7 - i[4] as f64 * 0.4
        });
        let reg = Tensor::<f64>::from_fn(vec![n, 4 * a, 2, 2, 2], |i| (i[1] as f64 * 0.1) - 0.15);

        // anchor 0 positive with a target, anchors 1..3 negative, rest ignore
        let target = [0.2, -0.1, 0.05, 0.3];
        let mut assignment = vec![
            AnchorAssignment {
                label: AnchorLabel::Ignore,
                gt_index: None,
                target: None,
            };
            cells
        ];
        assignment[0] = AnchorAssignment {
            label: AnchorLabel::Positive,
            gt_index: Some(0),
            target: Some(target),
        };
        for slot in assignment.iter_mut().take(4).skip(1) {
            *slot = AnchorAssignment {
                label: AnchorLabel::Negative,
                gt_index: None,
                target: None,
            };
        }

        let focal = FocalParams::new(2.0, 0.5);
        let mut g = Graph::<f64>::new(Mode::Eval);
        let cls_v = g.input(cls.clone());
        let reg_v = g.input(reg.clone());
        let out = RpnOutputs { cls: cls_v, reg: reg_v };
        let loss = rpn_batch_loss(&mut g, &out, &[assignment.clone()], &focal, 2, 1.0);
        let got = g.value(loss).data()[0];

        // reference: probabilities per cell
        let probs: Vec<f64> = cls.data().iter().map(|&l| 1.0 / (1.0 + (-l).exp())).collect();
        let neg_probs: Vec<f64> = (1..4).map(|i| probs[i]).collect();
        let keep = ohem_select(&neg_probs, 2);
        let mut labels = vec![AnchorLabel::Ignore; cells];
        labels[0] = AnchorLabel::Positive;
        for &k in &keep {
            labels[1 + k] = AnchorLabel::Negative;
        }
        let cls_losses: Vec<f64> = (0..cells)
            .map(|i| focal_loss(probs[i], labels[i] == AnchorLabel::Positive, &focal))
            .collect();
        // regression rows are (t_z, t_y, t_x, t_d) = channels (0..4) at cell 0
        let t_pred = [
            reg.at(&[0, 0, 0, 0, 0]),
            reg.at(&[0, 1, 0, 0, 0]),
            reg.at(&[0, 2, 0, 0, 0]),
            reg.at(&[0, 3, 0, 0, 0]),
        ];
        let mut reg_losses = vec![0.0; cells];
        reg_losses[0] = crate::loss::smooth_l1(&target, &t_pred);
        let expect = combined_loss(&cls_losses, &reg_losses, &labels, 1.0);

        assert!(
            (got - expect).abs() < 1e-10,
            "graph loss {got} vs reference {expect}"
        );
        let _ = Cube::new(1.0, 1.0, 1.0, 1.0);
    }

    #[test]
    fn sgd_zero_lr_keeps_parameters() {
        let mut store = ParamStore::<f32>::new();
        let id = store.add("w", Tensor::full(vec![3], 1.5), true);
        store.accumulate_grad(id, &Tensor::full(vec![3], 2.0));
        let mut sgd = Sgd::new(&store, 0.9, 1e-4);
        sgd.step(&mut store, 0.0);
        assert_eq!(store.value(id).data(), &[1.5, 1.5, 1.5]);
    }
}
