//! Two-stage detection: candidate proposal, false positive reduction, and
//! everything that wires them together at inference and training time.

pub mod anchors;
pub mod fpr;
pub mod infer;
pub mod rpn;
pub mod train;

pub use anchors::{anchor_grid, AnchorSpec};
pub use fpr::{FprConfig, FprModel};
pub use infer::{
    candidate_select, ensemble_scores, fpr_score, mlsc_crop, rpn_infer_patch,
    sliding_window_infer, tta_detect, InferConfig, NMS_IOU, SCORE_THRESHOLD, TOP_K,
};
pub use rpn::{RpnConfig, RpnModel, RpnOutputs};
pub use train::{
    train_fpr, train_rpn, FprSample, FprTrainConfig, LrSchedule, RpnTrainConfig, Sgd, TrainReport,
};
