//! Volumetric attention networks for pulmonary nodule detection.
//!
//! The crate builds a complete two-stage 3D detector from first principles:
//!
//! - [`tensor`] and [`kernels`]: dense tensors plus forward/backward numeric
//!   primitives (3D convolution, pooling, normalization, activations).
//! - [`graph`]: reverse-mode differentiation with finite-difference checking.
//! - [`attention`]: fully convolutional channel and cross-sectional spatial
//!   attention blocks, SE and CBAM baselines, residual units, zoom-in paths.
//! - [`loss`]: focal classification loss, smooth L1 regression, anchor
//!   assignment and target encoding, online hard example mining.
//! - [`detect`]: the region proposal network, the multi-scale false positive
//!   reduction network, sliding-window and test-time-augmented inference,
//!   NMS, candidate selection, and training loops.
//! - [`eval`]: FROC curves and the seven-point CPM summary.
//! - [`data`]: MetaImage volume I/O, preprocessing, augmentation, and a
//!   synthetic nodule volume generator for desk-scale experiments.
//!
//! A narrative guide with runnable examples lives in `book/`; the same
//! snippets are compiled as doc-tests of the `vatn-book` crate.

pub mod attention;
pub mod boxes;
pub mod checkpoint;
pub mod data;
pub mod detect;
pub mod error;
pub mod eval;
pub mod graph;
pub mod kernels;
pub mod loss;
pub mod tensor;

pub use error::{Error, Result};
pub use kernels::Activation;
pub use tensor::{Scalar, Tensor};
