//! Forward and backward numeric kernels on plain tensors.
//!
//! Every differentiable kernel comes as a forward function plus exact
//! analytic backward functions. Kernels panic on shape violations; the
//! graph layer wraps them into recorded ops.
//!
//! Parallel kernels split work so each thread owns a disjoint output slab
//! and accumulates in a fixed order, which keeps results bit-identical
//! regardless of the worker count.

pub mod activation;
pub mod conv;
pub mod elementwise;
pub mod linear;
pub mod norm;
pub mod pool;
pub mod resize;

pub use activation::{activation, activation_backward, Activation};
pub use conv::{
    conv2d, conv3d, conv3d_backward_bias, conv3d_backward_input, conv3d_backward_weight,
    conv_transpose3d, conv_transpose3d_backward_input, conv_transpose3d_backward_weight,
    Conv3dSpec, ConvTranspose3dSpec,
};
pub use elementwise::{broadcast_binary, reduce_to_shape, BinaryKind};
pub use linear::{linear, linear_backward};
pub use norm::{batch_norm3d, batch_norm3d_backward, BatchNormOutput};
pub use pool::{
    adaptive_avg_pool3d, adaptive_avg_pool3d_backward, adaptive_max_pool3d, adaptive_bins,
    max_pool3d, max_pool_backward,
};
pub use resize::resize_cubic3d;
