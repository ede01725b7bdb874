//! Deterministic forward kernels for the layer types used by the bundled
//! architectures.
//!
//! Feature maps are `(C, H, W)` tensors. Every kernel is a pure function of
//! its inputs; accumulation order is fixed so results are bit-identical
//! regardless of thread count.

mod conv;
mod elementwise;
mod norm;
mod pool;

pub use conv::{conv2d, ConvParams};
pub use elementwise::{concat_channels, flatten, linear, relu, relu_in_place, softmax};
pub use norm::{batchnorm_infer, BatchNormParams};
pub use pool::{avgpool2d, maxpool2d, PoolGeometry};

/// Output extent of a sliding window, or `None` when the window never fits.
pub fn window_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if kernel == 0 || stride == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}
