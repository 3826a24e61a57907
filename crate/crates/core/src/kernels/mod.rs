//! Numerical forward/backward kernels for every layer type used by the
//! classifiers. All kernels are pure functions of their inputs: no global
//! state, deterministic output ordering even when running on a thread pool.

mod activation;
mod conv;
mod dense;
pub(crate) mod norm;
mod pool;

pub use activation::{elu, elu_backward, sigmoid, sigmoid_bce};
pub use conv::{
    conv2d, conv2d_backward, conv2d_forward_batch, depthwise_conv2d, depthwise_conv2d_backward,
    depthwise_conv2d_forward_batch, separable_conv2d, ConvGrads, DepthwiseGrads,
};
pub use dense::{dense, dense_backward, DenseGrads};
pub use norm::{batch_norm_infer, batch_norm_infer_backward, batch_norm_train, BatchNormGrads};
pub use pool::{avg_pool2d, avg_pool2d_backward, avg_pool2d_forward_batch, pooled_extent};

use serde::{Deserialize, Serialize};

/// Spatial padding mode for convolutions (stride is fixed at 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    /// Output spatial size equals input size; zero padding split with the
    /// extra element after (TF convention for even kernels).
    Same,
    /// No padding; output shrinks by kernel-1.
    Valid,
}

impl Padding {
    /// (pad_top, pad_left, out_h, out_w) for a given input/kernel geometry.
    pub(crate) fn geometry(
        self,
        h: usize,
        w: usize,
        kh: usize,
        kw: usize,
    ) -> (usize, usize, usize, usize) {
        match self {
            Padding::Same => ((kh - 1) / 2, (kw - 1) / 2, h, w),
            Padding::Valid => (0, 0, h - kh + 1, w - kw + 1),
        }
    }
}

/// Fixed chunk size for sample-level parallelism. A constant (not derived
/// from the thread count) so reduction order, and therefore every f64 bit,
/// is identical no matter how many workers run.
pub(crate) const SAMPLE_CHUNK: usize = 8;
