//! Forward and backward kernels for every layer kind in the patch network.

pub mod activation;
pub mod conv;
pub mod fc;
pub mod layer;
pub mod loss;
pub mod lrn;
pub mod pool;

pub use activation::{
    dropout_apply, dropout_backward, dropout_forward, dropout_mask, relu_backward, relu_forward,
};
pub use conv::{conv2d_backward_input, conv2d_backward_params, conv2d_forward};
pub use fc::{fc_backward_input, fc_backward_params, fc_forward};
pub use layer::{Layer, LayerAux, LayerSpec, Mode};
pub use loss::{argmax, log_sum_exp, softmax, softmax_xent, xent_grad};
pub use lrn::{lrn_backward, lrn_forward, LrnParams};
pub use pool::{maxpool_backward, maxpool_forward, PoolGeometry};
