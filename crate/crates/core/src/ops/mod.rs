//! Neural operators. Each exists as a pure tensor function and as a
//! differentiable method on [`crate::autodiff::Tape`].

pub mod activation;
pub mod concat;
pub mod context;
pub mod conv;
mod elementwise;
pub mod loss;
pub mod pool;

pub use activation::{selu, selu_derivative, selu_tensor, SELU_ALPHA, SELU_LAMBDA};
pub use concat::concat_channels;
pub use context::{context_index_map, contextual_conv, BankVars, ContextGrid, ContextLink};
pub use conv::{
    conv2d_same, conv2d_same_backward, strided_conv2d, transposed_conv2d, transposed_conv2d_backward,
    transposed_output_size, ConvFilter,
};
pub use loss::{mse_loss, softmax_cross_entropy, LabelMap};
pub use pool::{maxpool2, maxpool2_with_argmax};
