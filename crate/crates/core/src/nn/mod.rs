//! Small reverse-mode autodiff engine and the transformer pieces built on it.

mod gradcheck;
mod layers;
mod params;
mod tape;
mod tensor;

pub use gradcheck::gradient_check;
pub use layers::{
    layer_norm, masked_softmax, multi_head_attention, sinusoidal_position_encoding, Attention, Block,
    FeedForward, LayerNorm, Linear,
};
pub(crate) use layers::check_mask;
pub use params::{AdamConfig, ParamId, ParamStore, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use tape::{Gradients, Tape, Var, LAYER_NORM_EPS, MASK_NEG};
pub use tensor::Tensor;
