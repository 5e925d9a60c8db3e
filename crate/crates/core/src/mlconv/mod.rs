//! Multilayer convolutional encoder-decoder with per-layer attention.

mod checkpoint;
mod model;
mod params;

pub use checkpoint::Checkpoint;
pub use model::{
    batch_loss, bind, decode_on, decode_prefix, decode_step, embed, embed_on, encode, encode_on,
    forward_nll, nll_graph, step_rng, DecoderTrace, EncoderOutput, Mode, PairLoss,
};
pub use params::{
    shapes, DecoderLayer, EncoderLayer, ModelConfig, ModelParams, Weights, KERNEL_WIDTH,
};
