//! The three networks: visual feature encoder (conv stack + bidirectional
//! LSTM + projection), linguistic context encoder (embedding + LSTM +
//! projection) and the joint decoder that turns a `(f_t, g_u)` pair into a
//! distribution over the extended label set.

mod checkpoint;
mod config;
mod conv;
mod network;
mod params;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{ConvBlock, ModelConfig};
pub use network::{
    backward_pass, forward_lattice, forward_lattice_train, joint, linguistic_encode, linguistic_start_state,
    linguistic_step, visual_encode, ContextSeq, FeatureSeq, ForwardCache,
};
pub use params::{BiLstmParams, ConvParams, ModelParams, TensorMut, TensorRef};
