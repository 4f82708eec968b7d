//! Multimodal Transformer translation toolkit: a small reverse-mode autodiff
//! engine, the encoder-decoder model with visual fusion, corpus filtering,
//! balanced BPE, beam/ensemble decoding and BLEU/chrF scoring.

pub mod bpe;
pub mod checkpoint;
pub mod corpus;
pub mod decode;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod vocab;

pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use fusion::VisualFeature;
pub use model::{Fusion, ModelConfig, Transformer};
pub use tensor::Tensor;
pub use vocab::Vocab;
