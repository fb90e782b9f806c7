//! A multimodal decoder-only transformer for video-grounded dialogue.
//!
//! One causal transformer consumes video-audio feature rows, a caption and
//! the dialogue history as a single sequence, and is trained jointly on
//! response language modeling, next-feature regression and caption language
//! modeling. The crate carries its own tape-based autodiff, a word-level text
//! pipeline, greedy/beam/nucleus decoding, and BLEU/ROUGE-L/CIDEr scoring.

pub mod autodiff;
pub mod error;
pub mod tensor;
pub mod text;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
pub mod batch;
pub mod corpus;
pub mod model;
pub mod generation;
pub mod metrics;
pub mod trainer;

pub use batch::{SequenceBatch, Slot, Task};
pub use model::{ModelConfig, ModelParams};
