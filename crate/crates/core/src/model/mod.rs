//! The universal multimodal transformer: config, parameters, forward pass
//! and checkpoints.

mod checkpoint;
mod config;
mod forward;
mod params;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, STATE_PREFIX};
pub use config::ModelConfig;
pub use forward::{embed_inputs, forward, forward_eval, BoundParams, ForwardOutput, Mode, LAYER_NORM_EPS};
pub use params::{inventory, Init, ModelParams, INIT_STD};
