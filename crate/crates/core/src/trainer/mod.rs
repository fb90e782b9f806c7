//! Sequence assembly, task losses, optimization and training loops.

mod adam;
mod assembly;
mod evaluate;
mod loss;
mod train;

pub use adam::{adam_apply, AdamConfig, AdamState};
pub use assembly::{
    append_response, assemble_clm, assemble_rlm, assemble_vasm, caption_context, history_window, response_context,
    AssemblyOptions, ContextParts,
};
pub use evaluate::{caption_stats, feature_mse, response_stats, TokenStats};
pub use loss::{clm_loss, rlm_loss, target_count, task_loss, vasm_loss};
pub use train::{multitask_loss, train_step, MultitaskLoss, StepReport, TrainConfig, Trainer};
