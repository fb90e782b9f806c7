mod ablate;
mod chat;
mod generate;
mod synth;
mod train;

pub use ablate::{format_ablation, run_ablation, AblationRow, Axis, HISTORY_ROWS};
pub use chat::run_chat;
pub use generate::{load_model, run_generate, GeneratedRecord};
pub use synth::{run_make_synthetic, SynthSummary};
pub use train::{run_train, TrainSummary};

/// Runs `$body` with the type alias `$F` bound to the configured float type.
macro_rules! with_precision {
    ($precision:expr, $F:ident => $body:expr) => {
        match $precision {
            $crate::config::Precision::F32 => {
                type $F = f32;
                $body
            }
            $crate::config::Precision::F64 => {
                type $F = f64;
                $body
            }
        }
    };
}
pub(crate) use with_precision;
