//! Response scoring and greedy, beam and nucleus decoding.

mod decode;
mod score;

pub use decode::{
    beam_search, decode, greedy, nucleus, penalized_score, DecodeConfig, DecodeRecord, Hypothesis, Method,
};
pub use score::{recaption_respond, respond, sequence_log_prob, tokens_log_prob, ModelScorer, StepModel};

#[cfg(test)]
mod tests;
