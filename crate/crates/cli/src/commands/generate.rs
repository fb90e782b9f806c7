use std::path::Path;

use serde::{Deserialize, Serialize};

use avsd_core::corpus::DialogueSample;
use avsd_core::generation::{recaption_respond, respond, DecodeConfig, DecodeRecord, Hypothesis};
use avsd_core::model::{Checkpoint, ModelConfig, ModelParams};
use avsd_core::text::Vocab;
use avsd_core::Scalar;

use super::with_precision;
use crate::config::RunConfig;
use crate::data;
use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedRecord {
    #[serde(flatten)]
    pub record: DecodeRecord,
    /// The generated caption the response was conditioned on, in recaption
    /// mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
}

/// Loads a checkpoint and the data directory's vocabulary, checking that
/// they belong together.
pub fn load_model<F: Scalar>(cfg: &RunConfig, checkpoint: &Path) -> CliResult<(ModelParams<F>, Vocab)> {
    let ck = Checkpoint::load(checkpoint)?;
    let vocab = Vocab::load(data::vocab_path(&cfg.data_dir))?;
    if ck.config.vocab_size != vocab.len() {
        return Err(CliError::Config(format!(
            "checkpoint vocabulary has {} entries, {} has {}",
            ck.config.vocab_size,
            data::vocab_path(&cfg.data_dir).display(),
            vocab.len()
        )));
    }
    let expected = ModelConfig {
        dropout: ck.config.dropout,
        ..cfg.model_config(vocab.len())
    };
    if ck.config != expected {
        return Err(CliError::Config(format!(
            "checkpoint {} has model {:?}, the run configuration asks for {:?} (pass the run.cfg written with the checkpoint via --config)",
            checkpoint.display(),
            ck.config,
            expected
        )));
    }
    Ok((ck.params(Some(&expected))?, vocab))
}

/// Per-record seed, so nucleus sampling does not depend on decode order.
fn record_seed(base: u64, dialogue: usize, turn: usize) -> u64 {
    base.wrapping_mul(0x100_0000_01B3) ^ ((dialogue as u64) << 16 | turn as u64)
}

pub(crate) fn generate_for<F: Scalar>(
    cfg: &RunConfig,
    params: &ModelParams<F>,
    vocab: &Vocab,
    samples: &[DialogueSample],
) -> CliResult<Vec<GeneratedRecord>> {
    let opts = cfg.assembly();
    let mut out = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        for n in 1..=s.turns.len() {
            let decode = DecodeConfig {
                seed: record_seed(cfg.decode.seed, i, n),
                ..cfg.decode.clone()
            };
            let (caption, h): (Option<String>, Hypothesis) = if cfg.recaption {
                let cap_cfg = DecodeConfig {
                    seed: decode.seed,
                    ..cfg.caption_decode()
                };
                let (words, h) = recaption_respond(params, vocab, s, n, &opts, &cap_cfg, &decode)?;
                (Some(words.join(" ")), h)
            } else {
                (None, respond(params, vocab, s, n, None, &opts, &decode)?)
            };
            out.push(GeneratedRecord {
                record: DecodeRecord {
                    dialogue_id: s.video_id.clone(),
                    turn: n,
                    method: decode.method,
                    text: vocab.decode(h.content())?,
                    log_prob: h.log_prob,
                    score: h.score,
                },
                caption,
            });
        }
    }
    Ok(out)
}

/// One response per (dialogue, turn) of `split`, each conditioned on the
/// gold history.
pub fn run_generate(cfg: &RunConfig, checkpoint: &Path, split: &str, limit: Option<usize>) -> CliResult<Vec<GeneratedRecord>> {
    with_precision!(cfg.precision, F => {
        let (params, vocab) = load_model::<F>(cfg, checkpoint)?;
        let all = data::load_all(&cfg.data_dir, Some(params.config().feature_dim()))?;
        let mut samples = data::load_split(&all, &cfg.data_dir, split)?;
        if let Some(l) = limit {
            samples.truncate(l);
        }
        generate_for(cfg, &params, &vocab, &samples)
    })
}
