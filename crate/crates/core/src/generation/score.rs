use crate::batch::SequenceBatch;
use crate::corpus::DialogueSample;
use crate::error::{Error, Result};
use crate::model::{forward_eval, ModelParams};
use crate::tensor::Scalar;
use crate::text::{Vocab, CAP_SEG, EOS, USER2_SEG};
use crate::trainer::{caption_context, history_window, response_context, AssemblyOptions, ContextParts};

use super::decode::{decode, DecodeConfig, Hypothesis};

/// Next-token distribution given the tokens generated so far.
pub trait StepModel {
    /// Natural-log probabilities over the vocabulary.
    fn log_probs(&mut self, prefix: &[usize]) -> Result<Vec<f64>>;
}

pub(crate) fn log_softmax<F: Scalar>(row: &[F]) -> Vec<f64> {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
    let lse = max + row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v.as_f64() - lse).collect()
}

/// A trained model continuing a fixed context; generated tokens are placed
/// under `segment`.
pub struct ModelScorer<'a, F> {
    params: &'a ModelParams<F>,
    context: &'a SequenceBatch<F>,
    segment: usize,
}

impl<'a, F: Scalar> ModelScorer<'a, F> {
    pub fn new(params: &'a ModelParams<F>, context: &'a SequenceBatch<F>, segment: usize) -> Result<Self> {
        if context.is_empty() {
            return Err(Error::Dimension("empty decoding context".into()));
        }
        Ok(Self { params, context, segment })
    }

    /// Longest continuation that still fits the position table.
    pub fn room(&self) -> usize {
        self.params.config().max_positions.saturating_sub(self.context.len())
    }

    fn extended(&self, tokens: &[usize]) -> SequenceBatch<F> {
        let mut b = self.context.clone();
        for &t in tokens {
            b.push_text(t, self.segment);
        }
        b
    }
}

impl<F: Scalar> StepModel for ModelScorer<'_, F> {
    fn log_probs(&mut self, prefix: &[usize]) -> Result<Vec<f64>> {
        let b = self.extended(prefix);
        let (logits, _) = forward_eval(self.params, &b)?;
        Ok(log_softmax(logits.row(b.len() - 1)))
    }
}

/// Log-probability of `tokens` as a continuation of `context`, from a single
/// forward pass.
pub fn tokens_log_prob<F: Scalar>(params: &ModelParams<F>, context: &SequenceBatch<F>, tokens: &[usize], segment: usize) -> Result<f64> {
    let scorer = ModelScorer::new(params, context, segment)?;
    if tokens.is_empty() {
        return Ok(0.0);
    }
    let b = scorer.extended(&tokens[..tokens.len() - 1]);
    let (logits, _) = forward_eval(params, &b)?;
    let base = context.len() - 1;
    let mut total = 0.0;
    for (j, &t) in tokens.iter().enumerate() {
        let lp = log_softmax(logits.row(base + j));
        total += *lp.get(t).ok_or(Error::Index { index: t, size: lp.len() })?;
    }
    Ok(total)
}

/// `log P(response ⊕ EOS | context)`; an empty response scores the EOS alone.
pub fn sequence_log_prob<F: Scalar>(params: &ModelParams<F>, context: &SequenceBatch<F>, response: &[usize]) -> Result<f64> {
    let mut tokens = response.to_vec();
    tokens.push(EOS);
    tokens_log_prob(params, context, &tokens, USER2_SEG)
}

fn check_room<F: Scalar>(scorer: &ModelScorer<'_, F>, cfg: &DecodeConfig) -> Result<()> {
    if scorer.room() < cfg.max_length {
        return Err(Error::Capacity(format!(
            "context leaves {} positions, decoding needs {}",
            scorer.room(),
            cfg.max_length
        )));
    }
    Ok(())
}

/// Decodes a response to turn `n` (1-based). `caption` replaces the
/// sample's own caption when given; `None` with `opts.include_caption`
/// uses the gold caption.
pub fn respond<F: Scalar>(
    params: &ModelParams<F>,
    vocab: &Vocab,
    sample: &DialogueSample,
    n: usize,
    caption: Option<&[String]>,
    opts: &AssemblyOptions,
    cfg: &DecodeConfig,
) -> Result<Hypothesis> {
    if n == 0 || n > sample.turns.len() {
        return Err(Error::Index {
            index: n,
            size: sample.turns.len(),
        });
    }
    let caption = caption.or(opts.include_caption.then_some(sample.caption.as_slice()));
    let parts = ContextParts {
        features: opts.include_video.then_some(&sample.features),
        caption,
        history: history_window(sample, n, opts.max_history),
        question: &sample.turns[n - 1].question,
    };
    let context = response_context::<F>(&parts, cfg.max_length, vocab, params.config())?;
    let mut scorer = ModelScorer::new(params, &context, USER2_SEG)?;
    check_room(&scorer, cfg)?;
    decode(&mut scorer, cfg)
}

/// Two-stage inference without a gold caption: decode a caption from the
/// video, then answer turn `n` conditioned on it. Returns the caption words
/// and the response hypothesis.
pub fn recaption_respond<F: Scalar>(
    params: &ModelParams<F>,
    vocab: &Vocab,
    sample: &DialogueSample,
    n: usize,
    opts: &AssemblyOptions,
    caption_cfg: &DecodeConfig,
    response_cfg: &DecodeConfig,
) -> Result<(Vec<String>, Hypothesis)> {
    let context = caption_context::<F>(&sample.features);
    let mut scorer = ModelScorer::new(params, &context, CAP_SEG)?;
    check_room(&scorer, caption_cfg)?;
    let cap = decode(&mut scorer, caption_cfg)?;
    let words: Vec<String> = vocab
        .decode(&cap.tokens)?
        .split_whitespace()
        .map(str::to_string)
        .collect();
    let opts = AssemblyOptions {
        include_video: true,
        ..*opts
    };
    let response = respond(params, vocab, sample, n, Some(&words), &opts, response_cfg)?;
    Ok((words, response))
}
