//! Teacher-forced evaluation of a trained model.

use super::assembly::{assemble_clm, assemble_rlm, assemble_vasm, AssemblyOptions};
use crate::batch::SequenceBatch;
use crate::corpus::DialogueSample;
use crate::error::{Error, Result};
use crate::model::{forward_eval, ModelParams};
use crate::tensor::{Scalar, Tensor};
use crate::text::Vocab;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TokenStats {
    /// Mean negative log-likelihood per predicted token.
    pub loss: f64,
    /// Fraction of predicted tokens where the argmax equals the target.
    pub accuracy: f64,
    pub tokens: usize,
}

fn argmax<F: Scalar>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn accumulate<F: Scalar>(logits: &Tensor<F>, batch: &SequenceBatch<F>, nll: &mut f64, hits: &mut usize, n: &mut usize) {
    for (i, target) in batch.lm_targets.iter().enumerate() {
        let (Some(t), true) = (target, batch.lm_mask[i]) else {
            continue;
        };
        let row = logits.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let lse = max + row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
        *nll += lse - row[*t].as_f64();
        *hits += usize::from(argmax(row) == *t);
        *n += 1;
    }
}

fn finish(nll: f64, hits: usize, n: usize) -> Result<TokenStats> {
    if n == 0 {
        return Err(Error::EmptyMask("no tokens to evaluate"));
    }
    Ok(TokenStats {
        loss: nll / n as f64,
        accuracy: hits as f64 / n as f64,
        tokens: n,
    })
}

/// Response tokens (and the closing EOS) over every turn of every sample.
pub fn response_stats<F: Scalar>(
    params: &ModelParams<F>,
    samples: &[DialogueSample],
    vocab: &Vocab,
    opts: &AssemblyOptions,
) -> Result<TokenStats> {
    let (mut nll, mut hits, mut n) = (0.0, 0, 0);
    for s in samples {
        for turn in 1..=s.turns.len() {
            let b = assemble_rlm::<F>(s, turn, opts.max_history, opts.include_video, opts.include_caption, vocab, params.config())?;
            let (logits, _) = forward_eval(params, &b)?;
            accumulate(&logits, &b, &mut nll, &mut hits, &mut n);
        }
    }
    finish(nll, hits, n)
}

/// Caption tokens (and the closing EOS) given the video.
pub fn caption_stats<F: Scalar>(params: &ModelParams<F>, samples: &[DialogueSample], vocab: &Vocab) -> Result<TokenStats> {
    let (mut nll, mut hits, mut n) = (0.0, 0, 0);
    for s in samples {
        match assemble_clm::<F>(s, vocab, params.config()) {
            Ok(b) => {
                let (logits, _) = forward_eval(params, &b)?;
                accumulate(&logits, &b, &mut nll, &mut hits, &mut n);
            }
            Err(Error::Skip(_)) => {}
            Err(e) => return Err(e),
        }
    }
    finish(nll, hits, n)
}

/// Mean squared Euclidean error of next-feature predictions over all
/// predicted rows.
pub fn feature_mse<F: Scalar>(params: &ModelParams<F>, samples: &[DialogueSample], vocab: &Vocab, max_history: usize) -> Result<f64> {
    let (mut total, mut n) = (0.0, 0usize);
    for s in samples {
        let b = match assemble_vasm::<F>(s, max_history, vocab, params.config()) {
            Ok(b) => b,
            Err(Error::Skip(_)) => continue,
            Err(e) => return Err(e),
        };
        let (_, preds) = forward_eval(params, &b)?;
        for (i, target) in b.feature_targets.iter().enumerate() {
            if let (Some(t), true) = (target, b.feature_mask[i]) {
                total += preds.row(i).iter().zip(t).map(|(p, y)| (p.as_f64() - y.as_f64()).powi(2)).sum::<f64>();
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask("no feature targets to evaluate"));
    }
    Ok(total / n as f64)
}
