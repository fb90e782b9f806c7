//! Sequence assembly for the three training tasks and for decoding contexts.

use serde::{Deserialize, Serialize};

use crate::batch::{SequenceBatch, Task};
use crate::corpus::{DialogueSample, Turn, VideoAudioFeatures};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::Scalar;
use crate::text::{Vocab, BOS, CAP_SEG, EOS, USER1_SEG, USER2_SEG, VIDEO_SEG};

/// Which context parts a response conditions on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssemblyOptions {
    pub max_history: usize,
    pub include_video: bool,
    pub include_caption: bool,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self {
            max_history: 3,
            include_video: true,
            include_caption: true,
        }
    }
}

/// What goes in front of a response: optional video rows, optional caption,
/// prior turns and the current question.
#[derive(Clone, Copy, Debug)]
pub struct ContextParts<'a> {
    pub features: Option<&'a VideoAudioFeatures>,
    pub caption: Option<&'a [String]>,
    pub history: &'a [Turn],
    pub question: &'a [String],
}

fn push_features<F: Scalar>(batch: &mut SequenceBatch<F>, features: &VideoAudioFeatures) {
    for t in 0..features.segments() {
        batch.push_feature(features.row(t).iter().map(|v| F::from_f64(*v as f64)).collect());
    }
}

fn push_utterance<F: Scalar>(batch: &mut SequenceBatch<F>, speaker: usize, ids: &[usize]) {
    batch.push_text(speaker, speaker);
    for &id in ids {
        batch.push_text(id, speaker);
    }
}

fn start<F: Scalar>(task: Task, first_segment: usize) -> SequenceBatch<F> {
    let mut b = SequenceBatch::new(task);
    b.push_text(BOS, first_segment);
    b
}

fn context_layout<F: Scalar>(parts: &ContextParts<'_>, history: &[Turn], vocab: &Vocab) -> SequenceBatch<F> {
    let first = if parts.features.is_some() {
        VIDEO_SEG
    } else if parts.caption.is_some() {
        CAP_SEG
    } else {
        USER1_SEG
    };
    let mut b = start(Task::Rlm, first);
    if let Some(f) = parts.features {
        push_features(&mut b, f);
    }
    if let Some(caption) = parts.caption {
        push_utterance(&mut b, CAP_SEG, &vocab.encode_tokens(caption));
    }
    for turn in history {
        push_utterance(&mut b, USER1_SEG, &vocab.encode_tokens(&turn.question));
        push_utterance(&mut b, USER2_SEG, &vocab.encode_tokens(&turn.answer));
    }
    push_utterance(&mut b, USER1_SEG, &vocab.encode_tokens(parts.question));
    b.push_text(USER2_SEG, USER2_SEG);
    b
}

/// Builds the context a response is generated from; the sequence ends with
/// the `[user2]` marker. History is trimmed oldest-first until the context
/// plus `reserve` further positions fit in `max_positions`.
pub fn response_context<F: Scalar>(
    parts: &ContextParts<'_>,
    reserve: usize,
    vocab: &Vocab,
    config: &ModelConfig,
) -> Result<SequenceBatch<F>> {
    for skip in 0..=parts.history.len() {
        let b = context_layout(parts, &parts.history[skip..], vocab);
        if b.len() + reserve <= config.max_positions {
            return Ok(b);
        }
    }
    Err(Error::Capacity(format!(
        "response context exceeds {} positions even without history",
        config.max_positions
    )))
}

/// The prior turns used for turn `n` (1-based) under a history window.
pub fn history_window(sample: &DialogueSample, n: usize, max_history: usize) -> &[Turn] {
    let prior = &sample.turns[..n - 1];
    &prior[prior.len().saturating_sub(max_history)..]
}

/// Response language modeling for turn `n` (1-based): targets are the
/// response tokens and the closing end-of-sequence.
pub fn assemble_rlm<F: Scalar>(
    sample: &DialogueSample,
    n: usize,
    max_history: usize,
    include_video: bool,
    include_caption: bool,
    vocab: &Vocab,
    config: &ModelConfig,
) -> Result<SequenceBatch<F>> {
    if n == 0 || n > sample.turns.len() {
        return Err(Error::Index {
            index: n,
            size: sample.turns.len(),
        });
    }
    let turn = &sample.turns[n - 1];
    let response = vocab.encode_tokens(&turn.answer);
    let parts = ContextParts {
        features: include_video.then_some(&sample.features),
        caption: include_caption.then_some(sample.caption.as_slice()),
        history: history_window(sample, n, max_history),
        question: &turn.question,
    };
    let mut b = response_context(&parts, response.len() + 1, vocab, config)?;
    append_response(&mut b, &response);
    Ok(b)
}

/// Appends `response ⊕ EOS` under `[user2]` with shifted LM targets starting
/// at the current last slot.
pub fn append_response<F: Scalar>(b: &mut SequenceBatch<F>, response: &[usize]) {
    let mut prev = b.len() - 1;
    for &id in response.iter().chain(std::iter::once(&EOS)) {
        b.lm_targets[prev] = Some(id);
        b.lm_mask[prev] = true;
        b.push_text(id, USER2_SEG);
        prev = b.len() - 1;
    }
}

/// Next-feature regression. The video comes last so that the slot holding
/// row `t` sees the caption, the dialogue and rows `..=t`; its target is row
/// `t + 1`.
pub fn assemble_vasm<F: Scalar>(
    sample: &DialogueSample,
    max_history: usize,
    vocab: &Vocab,
    config: &ModelConfig,
) -> Result<SequenceBatch<F>> {
    let t_len = sample.features.segments();
    if t_len < 2 {
        return Err(Error::Skip(format!("{} has a single feature row", sample.video_id)));
    }
    let caption = vocab.encode_tokens(&sample.caption);
    let turns = &sample.turns[..max_history.min(sample.turns.len())];
    for keep in (0..=turns.len()).rev() {
        let mut b = start(Task::Vasm, CAP_SEG);
        push_utterance(&mut b, CAP_SEG, &caption);
        for turn in &turns[..keep] {
            push_utterance(&mut b, USER1_SEG, &vocab.encode_tokens(&turn.question));
            push_utterance(&mut b, USER2_SEG, &vocab.encode_tokens(&turn.answer));
        }
        if b.len() + t_len > config.max_positions {
            continue;
        }
        let offset = b.len();
        push_features(&mut b, &sample.features);
        for t in 0..t_len - 1 {
            let target = sample.features.row(t + 1).iter().map(|v| F::from_f64(*v as f64)).collect();
            b.feature_targets[offset + t] = Some(target);
            b.feature_mask[offset + t] = true;
        }
        return Ok(b);
    }
    Err(Error::Capacity(format!(
        "{}: caption and video exceed {} positions",
        sample.video_id, config.max_positions
    )))
}

/// Context for caption generation: `[BOS] ⊕ video ⊕ [cap]`.
pub fn caption_context<F: Scalar>(features: &VideoAudioFeatures) -> SequenceBatch<F> {
    let mut b = start(Task::Clm, VIDEO_SEG);
    push_features(&mut b, features);
    b.push_text(CAP_SEG, CAP_SEG);
    b
}

/// Caption language modeling conditioned on the video.
pub fn assemble_clm<F: Scalar>(sample: &DialogueSample, vocab: &Vocab, config: &ModelConfig) -> Result<SequenceBatch<F>> {
    if sample.caption.is_empty() {
        return Err(Error::Skip(format!("{} has no caption", sample.video_id)));
    }
    let caption = vocab.encode_tokens(&sample.caption);
    let mut b = caption_context(&sample.features);
    let mut prev = b.len() - 1;
    for &id in caption.iter().chain(std::iter::once(&EOS)) {
        b.lm_targets[prev] = Some(id);
        b.lm_mask[prev] = true;
        b.push_text(id, CAP_SEG);
        prev = b.len() - 1;
    }
    if b.len() > config.max_positions {
        return Err(Error::Capacity(format!(
            "{}: caption sequence of {} exceeds {} positions",
            sample.video_id,
            b.len(),
            config.max_positions
        )));
    }
    Ok(b)
}
