//! The causal multimodal transformer forward pass.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::params::ModelParams;
use crate::autodiff::{Tape, Var};
use crate::batch::{SequenceBatch, Slot};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub enum Mode<'a> {
    /// Deterministic: no dropout.
    Eval,
    Train { rng: &'a mut ChaCha8Rng },
}

/// Model parameters registered on a tape.
pub struct BoundParams {
    vars: HashMap<String, Var>,
}

impl BoundParams {
    /// Registers every tensor as a trainable leaf (or a constant when
    /// `trainable` is false).
    pub fn bind<F: Scalar>(tape: &mut Tape<F>, params: &ModelParams<F>, trainable: bool) -> Self {
        let vars = params
            .iter()
            .map(|(name, t)| {
                let v = if trainable {
                    tape.param(name, t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (name.to_string(), v)
            })
            .collect();
        Self { vars }
    }

    pub fn from_vars(vars: HashMap<String, Var>) -> Self {
        Self { vars }
    }

    pub fn get(&self, name: &str) -> Var {
        match self.vars.get(name) {
            Some(v) => *v,
            None => panic!("parameter {name} was not bound"),
        }
    }

    pub fn vars(&self) -> &HashMap<String, Var> {
        &self.vars
    }
}

pub struct ForwardOutput {
    /// Final hidden states `[L × H]`.
    pub hidden: Var,
    /// Tied-head logits `[L × V]`.
    pub lm_logits: Var,
    /// Regression head output `[L × feature_dim]`.
    pub feature_preds: Var,
    /// Input representation before the first block `[L × H]`.
    pub embeddings: Var,
    /// Attention probabilities `[L × L]`, layer-major then head.
    pub attention: Vec<Var>,
}

fn dropout<F: Scalar>(tape: &mut Tape<F>, x: Var, rate: f32, mode: &mut Mode<'_>) -> Result<Var> {
    match mode {
        Mode::Train { rng } if rate > 0.0 => {
            let keep = F::from_f64(1.0 / (1.0 - rate as f64));
            let n = tape.value(x).len();
            let mask = (0..n)
                .map(|_| if rng.random::<f32>() < rate { F::zero() } else { keep })
                .collect();
            tape.mask_mul(x, mask)
        }
        _ => Ok(x),
    }
}

/// Input representation: content embedding (word embedding for text, Video
/// Embedder projection for feature rows) plus positional and segment
/// embeddings.
pub fn embed_inputs<F: Scalar>(
    tape: &mut Tape<F>,
    params: &BoundParams,
    config: &ModelConfig,
    batch: &SequenceBatch<F>,
) -> Result<Var> {
    let len = batch.len();
    if len == 0 {
        return Err(Error::Dimension("empty sequence".into()));
    }
    if len > config.max_positions {
        return Err(Error::Capacity(format!(
            "position {} exceeds max_positions {}",
            len - 1,
            config.max_positions
        )));
    }
    let fdim = config.feature_dim();
    let wte = params.get("wte");

    let text_ids: Vec<usize> = batch.text_tokens().collect();
    let mut feature_data = Vec::new();
    for slot in &batch.slots {
        if let Slot::Feature(row) = slot {
            if row.len() != fdim {
                return Err(Error::Shape {
                    op: "video embedder",
                    lhs: vec![fdim],
                    rhs: vec![row.len()],
                });
            }
            feature_data.extend_from_slice(row);
        }
    }
    let n_feat = feature_data.len() / fdim.max(1);

    let text_emb = if text_ids.is_empty() {
        None
    } else {
        Some(tape.embedding(wte, &text_ids)?)
    };
    let video_emb = if n_feat == 0 {
        None
    } else {
        let rows = tape.constant(Tensor::new(vec![n_feat, fdim], feature_data)?);
        let projected = tape.matmul(rows, params.get("video.w"))?;
        Some(tape.add_row(projected, params.get("video.b"))?)
    };

    // interleave contiguous runs of text and feature rows in slot order
    let mut runs = Vec::new();
    let (mut ti, mut vi) = (0usize, 0usize);
    let mut i = 0;
    while i < len {
        let is_feat = batch.slots[i].is_feature();
        let mut j = i;
        while j < len && batch.slots[j].is_feature() == is_feat {
            j += 1;
        }
        let n = j - i;
        let run = if is_feat {
            let src = video_emb.expect("feature rows present");
            let r = if n == n_feat { src } else { tape.slice_rows(src, vi, vi + n)? };
            vi += n;
            r
        } else {
            let src = text_emb.expect("text rows present");
            let r = if n == text_ids.len() { src } else { tape.slice_rows(src, ti, ti + n)? };
            ti += n;
            r
        };
        runs.push(run);
        i = j;
    }
    let content = if runs.len() == 1 { runs[0] } else { tape.concat_rows(&runs)? };

    let segments: Vec<usize> = batch.slots.iter().map(Slot::segment).collect();
    let seg = tape.embedding(wte, &segments)?;
    let positions: Vec<usize> = (0..len).collect();
    let pos = tape.embedding(params.get("wpe"), &positions)?;
    let x = tape.add(content, pos)?;
    tape.add(x, seg)
}

fn check_finite<F: Scalar>(tape: &Tape<F>, x: Var, layer: usize) -> Result<()> {
    if tape.value(x).is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("non-finite activation after layer {layer}")))
    }
}

fn attention<F: Scalar>(
    tape: &mut Tape<F>,
    params: &BoundParams,
    config: &ModelConfig,
    layer: usize,
    x: Var,
    probs_out: &mut Vec<Var>,
) -> Result<Var> {
    let hd = config.head_dim();
    let p = |s: &str| params.get(&format!("h{layer}.{s}"));
    // No key bias: it adds the same amount to every score in a row.
    let q_all = tape.matmul(x, p("attn.q.w"))?;
    let q_all = tape.add_row(q_all, p("attn.q.b"))?;
    let k_all = tape.matmul(x, p("attn.k.w"))?;
    let v_all = tape.matmul(x, p("attn.v.w"))?;
    let v_all = tape.add_row(v_all, p("attn.v.b"))?;
    let scale = F::one() / F::from_usize(hd).sqrt();
    let mut heads = Vec::with_capacity(config.n_heads);
    for head in 0..config.n_heads {
        let (start, end) = (head * hd, (head + 1) * hd);
        let q = tape.slice_cols(q_all, start, end)?;
        let k = tape.slice_cols(k_all, start, end)?;
        let v = tape.slice_cols(v_all, start, end)?;
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, scale);
        let probs = tape.softmax(scores, true)?;
        probs_out.push(probs);
        heads.push(tape.matmul(probs, v)?);
    }
    let merged = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
    let out = tape.matmul(merged, p("attn.proj.w"))?;
    tape.add_row(out, p("attn.proj.b"))
}

/// Runs the transformer over `batch`. Position `i` attends to positions
/// `0..=i` only.
pub fn forward<F: Scalar>(
    tape: &mut Tape<F>,
    params: &BoundParams,
    config: &ModelConfig,
    batch: &SequenceBatch<F>,
    mut mode: Mode<'_>,
) -> Result<ForwardOutput> {
    let eps = F::from_f64(LAYER_NORM_EPS);
    let embeddings = embed_inputs(tape, params, config, batch)?;
    let mut x = dropout(tape, embeddings, config.dropout, &mut mode)?;
    let mut attn_probs = Vec::with_capacity(config.n_layers * config.n_heads);
    for layer in 0..config.n_layers {
        let p = |s: &str| params.get(&format!("h{layer}.{s}"));
        let a = tape.layer_norm(x, p("ln1.g"), p("ln1.b"), eps)?;
        let a = attention(tape, params, config, layer, a, &mut attn_probs)?;
        let a = dropout(tape, a, config.dropout, &mut mode)?;
        x = tape.add(x, a)?;

        let m = tape.layer_norm(x, p("ln2.g"), p("ln2.b"), eps)?;
        let m = tape.matmul(m, p("mlp.fc.w"))?;
        let m = tape.add_row(m, p("mlp.fc.b"))?;
        let m = tape.gelu(m);
        let m = tape.matmul(m, p("mlp.proj.w"))?;
        let m = tape.add_row(m, p("mlp.proj.b"))?;
        let m = dropout(tape, m, config.dropout, &mut mode)?;
        x = tape.add(x, m)?;
        check_finite(tape, x, layer)?;
    }
    let hidden = tape.layer_norm(x, params.get("ln_f.g"), params.get("ln_f.b"), eps)?;
    let wte_t = tape.transpose(params.get("wte"))?;
    let lm_logits = tape.matmul(hidden, wte_t)?;
    let preds = tape.matmul(hidden, params.get("reg.w"))?;
    let feature_preds = tape.add_row(preds, params.get("reg.b"))?;
    Ok(ForwardOutput {
        hidden,
        lm_logits,
        feature_preds,
        embeddings,
        attention: attn_probs,
    })
}

/// Eval-mode forward on a private inference tape, returning the logits and
/// feature predictions as plain tensors.
pub fn forward_eval<F: Scalar>(params: &ModelParams<F>, batch: &SequenceBatch<F>) -> Result<(Tensor<F>, Tensor<F>)> {
    let mut tape = Tape::inference();
    let bound = BoundParams::bind(&mut tape, params, false);
    let out = forward(&mut tape, &bound, params.config(), batch, Mode::Eval)?;
    Ok((tape.value(out.lm_logits).clone(), tape.value(out.feature_preds).clone()))
}
