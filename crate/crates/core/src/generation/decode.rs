use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::score::StepModel;
use crate::error::{Error, Result};
use crate::text::EOS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Greedy,
    Beam,
    Nucleus,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Greedy, Method::Nucleus, Method::Beam];

    pub fn name(self) -> &'static str {
        match self {
            Method::Greedy => "greedy",
            Method::Beam => "beam",
            Method::Nucleus => "nucleus",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Method::Greedy),
            "beam" => Ok(Method::Beam),
            "nucleus" => Ok(Method::Nucleus),
            _ => Err(Error::Config(format!("unknown decoding method `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub method: Method,
    pub beam_size: usize,
    pub max_length: usize,
    pub length_penalty: f64,
    pub nucleus_p: f64,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            method: Method::Beam,
            beam_size: 5,
            max_length: 20,
            length_penalty: 0.3,
            nucleus_p: 0.9,
            seed: 0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::Config("beam size must be at least 1".into()));
        }
        if self.max_length == 0 {
            return Err(Error::Config("max length must be at least 1".into()));
        }
        if !(self.nucleus_p > 0.0 && self.nucleus_p <= 1.0) {
            return Err(Error::Config(format!("nucleus p must be in (0, 1], got {}", self.nucleus_p)));
        }
        if !self.length_penalty.is_finite() {
            return Err(Error::Config("length penalty must be finite".into()));
        }
        Ok(())
    }
}

/// A decoded (possibly partial) token sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Generated ids, including the closing EOS when there is one.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
    /// `log_prob / len^α`.
    pub score: f64,
}

impl Hypothesis {
    /// Generated ids without the closing EOS.
    pub fn content(&self) -> &[usize] {
        match self.tokens.last() {
            Some(&EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

pub fn penalized_score(log_prob: f64, len: usize, alpha: f64) -> f64 {
    if len == 0 {
        log_prob
    } else {
        log_prob / (len as f64).powf(alpha)
    }
}

fn hypothesis(tokens: Vec<usize>, log_prob: f64, max_length: usize, alpha: f64) -> Hypothesis {
    let finished = tokens.last() == Some(&EOS) || tokens.len() >= max_length;
    let score = penalized_score(log_prob, tokens.len(), alpha);
    Hypothesis {
        tokens,
        log_prob,
        finished,
        score,
    }
}

/// Index of the largest value, lowest index on ties.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate() {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}

fn check_distribution(lp: &[f64]) -> Result<()> {
    if lp.is_empty() || lp.iter().any(|v| v.is_nan()) {
        return Err(Error::Numerical("next-token distribution is empty or NaN".into()));
    }
    Ok(())
}

pub fn greedy(model: &mut impl StepModel, cfg: &DecodeConfig) -> Result<Hypothesis> {
    cfg.validate()?;
    let (mut tokens, mut total) = (Vec::new(), 0.0);
    while tokens.len() < cfg.max_length {
        let lp = model.log_probs(&tokens)?;
        check_distribution(&lp)?;
        let t = argmax(&lp);
        total += lp[t];
        tokens.push(t);
        if t == EOS {
            break;
        }
    }
    Ok(hypothesis(tokens, total, cfg.max_length, cfg.length_penalty))
}

/// Higher log-prob first, then lexicographically lower ids.
fn by_log_prob(a: &(Vec<usize>, f64), b: &(Vec<usize>, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Higher penalized score first, then lower ids, then shorter.
fn by_score(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.tokens.cmp(&b.tokens))
}

/// Beam search returning every finished hypothesis, best first. Live
/// hypotheses are pruned on raw log-prob; the length penalty only ranks the
/// finished pool.
pub fn beam_search(model: &mut impl StepModel, cfg: &DecodeConfig) -> Result<Vec<Hypothesis>> {
    cfg.validate()?;
    let mut live: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 0.0)];
    let mut pool = Vec::new();
    while !live.is_empty() {
        let mut candidates = Vec::new();
        for (tokens, total) in &live {
            let lp = model.log_probs(tokens)?;
            check_distribution(&lp)?;
            for (t, v) in lp.iter().enumerate() {
                let mut next = tokens.clone();
                next.push(t);
                candidates.push((next, total + v));
            }
        }
        candidates.sort_by(by_log_prob);
        candidates.truncate(cfg.beam_size);
        live.clear();
        for (tokens, total) in candidates {
            let h = hypothesis(tokens, total, cfg.max_length, cfg.length_penalty);
            if h.finished {
                pool.push(h);
            } else {
                live.push((h.tokens, h.log_prob));
            }
        }
    }
    pool.sort_by(by_score);
    Ok(pool)
}

/// Top-p sampling: each step keeps the smallest probability-sorted prefix
/// whose mass reaches `nucleus_p` and samples from it renormalized.
pub fn nucleus(model: &mut impl StepModel, cfg: &DecodeConfig) -> Result<Hypothesis> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut tokens, mut total) = (Vec::new(), 0.0);
    while tokens.len() < cfg.max_length {
        let lp = model.log_probs(&tokens)?;
        check_distribution(&lp)?;
        let t = sample_nucleus(&lp, cfg.nucleus_p, &mut rng);
        total += lp[t];
        tokens.push(t);
        if t == EOS {
            break;
        }
    }
    Ok(hypothesis(tokens, total, cfg.max_length, cfg.length_penalty))
}

pub(crate) fn sample_nucleus(lp: &[f64], p: f64, rng: &mut impl Rng) -> usize {
    let mut order: Vec<usize> = (0..lp.len()).collect();
    order.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]).then(a.cmp(&b)));
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for &i in &order {
        let pr = lp[i].exp();
        kept.push((i, pr));
        mass += pr;
        if mass >= p {
            break;
        }
    }
    let mut u = rng.random::<f64>() * mass;
    for &(i, pr) in &kept {
        if u < pr {
            return i;
        }
        u -= pr;
    }
    kept.last().expect("non-empty distribution").0
}

/// Runs the configured method and returns its best hypothesis.
pub fn decode(model: &mut impl StepModel, cfg: &DecodeConfig) -> Result<Hypothesis> {
    match cfg.method {
        Method::Greedy => greedy(model, cfg),
        Method::Nucleus => nucleus(model, cfg),
        Method::Beam => beam_search(model, cfg)?
            .into_iter()
            .next()
            .ok_or_else(|| Error::Numerical("beam search finished no hypothesis".into())),
    }
}

/// One decoded response, as written to prediction files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeRecord {
    pub dialogue_id: String,
    pub turn: usize,
    pub method: Method,
    pub text: String,
    pub log_prob: f64,
    pub score: f64,
}
