use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::decode::sample_nucleus;
use super::score::log_softmax;
use super::*;
use crate::batch::{SequenceBatch, Task};
use crate::corpus::{DialogueSample, Turn, VideoAudioFeatures};
use crate::model::{forward_eval, ModelConfig, ModelParams};
use crate::tensor::Tensor;
use crate::text::{Vocab, BOS, EOS, USER1_SEG, USER2_SEG};
use crate::trainer::AssemblyOptions;
use crate::Error;

/// Random but fixed next-token distributions keyed by prefix.
struct TableModel {
    vocab: usize,
    seed: u64,
    peak: f64,
    cache: HashMap<Vec<usize>, Vec<f64>>,
    calls: usize,
}

impl TableModel {
    fn new(vocab: usize, seed: u64, peak: f64) -> Self {
        Self {
            vocab,
            seed,
            peak,
            cache: HashMap::new(),
            calls: 0,
        }
    }
}

impl StepModel for TableModel {
    fn log_probs(&mut self, prefix: &[usize]) -> crate::Result<Vec<f64>> {
        self.calls += 1;
        let (vocab, seed, peak) = (self.vocab, self.seed, self.peak);
        Ok(self
            .cache
            .entry(prefix.to_vec())
            .or_insert_with(|| {
                let key = prefix.iter().fold(seed, |h, t| h.wrapping_mul(31).wrapping_add(*t as u64 + 1));
                let mut rng = ChaCha8Rng::seed_from_u64(key);
                let logits: Vec<f64> = (0..vocab).map(|_| rng.random_range(-peak..peak)).collect();
                log_softmax(&logits)
            })
            .clone())
    }
}

/// Every sequence the decoders may return: EOS-terminated within the
/// length limit, or any sequence of exactly the limit.
fn enumerate(vocab: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut frontier = vec![Vec::new()];
    for len in 1..=max_len {
        let mut next = Vec::new();
        for p in &frontier {
            for t in 0..vocab {
                let mut s: Vec<usize> = p.clone();
                s.push(t);
                if t == EOS || len == max_len {
                    out.push(s);
                } else {
                    next.push(s);
                }
            }
        }
        frontier = next;
    }
    out
}

fn chain_log_prob(model: &mut impl StepModel, tokens: &[usize]) -> f64 {
    (0..tokens.len()).map(|j| model.log_probs(&tokens[..j]).unwrap()[tokens[j]]).sum()
}

fn exhaustive_best(model: &mut impl StepModel, vocab: usize, max_len: usize, alpha: f64) -> (Vec<usize>, f64) {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for s in enumerate(vocab, max_len) {
        let score = chain_log_prob(model, &s) / (s.len() as f64).powf(alpha);
        let better = match &best {
            None => true,
            Some((b, bs)) => score > *bs || (score == *bs && s < *b),
        };
        if better {
            best = Some((s, score));
        }
    }
    best.unwrap()
}

fn cfg(method: Method, beam_size: usize, max_length: usize) -> DecodeConfig {
    DecodeConfig {
        method,
        beam_size,
        max_length,
        ..DecodeConfig::default()
    }
}

#[test]
fn exhaustive_enumeration_counts() {
    // V = 3, L = 2: one EOS-only sequence, then 2·3 length-2 sequences
    assert_eq!(enumerate(3, 2).len(), 1 + 2 * 3);
}

#[test]
fn wide_beam_finds_exhaustive_optimum() {
    for seed in 0..60 {
        let vocab = 3 + (seed as usize % 6);
        let max_len = 1 + (seed as usize % 4);
        let width = vocab.pow(max_len as u32);
        for alpha in [0.0, 0.3, 1.0] {
            let mut m = TableModel::new(vocab, seed, 3.0);
            let c = DecodeConfig {
                length_penalty: alpha,
                ..cfg(Method::Beam, width, max_len)
            };
            let got = beam_search(&mut m, &c).unwrap();
            let (want, want_score) = exhaustive_best(&mut m, vocab, max_len, alpha);
            assert_eq!(got[0].tokens, want, "seed {seed} alpha {alpha}");
            assert_eq!(got[0].score, want_score);
            assert_eq!(got.len(), enumerate(vocab, max_len).len());
        }
    }
}

#[test]
fn zero_penalty_ranks_by_log_prob() {
    let mut m = TableModel::new(5, 7, 2.0);
    let c = DecodeConfig {
        length_penalty: 0.0,
        ..cfg(Method::Beam, 125, 3)
    };
    let pool = beam_search(&mut m, &c).unwrap();
    assert!(pool.windows(2).all(|w| w[0].log_prob >= w[1].log_prob));
    assert!(pool.iter().all(|h| h.score == h.log_prob));
}

#[test]
fn beam_of_one_is_greedy() {
    for seed in 0..100 {
        let mut m = TableModel::new(6, seed, 2.0);
        let g = greedy(&mut m, &cfg(Method::Greedy, 1, 5)).unwrap();
        let b = decode(&mut m, &cfg(Method::Beam, 1, 5)).unwrap();
        assert_eq!(g, b, "seed {seed}");
    }
}

#[test]
fn greedy_follows_forced_string_and_breaks_ties_low() {
    struct Forced(Vec<usize>);
    impl StepModel for Forced {
        fn log_probs(&mut self, prefix: &[usize]) -> crate::Result<Vec<f64>> {
            let target = self.0.get(prefix.len()).copied().unwrap_or(EOS);
            let logits: Vec<f64> = (0..8).map(|t| if t == target { 50.0 } else { 0.0 }).collect();
            Ok(log_softmax(&logits))
        }
    }
    let h = greedy(&mut Forced(vec![5, 6, 4]), &cfg(Method::Greedy, 1, 10)).unwrap();
    assert_eq!(h.tokens, [5, 6, 4, EOS]);
    assert!(h.finished);
    assert_eq!(h.content(), [5, 6, 4]);

    struct Flat;
    impl StepModel for Flat {
        fn log_probs(&mut self, _: &[usize]) -> crate::Result<Vec<f64>> {
            Ok(vec![-(4f64.ln()); 4])
        }
    }
    let h = greedy(&mut Flat, &cfg(Method::Greedy, 1, 3)).unwrap();
    assert_eq!(h.tokens, [0, 0, 0]);
    assert!(h.finished, "hitting the length limit finishes a hypothesis");
    // the one-token EOS hypothesis has the best penalized score
    let b = decode(&mut Flat, &cfg(Method::Beam, 3, 3)).unwrap();
    assert_eq!(b.tokens, [EOS]);
}

#[test]
fn beam_log_probs_match_chain_rule() {
    let mut m = TableModel::new(7, 3, 2.0);
    for h in beam_search(&mut m, &cfg(Method::Beam, 4, 4)).unwrap() {
        assert!((chain_log_prob(&mut m, &h.tokens) - h.log_prob).abs() < 1e-12);
        assert!(h.finished);
        assert_eq!(h.score, penalized_score(h.log_prob, h.tokens.len(), 0.3));
    }
}

#[test]
fn nucleus_frequencies_match_distribution() {
    let probs = [0.1, 0.2, 0.3, 0.4];
    let lp: Vec<f64> = probs.iter().map(|p: &f64| p.ln()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 100_000;
    let mut counts = [0usize; 4];
    for _ in 0..n {
        counts[sample_nucleus(&lp, 1.0, &mut rng)] += 1;
    }
    for (c, p) in counts.iter().zip(probs) {
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((*c as f64 - mean).abs() <= 3.0 * sd, "{counts:?}");
    }
    // p = 0.5 keeps {0.4, 0.3} only
    let mut seen = [false; 4];
    for _ in 0..1000 {
        seen[sample_nucleus(&lp, 0.5, &mut rng)] = true;
    }
    assert_eq!(seen, [false, false, true, true]);
}

#[test]
fn tiny_nucleus_is_greedy_and_seeded() {
    for seed in 0..20 {
        let mut m = TableModel::new(6, seed, 2.0);
        let g = greedy(&mut m, &cfg(Method::Greedy, 1, 6)).unwrap();
        let c = DecodeConfig {
            nucleus_p: 1e-12,
            seed,
            ..cfg(Method::Nucleus, 1, 6)
        };
        assert_eq!(nucleus(&mut m, &c).unwrap(), g);
        let c = DecodeConfig { nucleus_p: 0.9, ..c };
        assert_eq!(nucleus(&mut m, &c).unwrap(), nucleus(&mut m, &c).unwrap());
    }
}

#[test]
fn invalid_decode_configs_are_rejected() {
    let mut m = TableModel::new(4, 0, 1.0);
    for bad in [
        cfg(Method::Beam, 0, 5),
        cfg(Method::Greedy, 1, 0),
        DecodeConfig { nucleus_p: 0.0, ..DecodeConfig::default() },
        DecodeConfig { nucleus_p: 1.5, ..DecodeConfig::default() },
    ] {
        assert!(matches!(decode(&mut m, &bad), Err(Error::Config(_))));
    }
    assert_eq!("nucleus".parse::<Method>().unwrap(), Method::Nucleus);
    assert!("topk".parse::<Method>().is_err());
}

fn tiny_model(seed: u64, vocab: usize) -> ModelParams<f64> {
    let c = ModelConfig {
        n_layers: 1,
        hidden: 8,
        n_heads: 2,
        vocab_size: vocab,
        max_positions: 32,
        d_v: 1,
        d_a: 1,
        dropout: 0.0,
    };
    ModelParams::init_with_std(&c, seed, 0.8).unwrap()
}

fn context(seed: u64, vocab: usize) -> SequenceBatch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = SequenceBatch::new(Task::Rlm);
    b.push_text(BOS, USER1_SEG);
    b.push_feature(vec![0.3, -0.2, 0.5]);
    for _ in 0..rng.random_range(1..5) {
        b.push_text(rng.random_range(0..vocab), USER1_SEG);
    }
    b.push_text(USER2_SEG, USER2_SEG);
    b
}

#[test]
fn sequence_log_prob_matches_stepwise_chain() {
    let params = tiny_model(1, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for k in 0..20 {
        let ctx = context(k, 10);
        let response: Vec<usize> = (0..rng.random_range(0..5)).map(|_| rng.random_range(0..10)).collect();
        let got = sequence_log_prob(&params, &ctx, &response).unwrap();
        // independent chain rule: one forward per prefix
        let mut want = 0.0;
        let mut b = ctx.clone();
        for &t in response.iter().chain([EOS].iter()) {
            let (logits, _) = forward_eval(&params, &b).unwrap();
            let row = logits.row(b.len() - 1);
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            want += (row[t].exp() / z).ln();
            b.push_text(t, USER2_SEG);
        }
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        assert!(got <= 0.0);
        let mut longer = response.clone();
        longer.push(4);
        let l = tokens_log_prob(&params, &ctx, &longer, USER2_SEG).unwrap();
        assert!(l <= tokens_log_prob(&params, &ctx, &response, USER2_SEG).unwrap());
    }
    let ctx = context(0, 10);
    let eos_only = sequence_log_prob(&params, &ctx, &[]).unwrap();
    let (logits, _) = forward_eval(&params, &ctx).unwrap();
    assert!((eos_only - log_softmax(logits.row(ctx.len() - 1))[EOS]).abs() < 1e-12);
}

#[test]
fn decoded_hypotheses_rescore_exactly() {
    let params = tiny_model(3, 8);
    for k in 0..10 {
        let ctx = context(k, 8);
        let mut scorer = ModelScorer::new(&params, &ctx, USER2_SEG).unwrap();
        for method in Method::ALL {
            let h = decode(&mut scorer, &DecodeConfig { seed: k, ..cfg(method, 3, 4) }).unwrap();
            let r = tokens_log_prob(&params, &ctx, &h.tokens, USER2_SEG).unwrap();
            assert!((r - h.log_prob).abs() < 1e-10, "{method:?}");
        }
    }
}

fn dialogue() -> (DialogueSample, Vocab) {
    let w = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
    let sample = DialogueSample {
        video_id: "v1".into(),
        caption: w("a man cooks"),
        turns: vec![
            Turn { question: w("what is he doing"), answer: w("he cooks") },
            Turn { question: w("is he alone"), answer: w("yes") },
        ],
        features: VideoAudioFeatures::new(Tensor::from_fn(&[3, 3], |i| i as f32 / 9.0)).unwrap(),
    };
    let vocab = Vocab::build(["a man cooks", "what is he doing", "he cooks", "is he alone", "yes"], 1).unwrap();
    (sample, vocab)
}

#[test]
fn gold_caption_substitution_is_identity() {
    let (sample, vocab) = dialogue();
    let c = ModelConfig { vocab_size: vocab.len(), ..tiny_model(0, 8).config().clone() };
    let params = ModelParams::<f64>::init_with_std(&c, 5, 0.5).unwrap();
    let opts = AssemblyOptions::default();
    let d = cfg(Method::Beam, 3, 5);
    let gold = respond(&params, &vocab, &sample, 2, None, &opts, &d).unwrap();
    let injected = respond(&params, &vocab, &sample, 2, Some(&sample.caption), &opts, &d).unwrap();
    assert_eq!(gold, injected);
    assert_eq!(gold.log_prob.to_bits(), injected.log_prob.to_bits());

    let (caption, resp) = recaption_respond(&params, &vocab, &sample, 2, &opts, &d, &d).unwrap();
    let direct = respond(&params, &vocab, &sample, 2, Some(&caption), &opts, &d).unwrap();
    assert_eq!(resp, direct);
    assert!(matches!(
        respond(&params, &vocab, &sample, 3, None, &opts, &d),
        Err(Error::Index { .. })
    ));
}

#[test]
fn decoding_beyond_capacity_fails() {
    let (sample, vocab) = dialogue();
    let c = ModelConfig { vocab_size: vocab.len(), max_positions: 24, ..tiny_model(0, 8).config().clone() };
    let params = ModelParams::<f64>::init(&c, 5).unwrap();
    let d = cfg(Method::Greedy, 1, 20);
    assert!(matches!(
        respond(&params, &vocab, &sample, 2, None, &AssemblyOptions::default(), &d),
        Err(Error::Capacity(_))
    ));
}

#[test]
fn best_score_does_not_drop_with_wider_beams() {
    for seed in 0..60 {
        let vocab = 3 + (seed as usize % 6);
        let max_len = 1 + (seed as usize % 4);
        for peak in [1.0, 4.0] {
            let mut m = TableModel::new(vocab, seed, peak);
            let mut prev = f64::NEG_INFINITY;
            for k in 1..=vocab.pow(max_len as u32).min(24) {
                let s = beam_search(&mut m, &cfg(Method::Beam, k, max_len)).unwrap()[0].score;
                assert!(s >= prev, "seed {seed} beam {k}");
                prev = s;
            }
        }
    }
}
