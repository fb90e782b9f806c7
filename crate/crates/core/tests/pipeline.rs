//! The public API end to end: synthetic data on disk, training, decoding and
//! scoring.

use avsd_core::corpus::{generate_synthetic, load_dataset, save_dataset, SyntheticSpec};
use avsd_core::generation::{respond, DecodeConfig, Method};
use avsd_core::metrics::{evaluate_corpus, Prediction, Reference};
use avsd_core::model::{Checkpoint, ModelConfig, ModelParams};
use avsd_core::text::Vocab;
use avsd_core::trainer::{response_stats, AdamConfig, TrainConfig, Trainer};

fn spec() -> SyntheticSpec {
    SyntheticSpec {
        n_dialogues: 16,
        turns_per_dialogue: 3,
        segments: 4,
        d_v: 4,
        d_a: 2,
        ..SyntheticSpec::default()
    }
}

#[test]
fn dataset_survives_a_disk_round_trip() {
    let (samples, _) = generate_synthetic(&spec()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let dialogs = dir.path().join("dialogs.json");
    let features = dir.path().join("features");
    save_dataset(&samples, &dialogs, &features).unwrap();
    let back = load_dataset(&dialogs, &features, Some(spec().feature_dim())).unwrap();
    assert_eq!(back, samples);
}

#[test]
fn train_decode_and_score() {
    let (samples, _) = generate_synthetic(&spec()).unwrap();
    let mut text = Vec::new();
    for s in &samples {
        text.push(s.caption.join(" "));
        for t in &s.turns {
            text.push(t.question.join(" "));
            text.push(t.answer.join(" "));
        }
    }
    let vocab = Vocab::build(text.iter().map(String::as_str), 1).unwrap();
    let cfg = ModelConfig {
        n_layers: 1,
        hidden: 16,
        n_heads: 2,
        vocab_size: vocab.len(),
        max_positions: 128,
        d_v: 4,
        d_a: 2,
        dropout: 0.0,
    };
    let tc = TrainConfig {
        batch_size: 8,
        adam: AdamConfig::with_lr(3e-3),
        dropout: false,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(ModelParams::<f32>::init(&cfg, 1).unwrap(), tc).unwrap();
    let before = response_stats(&t.params, &samples, &vocab, &t.config.assembly).unwrap();
    for _ in 0..40 {
        assert!(t.train_step(&samples, &vocab).unwrap().applied);
    }
    let after = response_stats(&t.params, &samples, &vocab, &t.config.assembly).unwrap();
    assert!(after.loss < before.loss, "{} -> {}", before.loss, after.loss);

    let restored = Checkpoint::from_bytes(&t.checkpoint().to_bytes().unwrap())
        .unwrap()
        .params::<f32>(Some(&cfg))
        .unwrap();
    assert_eq!(restored, t.params);

    let dc = DecodeConfig { method: Method::Greedy, ..DecodeConfig::default() };
    let mut preds = Vec::new();
    let mut refs = Vec::new();
    for s in &samples[..4] {
        for n in 1..=s.turns.len() {
            let h = respond(&restored, &vocab, s, n, None, &t.config.assembly, &dc).unwrap();
            preds.push(Prediction { dialogue_id: s.video_id.clone(), turn: n, text: vocab.decode(h.content()).unwrap() });
            refs.push(Reference { dialogue_id: s.video_id.clone(), turn: n, texts: vec![s.turns[n - 1].answer.join(" ")] });
        }
    }
    let report = evaluate_corpus(&preds, &refs, false).unwrap();
    for (name, v) in report.values() {
        assert!(v.is_finite() && v >= 0.0, "{name} = {v}");
    }
    assert!(report.bleu1 <= 1.0 && report.rouge_l <= 1.0);
}
