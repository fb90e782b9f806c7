use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use avsd_core::corpus::DialogueSample;
use avsd_core::generation::{DecodeConfig, Method};
use avsd_core::metrics::{evaluate_corpus, MetricReport, Prediction};
use avsd_core::text::normalize;

use super::generate::{generate_for, load_model};
use super::with_precision;
use crate::config::RunConfig;
use crate::data;
use crate::error::{CliError, CliResult};

/// History window sizes swept by the history axis.
pub const HISTORY_ROWS: [usize; 6] = [0, 1, 2, 3, 5, 9];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// One checkpoint, history windows 0..9.
    History,
    /// One checkpoint, greedy / nucleus / beam.
    Decoding,
    /// One row per checkpoint, e.g. models trained with and without VASM.
    Checkpoints,
}

impl FromStr for Axis {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "history" => Ok(Axis::History),
            "decoding" => Ok(Axis::Decoding),
            "checkpoints" => Ok(Axis::Checkpoints),
            _ => Err(CliError::Usage(format!("unknown ablation axis `{s}` (history, decoding, checkpoints)"))),
        }
    }
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::History => "history",
            Axis::Decoding => "decoding",
            Axis::Checkpoints => "checkpoint",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub report: MetricReport,
    /// Fraction of turns whose generated answer equals the gold answer.
    pub answer_accuracy: f64,
}

fn score(cfg: &RunConfig, label: String, samples: &[DialogueSample], checkpoint: &Path) -> CliResult<AblationRow> {
    with_precision!(cfg.precision, F => {
        let (params, vocab) = load_model::<F>(cfg, checkpoint)?;
        let records = generate_for(cfg, &params, &vocab, samples)?;
        let refs = data::references(samples);
        let preds: Vec<Prediction> = records
            .iter()
            .map(|r| Prediction {
                dialogue_id: r.record.dialogue_id.clone(),
                turn: r.record.turn,
                text: r.record.text.clone(),
            })
            .collect();
        let report = evaluate_corpus(&preds, &refs, false)?;
        let hits = preds
            .iter()
            .zip(&refs)
            .filter(|(p, r)| normalize(&p.text) == normalize(&r.texts[0]))
            .count();
        Ok(AblationRow {
            label,
            report,
            answer_accuracy: hits as f64 / preds.len().max(1) as f64,
        })
    })
}

/// Sweeps one axis over the first `limit` dialogues of `split`.
pub fn run_ablation(cfg: &RunConfig, axis: Axis, checkpoints: &[PathBuf], split: &str, limit: Option<usize>) -> CliResult<Vec<AblationRow>> {
    if checkpoints.is_empty() {
        return Err(CliError::Usage("ablation needs at least one checkpoint".into()));
    }
    if axis != Axis::Checkpoints && checkpoints.len() != 1 {
        return Err(CliError::Usage(format!("the {} axis takes exactly one checkpoint", axis.name())));
    }
    let feature_dim = 2 * cfg.d_v + cfg.d_a;
    let all = data::load_all(&cfg.data_dir, Some(feature_dim))?;
    let mut samples = data::load_split(&all, &cfg.data_dir, split)?;
    if let Some(l) = limit {
        samples.truncate(l);
    }
    let mut rows = Vec::new();
    match axis {
        Axis::History => {
            for h in HISTORY_ROWS {
                let c = RunConfig { max_history: h, ..cfg.clone() };
                rows.push(score(&c, h.to_string(), &samples, &checkpoints[0])?);
            }
        }
        Axis::Decoding => {
            for m in [Method::Greedy, Method::Nucleus, Method::Beam] {
                let c = RunConfig {
                    decode: DecodeConfig { method: m, ..cfg.decode.clone() },
                    ..cfg.clone()
                };
                rows.push(score(&c, m.name().to_string(), &samples, &checkpoints[0])?);
            }
        }
        Axis::Checkpoints => {
            for ck in checkpoints {
                rows.push(score(cfg, ck.display().to_string(), &samples, ck)?);
            }
        }
    }
    Ok(rows)
}

/// Rows = axis values, columns = metrics, four decimals.
pub fn format_ablation(axis: Axis, rows: &[AblationRow]) -> String {
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(axis.name().len());
    let mut s = format!("{:<width$}", axis.name());
    for k in ["BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "ROUGE-L", "CIDEr"] {
        let _ = write!(s, " {k:>8}");
    }
    s.push_str("   AnsAcc\n");
    for r in rows {
        let _ = write!(s, "{:<width$}", r.label);
        for (_, v) in r.report.values() {
            let _ = write!(s, " {v:>8.4}");
        }
        let _ = writeln!(s, " {:>8.4}", r.answer_accuracy);
    }
    s
}
