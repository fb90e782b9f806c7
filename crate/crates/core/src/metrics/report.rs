use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::scores::{bleu, bleu_smoothed, cider, rouge_l, EvalCase};
use crate::error::{Error, Result};
use crate::text::normalize;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub dialogue_id: String,
    pub turn: usize,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub dialogue_id: String,
    pub turn: usize,
    pub texts: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(rename = "BLEU-1")]
    pub bleu1: f64,
    #[serde(rename = "BLEU-2")]
    pub bleu2: f64,
    #[serde(rename = "BLEU-3")]
    pub bleu3: f64,
    #[serde(rename = "BLEU-4")]
    pub bleu4: f64,
    #[serde(rename = "ROUGE-L")]
    pub rouge_l: f64,
    #[serde(rename = "CIDEr")]
    pub cider: f64,
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

impl MetricReport {
    pub fn compute(cases: &[EvalCase], smooth: bool) -> Result<Self> {
        let b = |n| if smooth { bleu_smoothed(cases, n) } else { bleu(cases, n) };
        Ok(Self {
            bleu1: b(1)?,
            bleu2: b(2)?,
            bleu3: b(3)?,
            bleu4: b(4)?,
            rouge_l: rouge_l(cases)?,
            cider: cider(cases)?,
        })
    }

    pub fn values(&self) -> [(&'static str, f64); 6] {
        [
            ("BLEU-1", self.bleu1),
            ("BLEU-2", self.bleu2),
            ("BLEU-3", self.bleu3),
            ("BLEU-4", self.bleu4),
            ("ROUGE-L", self.rouge_l),
            ("CIDEr", self.cider),
        ]
    }

    /// Aligned plain-text table with one header row and one value row.
    pub fn table(&self) -> String {
        let vals = self.values();
        let header: Vec<String> = vals.iter().map(|(k, _)| format!("{k:>8}")).collect();
        let row: Vec<String> = vals.iter().map(|(_, v)| format!("{v:>8.4}")).collect();
        format!("{}\n{}\n", header.join(" "), row.join(" "))
    }

    /// The same values rounded to four decimals, as a JSON object.
    pub fn json(&self) -> String {
        let rounded = Self {
            bleu1: round4(self.bleu1),
            bleu2: round4(self.bleu2),
            bleu3: round4(self.bleu3),
            bleu4: round4(self.bleu4),
            rouge_l: round4(self.rouge_l),
            cider: round4(self.cider),
        };
        serde_json::to_string(&rounded).expect("plain struct serializes")
    }
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    read_jsonl(path)
}

pub fn read_references(path: &Path) -> Result<Vec<Reference>> {
    read_jsonl(path)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(f, "{line}")?;
    }
    Ok(())
}

/// Scores predictions against references matched on (dialogue id, turn).
/// Every key must appear exactly once on both sides.
pub fn evaluate_corpus(predictions: &[Prediction], references: &[Reference], smooth: bool) -> Result<MetricReport> {
    if predictions.is_empty() {
        return Err(Error::Alignment("empty prediction set".into()));
    }
    let mut preds = BTreeMap::new();
    for p in predictions {
        if preds.insert((p.dialogue_id.as_str(), p.turn), p).is_some() {
            return Err(Error::Alignment(format!("duplicate prediction {}#{}", p.dialogue_id, p.turn)));
        }
    }
    let mut refs = BTreeMap::new();
    for r in references {
        if refs.insert((r.dialogue_id.as_str(), r.turn), r).is_some() {
            return Err(Error::Alignment(format!("duplicate reference {}#{}", r.dialogue_id, r.turn)));
        }
        if r.texts.is_empty() {
            return Err(Error::Alignment(format!("reference {}#{} has no texts", r.dialogue_id, r.turn)));
        }
    }
    let pk: BTreeSet<_> = preds.keys().copied().collect();
    let rk: BTreeSet<_> = refs.keys().copied().collect();
    let orphans: Vec<String> = pk
        .symmetric_difference(&rk)
        .map(|(id, t)| format!("{id}#{t} ({})", if pk.contains(&(*id, *t)) { "prediction" } else { "reference" }))
        .collect();
    if !orphans.is_empty() {
        return Err(Error::Alignment(format!("unmatched records: {}", orphans.join(", "))));
    }
    let cases = preds
        .iter()
        .map(|(k, p)| EvalCase::new(normalize(&p.text), refs[k].texts.iter().map(|t| normalize(t)).collect()))
        .collect::<Result<Vec<_>>>()?;
    MetricReport::compute(&cases, smooth)
}

pub fn evaluate_files(pred_path: &Path, ref_path: &Path, smooth: bool) -> Result<MetricReport> {
    evaluate_corpus(&read_predictions(pred_path)?, &read_references(ref_path)?, smooth)
}
