//! Corpus-level BLEU-1..4, ROUGE-L and CIDEr with multiple references.

mod report;
mod scores;

pub use report::{
    evaluate_corpus, evaluate_files, read_predictions, read_references, write_jsonl, MetricReport, Prediction,
    Reference,
};
pub use scores::{bleu, bleu_smoothed, cider, lcs_len, rouge_l, EvalCase, ROUGE_BETA};
