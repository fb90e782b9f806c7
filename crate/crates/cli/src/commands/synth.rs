use std::fs;
use std::path::Path;

use avsd_core::corpus::{generate_synthetic, save_dataset, select, split_ids, write_manifest, SyntheticSpec};
use avsd_core::metrics::write_jsonl;

use crate::data;
use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSummary {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub vocab_size: usize,
    pub bayes_accuracy: f64,
    pub noise_floor: f64,
}

/// Writes a synthetic dataset in the on-disk layout, with split manifests,
/// a vocabulary built from the training split, reference files for the
/// held-out splits and the oracle record.
pub fn run_make_synthetic(out: &Path, spec: &SyntheticSpec, n_val: usize, n_test: usize) -> CliResult<SynthSummary> {
    let (samples, oracle) = generate_synthetic(spec)?;
    let (train, val, test) = split_ids(&samples, n_val, n_test)?;
    fs::create_dir_all(out)?;
    save_dataset(&samples, &data::dialogs_path(out), &data::features_dir(out))?;
    for (name, ids) in [("train", &train), ("val", &val), ("test", &test)] {
        write_manifest(&data::manifest_path(out, name), ids)?;
        if name != "train" {
            let refs = data::references(&select(&samples, ids)?);
            write_jsonl(&out.join(format!("{name}_refs.jsonl")), &refs)?;
        }
    }
    let train_samples = select(&samples, &train)?;
    let vocab = data::build_vocab(&train_samples)?;
    vocab.save(data::vocab_path(out))?;
    let json = serde_json::to_string_pretty(&oracle).map_err(|e| CliError::Config(e.to_string()))?;
    fs::write(data::oracle_path(out), json)?;
    Ok(SynthSummary {
        train: train.len(),
        val: val.len(),
        test: test.len(),
        vocab_size: vocab.len(),
        bayes_accuracy: oracle.bayes_accuracy,
        noise_floor: oracle.noise_floor(),
    })
}
