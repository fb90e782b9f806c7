//! On-disk dataset layout.
//!
//! ```text
//! DIR/dialogs.json        dialogs in the AVSD layout
//! DIR/features/ID.vaft    one feature file per video
//! DIR/{train,val,test}.txt  split manifests, one video id per line
//! DIR/vocab.txt           vocabulary, built from the training split
//! DIR/oracle.json         latent record (synthetic data only)
//! ```

use std::path::{Path, PathBuf};

use avsd_core::corpus::{load_dataset, read_manifest, select, DialogueSample};
use avsd_core::metrics::Reference;
use avsd_core::text::Vocab;

use crate::error::{CliError, CliResult};

pub fn dialogs_path(dir: &Path) -> PathBuf {
    dir.join("dialogs.json")
}

pub fn features_dir(dir: &Path) -> PathBuf {
    dir.join("features")
}

pub fn manifest_path(dir: &Path, split: &str) -> PathBuf {
    dir.join(format!("{split}.txt"))
}

pub fn vocab_path(dir: &Path) -> PathBuf {
    dir.join("vocab.txt")
}

pub fn oracle_path(dir: &Path) -> PathBuf {
    dir.join("oracle.json")
}

/// Every dialogue under `dir` with its features.
pub fn load_all(dir: &Path, feature_dim: Option<usize>) -> CliResult<Vec<DialogueSample>> {
    Ok(load_dataset(&dialogs_path(dir), &features_dir(dir), feature_dim)?)
}

/// The dialogues listed in a split manifest, in manifest order.
pub fn load_split(all: &[DialogueSample], dir: &Path, split: &str) -> CliResult<Vec<DialogueSample>> {
    let path = manifest_path(dir, split);
    if !path.exists() {
        return Err(CliError::Config(format!("split `{split}` not found at {}", path.display())));
    }
    Ok(select(all, &read_manifest(&path)?)?)
}

fn corpus_text(samples: &[DialogueSample]) -> Vec<String> {
    let mut text = Vec::new();
    for s in samples {
        text.push(s.caption.join(" "));
        for t in &s.turns {
            text.push(t.question.join(" "));
            text.push(t.answer.join(" "));
        }
    }
    text
}

pub fn build_vocab(samples: &[DialogueSample]) -> CliResult<Vocab> {
    let text = corpus_text(samples);
    Ok(Vocab::build(text.iter().map(String::as_str), 1)?)
}

/// Loads `DIR/vocab.txt`, building and saving it from the training split
/// when absent.
pub fn load_or_build_vocab(dir: &Path, train: &[DialogueSample]) -> CliResult<Vocab> {
    let path = vocab_path(dir);
    if path.exists() {
        Ok(Vocab::load(&path)?)
    } else {
        let v = build_vocab(train)?;
        v.save(&path)?;
        Ok(v)
    }
}

/// Gold answers of every turn as single-reference records.
pub fn references(samples: &[DialogueSample]) -> Vec<Reference> {
    samples
        .iter()
        .flat_map(|s| {
            s.turns.iter().enumerate().map(|(i, t)| Reference {
                dialogue_id: s.video_id.clone(),
                turn: i + 1,
                texts: vec![t.answer.join(" ")],
            })
        })
        .collect()
}
