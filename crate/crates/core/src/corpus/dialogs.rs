//! AVSD-layout dialog files and split manifests.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::features::{VideoAudioFeatures, FEATURE_EXTENSION};
use crate::error::{Error, Result};
use crate::text::normalize;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Turn {
    pub question: Vec<String>,
    pub answer: Vec<String>,
}

/// One video with its caption, dialogue turns and feature sequence. The
/// caption holds the summary followed by the caption proper.
#[derive(Clone, Debug, PartialEq)]
pub struct DialogueSample {
    pub video_id: String,
    pub caption: Vec<String>,
    pub turns: Vec<Turn>,
    pub features: VideoAudioFeatures,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QaRecord {
    pub question: String,
    pub answer: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DialogRecord {
    #[serde(alias = "video_id")]
    pub image_id: String,
    #[serde(default)]
    pub summary: Option<String>,
    #[serde(default)]
    pub caption: String,
    pub dialog: Vec<QaRecord>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct DialogFile {
    pub dialogs: Vec<DialogRecord>,
}

/// Path of the feature file for `video_id` under `dir`.
pub fn feature_path(dir: &Path, video_id: &str) -> PathBuf {
    dir.join(format!("{video_id}.{FEATURE_EXTENSION}"))
}

/// Joins summary and caption (summary first, single space).
pub fn joined_caption(summary: Option<&str>, caption: &str) -> Vec<String> {
    let mut text = summary.unwrap_or("").trim().to_string();
    if !text.is_empty() && !caption.trim().is_empty() {
        text.push(' ');
    }
    text.push_str(caption.trim());
    normalize(&text)
}

pub fn parse_dialog_file(path: &Path) -> Result<DialogFile> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })
}

/// Loads dialogues and attaches each video's features from
/// `<feature_dir>/<video_id>.vaft`.
pub fn load_dataset(dialog_path: &Path, feature_dir: &Path, expected_dim: Option<usize>) -> Result<Vec<DialogueSample>> {
    let file = parse_dialog_file(dialog_path)?;
    let mut out = Vec::with_capacity(file.dialogs.len());
    for record in file.dialogs {
        if record.dialog.is_empty() {
            return Err(Error::Malformed {
                path: dialog_path.to_path_buf(),
                line: 0,
                msg: format!("dialog for {} has no turns", record.image_id),
            });
        }
        let path = feature_path(feature_dir, &record.image_id);
        if !path.exists() {
            return Err(Error::MissingFeatures {
                video_id: record.image_id,
                path,
            });
        }
        let features = VideoAudioFeatures::read(&path, expected_dim)?;
        out.push(DialogueSample {
            caption: joined_caption(record.summary.as_deref(), &record.caption),
            turns: record
                .dialog
                .iter()
                .map(|qa| Turn {
                    question: normalize(&qa.question),
                    answer: normalize(&qa.answer),
                })
                .collect(),
            video_id: record.image_id,
            features,
        });
    }
    Ok(out)
}

/// Writes samples as a dialog file plus one feature file per video.
pub fn save_dataset(samples: &[DialogueSample], dialog_path: &Path, feature_dir: &Path) -> Result<()> {
    fs::create_dir_all(feature_dir)?;
    let file = DialogFile {
        dialogs: samples
            .iter()
            .map(|s| DialogRecord {
                image_id: s.video_id.clone(),
                summary: None,
                caption: s.caption.join(" "),
                dialog: s
                    .turns
                    .iter()
                    .map(|t| QaRecord {
                        question: t.question.join(" "),
                        answer: t.answer.join(" "),
                    })
                    .collect(),
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&file).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(dialog_path, json)?;
    for s in samples {
        s.features.write(feature_path(feature_dir, &s.video_id))?;
    }
    Ok(())
}

/// Split manifest: one video id per line.
pub fn write_manifest(path: &Path, ids: &[String]) -> Result<()> {
    let mut text = ids.join("\n");
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<String>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

/// Keeps the samples named in `ids`, in manifest order.
pub fn select(samples: &[DialogueSample], ids: &[String]) -> Result<Vec<DialogueSample>> {
    ids.iter()
        .map(|id| {
            samples
                .iter()
                .find(|s| &s.video_id == id)
                .cloned()
                .ok_or_else(|| Error::Alignment(format!("manifest names unknown video {id}")))
        })
        .collect()
}

/// Checks that no video id appears in more than one split.
pub fn check_disjoint(splits: &[&[String]]) -> Result<()> {
    let mut seen = HashSet::new();
    for split in splits {
        for id in split.iter() {
            if !seen.insert(id) {
                return Err(Error::Alignment(format!("video {id} appears in more than one split")));
            }
        }
    }
    Ok(())
}
