use std::io::{BufRead, Write};
use std::path::Path;

use avsd_core::corpus::{DialogueSample, Turn};
use avsd_core::generation::{recaption_respond, respond};
use avsd_core::text::normalize;

use super::generate::load_model;
use super::with_precision;
use crate::config::RunConfig;
use crate::data;
use crate::error::{CliError, CliResult};

/// Line-oriented chat about one video. Each input line is a question and
/// gets one answer line; `/reset` clears the history, `/history k` sets
/// the history window and `/quit` ends the session.
pub fn run_chat(cfg: &RunConfig, checkpoint: &Path, video_id: &str, input: &mut dyn BufRead, out: &mut dyn Write) -> CliResult<()> {
    with_precision!(cfg.precision, F => {
        let (params, vocab) = load_model::<F>(cfg, checkpoint)?;
        let all = data::load_all(&cfg.data_dir, Some(params.config().feature_dim()))?;
        let video = all
            .into_iter()
            .find(|s| s.video_id == video_id)
            .ok_or_else(|| CliError::Config(format!("unknown video id `{video_id}`")))?;
        let mut opts = cfg.assembly();
        let mut history: Vec<Turn> = Vec::new();
        let mut line = String::new();
        loop {
            line.clear();
            if input.read_line(&mut line)? == 0 {
                return Ok(());
            }
            let text = line.trim();
            if text.is_empty() {
                continue;
            }
            if let Some(cmd) = text.strip_prefix('/') {
                let mut parts = cmd.split_whitespace();
                match (parts.next(), parts.next()) {
                    (Some("quit"), _) => return Ok(()),
                    (Some("reset"), _) => {
                        history.clear();
                        writeln!(out, "(history cleared)")?;
                    }
                    (Some("history"), Some(k)) => match k.parse() {
                        Ok(k) => {
                            opts.max_history = k;
                            writeln!(out, "(history window {k})")?;
                        }
                        Err(_) => writeln!(out, "(usage: /history <turns>)")?,
                    },
                    _ => writeln!(out, "(commands: /reset, /history <turns>, /quit)")?,
                }
                continue;
            }
            let mut turns = history.clone();
            turns.push(Turn { question: normalize(text), answer: Vec::new() });
            let sample = DialogueSample {
                video_id: video.video_id.clone(),
                caption: video.caption.clone(),
                turns,
                features: video.features.clone(),
            };
            let n = sample.turns.len();
            let h = if cfg.recaption {
                recaption_respond(&params, &vocab, &sample, n, &opts, &cfg.caption_decode(), &cfg.decode)?.1
            } else {
                respond(&params, &vocab, &sample, n, None, &opts, &cfg.decode)?
            };
            let answer = vocab.decode(h.content())?;
            writeln!(out, "{answer}")?;
            out.flush()?;
            history.push(Turn { question: normalize(text), answer: normalize(&answer) });
        }
    })
}
