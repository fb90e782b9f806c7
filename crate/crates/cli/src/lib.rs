//! Command-line driver: training, generation, evaluation, ablation sweeps,
//! an interactive chat and a synthetic-data generator.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;

use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use avsd_core::corpus::SyntheticSpec;
use avsd_core::metrics::{evaluate_files, write_jsonl};

pub use config::{Precision, RunConfig, Setting, DATA_ENV};
pub use error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "avsd", version, about = "Multimodal transformer for video-grounded dialogue")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every command that loads data or a model. Each flag
/// overrides the same key in `--config`.
#[derive(Args, Debug, Default)]
struct RunOpts {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Data directory (default: $AVSD_DATA, then ./data).
    #[arg(long)]
    data: Option<String>,
    /// text-only | text+video | text+video-no-caption
    #[arg(long)]
    setting: Option<String>,
    /// Generate the caption first, then answer from it.
    #[arg(long)]
    recaption: bool,
    /// Comma-separated subset of rlm,vasm,clm.
    #[arg(long)]
    tasks: Option<String>,
    #[arg(long)]
    max_history: Option<String>,
    /// greedy | beam | nucleus
    #[arg(long)]
    decode: Option<String>,
    #[arg(long)]
    beam_size: Option<String>,
    #[arg(long)]
    length_penalty: Option<String>,
    #[arg(long)]
    nucleus_p: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// f32 | f64
    #[arg(long)]
    precision: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    checkpoint_dir: Option<String>,
    /// Any other option as KEY=VALUE; may repeat.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunOpts {
    fn resolve(&self) -> CliResult<RunConfig> {
        let mut o: Vec<(String, String)> = Vec::new();
        let flags = [
            ("data", &self.data),
            ("setting", &self.setting),
            ("tasks", &self.tasks),
            ("max_history", &self.max_history),
            ("decode", &self.decode),
            ("beam_size", &self.beam_size),
            ("length_penalty", &self.length_penalty),
            ("nucleus_p", &self.nucleus_p),
            ("seed", &self.seed),
            ("precision", &self.precision),
            ("steps", &self.steps),
            ("batch_size", &self.batch_size),
            ("lr", &self.lr),
            ("checkpoint_dir", &self.checkpoint_dir),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                o.push((k.to_string(), v.clone()));
            }
        }
        if self.recaption {
            o.push(("recaption".into(), "true".into()));
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            o.push((k.trim().to_string(), v.trim().to_string()));
        }
        RunConfig::resolve(self.config.as_deref(), &o)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model on the data directory's train split.
    Train {
        #[command(flatten)]
        opts: RunOpts,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Decode a response for every turn of a split.
    Generate {
        #[command(flatten)]
        opts: RunOpts,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Prediction file (JSON lines); stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the split's gold answers as a reference file.
        #[arg(long)]
        refs: Option<PathBuf>,
        /// Only the first N dialogues.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Score predictions against references.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        refs: PathBuf,
        /// Smooth zero BLEU precisions of orders 2 and up.
        #[arg(long)]
        smooth: bool,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Sweep history length, decoding method, or a list of checkpoints.
    Ablate {
        /// history | decoding | checkpoints
        axis: String,
        #[command(flatten)]
        opts: RunOpts,
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Chat about one video on stdin/stdout.
    Chat {
        #[command(flatten)]
        opts: RunOpts,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        video: String,
    },
    /// Write a synthetic dataset with a known optimal predictor.
    MakeSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        dialogues: usize,
        #[arg(long, default_value_t = 4)]
        activities: usize,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 10)]
        turns: usize,
        #[arg(long, default_value_t = 6)]
        segments: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        val: usize,
        #[arg(long, default_value_t = 200)]
        test: usize,
    },
}

fn write_records<T: serde::Serialize>(records: &[T], path: Option<&PathBuf>, out: &mut dyn Write) -> CliResult<()> {
    match path {
        Some(p) => Ok(write_jsonl(p, records)?),
        None => {
            for r in records {
                writeln!(out, "{}", serde_json::to_string(r).map_err(|e| CliError::Config(e.to_string()))?)?;
            }
            Ok(())
        }
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, input: &mut dyn BufRead, out: &mut dyn Write) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                write!(out, "{e}")?;
                return Ok(());
            }
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            return Err(CliError::Usage(first.trim_start_matches("error: ").to_string()));
        }
    };
    match cli.command {
        Command::Train { opts, resume } => {
            let cfg = opts.resolve()?;
            let s = commands::run_train(&cfg, resume.as_deref(), out)?;
            writeln!(out, "trained {} steps, log {}", s.steps, s.log.display())?;
        }
        Command::Generate { opts, checkpoint, split, out: dest, refs, limit } => {
            let cfg = opts.resolve()?;
            let records = commands::run_generate(&cfg, &checkpoint, &split, limit)?;
            write_records(&records, dest.as_ref(), out)?;
            if let Some(r) = refs {
                let all = data::load_all(&cfg.data_dir, None)?;
                let mut samples = data::load_split(&all, &cfg.data_dir, &split)?;
                if let Some(l) = limit {
                    samples.truncate(l);
                }
                write_jsonl(&r, &data::references(&samples))?;
            }
        }
        Command::Eval { pred, refs, smooth, json } => {
            let report = evaluate_files(&pred, &refs, smooth)?;
            write!(out, "{}", report.table())?;
            writeln!(out, "{}", report.json())?;
            if let Some(p) = json {
                std::fs::write(p, report.json() + "\n")?;
            }
        }
        Command::Ablate { axis, opts, checkpoint, split, limit } => {
            let cfg = opts.resolve()?;
            let axis: commands::Axis = axis.parse()?;
            let rows = commands::run_ablation(&cfg, axis, &checkpoint, &split, limit)?;
            write!(out, "{}", commands::format_ablation(axis, &rows))?;
        }
        Command::Chat { opts, checkpoint, video } => {
            let cfg = opts.resolve()?;
            commands::run_chat(&cfg, &checkpoint, &video, input, out)?;
        }
        Command::MakeSynthetic { out: dir, dialogues, activities, noise, turns, segments, seed, val, test } => {
            let spec = SyntheticSpec {
                n_activities: activities,
                noise_std: noise,
                n_dialogues: dialogues,
                turns_per_dialogue: turns,
                segments,
                seed,
                ..SyntheticSpec::default()
            };
            let s = commands::run_make_synthetic(&dir, &spec, val, test)?;
            writeln!(
                out,
                "wrote {} (train {}, val {}, test {}), vocab {}, bayes accuracy {:.4}, noise floor {:.4}",
                dir.display(),
                s.train,
                s.val,
                s.test,
                s.vocab_size,
                s.bayes_accuracy,
                s.noise_floor
            )?;
        }
    }
    Ok(())
}
