use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use avsd_core::model::{Checkpoint, ModelParams};
use avsd_core::trainer::{response_stats, StepReport, Trainer};
use avsd_core::Scalar;

use super::with_precision;
use crate::config::RunConfig;
use crate::data;
use crate::error::{CliError, CliResult};

#[derive(Clone, Debug)]
pub struct TrainSummary {
    /// Optimizer steps completed, including any before a resume.
    pub steps: u64,
    pub last: Option<StepReport>,
    /// Feature slots assembled across all steps of this invocation.
    pub feature_slots: usize,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

fn train_impl<F: Scalar>(cfg: &RunConfig, resume: Option<&Path>, out: &mut dyn Write) -> CliResult<TrainSummary> {
    let feature_dim = 2 * cfg.d_v + cfg.d_a;
    let all = data::load_all(&cfg.data_dir, Some(feature_dim))?;
    let train = data::load_split(&all, &cfg.data_dir, "train")?;
    let val = if data::manifest_path(&cfg.data_dir, "val").exists() {
        data::load_split(&all, &cfg.data_dir, "val")?
    } else {
        Vec::new()
    };
    let vocab = data::load_or_build_vocab(&cfg.data_dir, &train)?;
    let model_cfg = cfg.model_config(vocab.len());

    let mut trainer = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.config != model_cfg {
                return Err(CliError::Config(format!(
                    "checkpoint {} was trained with a different model configuration",
                    path.display()
                )));
            }
            Trainer::<F>::resume(&ck, cfg.train_config())?
        }
        None => Trainer::new(ModelParams::<F>::init(&model_cfg, cfg.seed)?, cfg.train_config())?,
    };

    let dir = &cfg.checkpoint_dir;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("run.cfg"), cfg.to_file_string())?;
    let log_path = dir.join("train.log");
    let fresh = resume.is_none() || !log_path.exists();
    let mut log = OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(&log_path)?;
    if fresh {
        writeln!(log, "{}", StepReport::LOG_HEADER)?;
    }
    let mut val_log = if cfg.val_every > 0 && !val.is_empty() {
        let path = dir.join("val.log");
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            writeln!(f, "step\tval_loss\tval_acc")?;
        }
        Some(f)
    } else {
        None
    };

    let print_every = (cfg.steps / 20).max(1);
    let mut last = None;
    let mut feature_slots = 0;
    while trainer.step() < cfg.steps {
        let r = trainer.train_step(&train, &vocab)?;
        feature_slots += r.feature_slots;
        writeln!(log, "{}", r.log_line())?;
        if !r.applied {
            writeln!(out, "step {}: non-finite loss, update skipped", r.step)?;
        }
        if r.step % print_every == 0 || r.step == cfg.steps {
            writeln!(out, "{}", r.log_line())?;
        }
        if cfg.checkpoint_every > 0 && r.step % cfg.checkpoint_every == 0 {
            trainer.checkpoint().save(dir.join(format!("step-{}.ckpt", r.step)))?;
        }
        if let Some(f) = val_log.as_mut() {
            if r.step % cfg.val_every == 0 {
                let subset = &val[..val.len().min(cfg.val_limit)];
                let s = response_stats(&trainer.params, subset, &vocab, &cfg.assembly())?;
                writeln!(f, "{}\t{:.6}\t{:.6}", r.step, s.loss, s.accuracy)?;
            }
        }
        last = Some(r);
    }
    let checkpoint = dir.join("model.ckpt");
    trainer.checkpoint().save(&checkpoint)?;
    writeln!(out, "saved {}", checkpoint.display())?;
    Ok(TrainSummary {
        steps: trainer.step(),
        last,
        feature_slots,
        checkpoint,
        log: log_path,
    })
}

/// Trains (or resumes training) until `cfg.steps` optimizer steps are done.
/// Writes `train.log`, optional `val.log` and `step-N.ckpt` files, and the
/// final `model.ckpt` under the checkpoint directory.
pub fn run_train(cfg: &RunConfig, resume: Option<&Path>, out: &mut dyn Write) -> CliResult<TrainSummary> {
    with_precision!(cfg.precision, F => train_impl::<F>(cfg, resume, out))
}
