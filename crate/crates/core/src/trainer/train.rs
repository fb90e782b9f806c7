//! Multi-task training steps and the checkpointed training loop.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::assembly::{assemble_clm, assemble_rlm, assemble_vasm, AssemblyOptions};
use super::loss::{target_count, task_loss};
use crate::autodiff::{Tape, Var};
use crate::batch::{SequenceBatch, Task};
use crate::corpus::DialogueSample;
use crate::error::{Error, Result};
use crate::model::{forward, BoundParams, Checkpoint, Mode, ModelConfig, ModelParams, STATE_PREFIX};
use crate::tensor::{Scalar, Tensor};
use crate::text::Vocab;

/// Outcome of one optimization step. Losses are `None` for tasks that had
/// no batch in the step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub losses: [Option<f64>; 3],
    pub total: f64,
    pub grad_norm: f64,
    /// False when the loss or gradient was non-finite and the update was
    /// skipped.
    pub applied: bool,
    /// Feature slots across every sequence of the step.
    pub feature_slots: usize,
}

impl StepReport {
    pub const LOG_HEADER: &'static str = "step\tL_RLM\tL_VASM\tL_CLM\ttotal\tgrad_norm";

    /// Tab-separated log line; inactive tasks print `-`.
    pub fn log_line(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
        format!(
            "{}\t{}\t{}\t{}\t{:.6}\t{:.6}",
            self.step,
            f(self.losses[0]),
            f(self.losses[1]),
            f(self.losses[2]),
            self.total,
            self.grad_norm
        )
    }
}

/// Per-task losses (token-weighted means over the sequences of each task)
/// and their λ-weighted sum, built on `tape`.
pub struct MultitaskLoss {
    pub total: Var,
    pub tasks: [Option<Var>; 3],
}

pub fn multitask_loss<F: Scalar>(
    tape: &mut Tape<F>,
    bound: &BoundParams,
    config: &ModelConfig,
    batches: &[SequenceBatch<F>],
    weights: [f64; 3],
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<MultitaskLoss> {
    let mut tasks = [None; 3];
    let mut total: Option<Var> = None;
    for task in Task::ALL {
        let mine: Vec<&SequenceBatch<F>> = batches.iter().filter(|b| b.task == task).collect();
        if mine.is_empty() || weights[task.index()] == 0.0 {
            continue;
        }
        let n_total: usize = mine.iter().map(|b| target_count(b)).sum();
        if n_total == 0 {
            return Err(Error::EmptyMask("task has no prediction targets"));
        }
        let mut acc: Option<Var> = None;
        for b in mine {
            let mode = match rng.as_deref_mut() {
                Some(r) => Mode::Train { rng: r },
                None => Mode::Eval,
            };
            let out = forward(tape, bound, config, b, mode)?;
            let l = task_loss(tape, out.lm_logits, out.feature_preds, b)?;
            let l = tape.scale(l, F::from_f64(target_count(b) as f64 / n_total as f64));
            acc = Some(match acc {
                Some(a) => tape.add(a, l)?,
                None => l,
            });
        }
        let l = acc.expect("at least one batch");
        tasks[task.index()] = Some(l);
        let weighted = tape.scale(l, F::from_f64(weights[task.index()]));
        total = Some(match total {
            Some(t) => tape.add(t, weighted)?,
            None => weighted,
        });
    }
    let total = total.ok_or_else(|| Error::Config("no active task in the step".into()))?;
    Ok(MultitaskLoss { total, tasks })
}

fn global_norm<F: Scalar>(grads: &BTreeMap<String, Tensor<F>>) -> f64 {
    grads
        .values()
        .flat_map(|g| g.data())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// One combined step: weighted loss, one backward pass, optional global
/// gradient-norm clipping, one Adam update. Dropout is active when `rng` is
/// given. A non-finite loss or gradient leaves params and optimizer
/// untouched and is reported with `applied = false`.
pub fn train_step<F: Scalar>(
    batches: &[SequenceBatch<F>],
    params: &mut ModelParams<F>,
    adam: &mut AdamState<F>,
    weights: [f64; 3],
    clip: Option<f64>,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<StepReport> {
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params, true);
    let loss = multitask_loss(&mut tape, &bound, params.config(), batches, weights, rng)?;
    let value = |v: Var| tape.value(v).item().as_f64();
    let mut report = StepReport {
        step: adam.t,
        losses: loss.tasks.map(|t| t.map(value)),
        total: value(loss.total),
        grad_norm: f64::NAN,
        applied: false,
        feature_slots: batches.iter().map(|b| b.feature_slot_count()).sum(),
    };
    if !report.total.is_finite() {
        return Ok(report);
    }
    let mut grads = tape.backward(loss.total)?;
    drop(tape);
    for (name, p) in params.iter() {
        grads.entry(name.to_string()).or_insert_with(|| Tensor::zeros(p.shape()));
    }
    let norm = global_norm(&grads);
    report.grad_norm = norm;
    if !norm.is_finite() {
        return Ok(report);
    }
    if let Some(c) = clip {
        if norm > c {
            let s = F::from_f64(c / norm);
            for g in grads.values_mut() {
                g.data_mut().iter_mut().for_each(|v| *v *= s);
            }
        }
    }
    adam.update(params, &grads)?;
    report.step = adam.t;
    report.applied = true;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub seed: u64,
    /// λ for RLM, VASM, CLM.
    pub weights: [f64; 3],
    pub clip: Option<f64>,
    pub adam: AdamConfig,
    pub assembly: AssemblyOptions,
    /// Train one randomly chosen active task per step instead of the
    /// weighted sum of all of them.
    pub task_sampling: bool,
    /// Apply dropout during training.
    pub dropout: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            seed: 0,
            weights: [1.0; 3],
            clip: Some(1.0),
            adam: AdamConfig::default(),
            assembly: AssemblyOptions::default(),
            task_sampling: false,
            dropout: true,
        }
    }
}

impl TrainConfig {
    pub fn active_tasks(&self) -> Vec<Task> {
        Task::ALL.into_iter().filter(|t| self.weights[t.index()] > 0.0).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("task weights must be finite and non-negative".into()));
        }
        if self.active_tasks().is_empty() {
            return Err(Error::Config("no active task".into()));
        }
        if !self.assembly.include_video && (self.weights[1] > 0.0 || self.weights[2] > 0.0) {
            return Err(Error::Config("VASM and CLM need the video input".into()));
        }
        Ok(())
    }
}

/// Random stream for a given purpose at a given step, so that a resumed run
/// draws exactly what the uninterrupted run would have drawn.
fn step_rng(seed: u64, step: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(purpose);
    rng
}

const ORDER_STREAM: u64 = 1;
const TURN_STREAM: u64 = 2;
const DROPOUT_STREAM: u64 = 3;
const TASK_STREAM: u64 = 4;

pub struct Trainer<F> {
    pub params: ModelParams<F>,
    pub adam: AdamState<F>,
    pub config: TrainConfig,
    epoch_order: Option<(u64, Vec<usize>)>,
}

impl<F: Scalar> Trainer<F> {
    pub fn new(params: ModelParams<F>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(&params, config.adam);
        Ok(Self {
            params,
            adam,
            config,
            epoch_order: None,
        })
    }

    /// Completed optimization steps.
    pub fn step(&self) -> u64 {
        self.adam.t
    }

    fn order(&mut self, epoch: u64, n: usize) -> &[usize] {
        if self.epoch_order.as_ref().is_none_or(|(e, o)| *e != epoch || o.len() != n) {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut step_rng(self.config.seed, epoch, ORDER_STREAM));
            self.epoch_order = Some((epoch, order));
        }
        &self.epoch_order.as_ref().expect("just set").1
    }

    /// Sample indices of the minibatch for `step`: consecutive slices of a
    /// per-epoch shuffled order.
    pub fn minibatch_indices(&mut self, step: u64, n: usize) -> Vec<usize> {
        let bs = self.config.batch_size as u64;
        (0..bs)
            .map(|i| {
                let k = step * bs + i;
                let (epoch, pos) = (k / n as u64, (k % n as u64) as usize);
                self.order(epoch, n)[pos]
            })
            .collect()
    }

    /// The sequences trained on at `step`. Samples without a caption or
    /// with a single feature row are skipped for the task that needs them.
    pub fn batches_for_step(&mut self, step: u64, samples: &[DialogueSample], vocab: &Vocab) -> Result<Vec<SequenceBatch<F>>> {
        if samples.is_empty() {
            return Err(Error::Config("empty training set".into()));
        }
        let cfg = self.config.clone();
        let model = self.params.config().clone();
        let mut tasks = cfg.active_tasks();
        if cfg.task_sampling {
            let pick = step_rng(cfg.seed, step, TASK_STREAM).random_range(0..tasks.len());
            tasks = vec![tasks[pick]];
        }
        let mut turn_rng = step_rng(cfg.seed, step, TURN_STREAM);
        let mut out = Vec::new();
        for idx in self.minibatch_indices(step, samples.len()) {
            let s = &samples[idx];
            let n = turn_rng.random_range(1..=s.turns.len().max(1));
            for &task in &tasks {
                let a = &cfg.assembly;
                let built = match task {
                    Task::Rlm => assemble_rlm(s, n, a.max_history, a.include_video, a.include_caption, vocab, &model),
                    Task::Vasm => assemble_vasm(s, a.max_history, vocab, &model),
                    Task::Clm => assemble_clm(s, vocab, &model),
                };
                match built {
                    Ok(b) => out.push(b),
                    Err(Error::Skip(_)) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(out)
    }

    /// Runs the next step on `samples`.
    pub fn train_step(&mut self, samples: &[DialogueSample], vocab: &Vocab) -> Result<StepReport> {
        let step = self.adam.t;
        let batches = self.batches_for_step(step, samples, vocab)?;
        let mut weights = self.config.weights;
        if self.config.task_sampling {
            for t in Task::ALL {
                if !batches.iter().any(|b| b.task == t) {
                    weights[t.index()] = 0.0;
                }
            }
        }
        let mut rng = step_rng(self.config.seed, step, DROPOUT_STREAM);
        let rng = self.config.dropout.then_some(&mut rng);
        let mut report = train_step(&batches, &mut self.params, &mut self.adam, weights, self.config.clip, rng)?;
        report.step = step + 1;
        Ok(report)
    }

    /// Parameters plus optimizer state under `state.` names.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_params(&self.params);
        let scalar = |v: f64| Tensor::new(vec![1], vec![v as f32]).expect("scalar");
        ck.tensors.push((format!("{STATE_PREFIX}adam.t"), scalar(self.adam.t as f64)));
        for (i, name) in self.params.names().iter().enumerate() {
            ck.tensors.push((format!("{STATE_PREFIX}adam.m.{name}"), self.adam.m[i].cast()));
            ck.tensors.push((format!("{STATE_PREFIX}adam.v.{name}"), self.adam.v[i].cast()));
        }
        ck
    }

    /// Restores parameters and optimizer state from a checkpoint written by
    /// [`Trainer::checkpoint`].
    pub fn resume(ck: &Checkpoint, config: TrainConfig) -> Result<Self> {
        let params: ModelParams<F> = ck.params(None)?;
        let mut trainer = Self::new(params, config)?;
        let state = |key: String| {
            ck.get(&key)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks optimizer state {key}")))
        };
        let t = state(format!("{STATE_PREFIX}adam.t"))?.item();
        trainer.adam.t = t as u64;
        for (i, name) in trainer.params.names().to_vec().iter().enumerate() {
            let m = state(format!("{STATE_PREFIX}adam.m.{name}"))?;
            let v = state(format!("{STATE_PREFIX}adam.v.{name}"))?;
            if m.shape() != trainer.adam.m[i].shape() || v.shape() != trainer.adam.v[i].shape() {
                return Err(Error::Format(format!("optimizer state for {name} has the wrong shape")));
            }
            trainer.adam.m[i] = m.cast();
            trainer.adam.v[i] = v.cast();
        }
        Ok(trainer)
    }
}
