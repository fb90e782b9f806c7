//! The three task losses, each a mean over the batch's masked positions.

use crate::autodiff::{Tape, Var};
use crate::batch::{SequenceBatch, Task};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn expect_task<F>(batch: &SequenceBatch<F>, task: Task) -> Result<()> {
    if batch.task == task {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{} loss applied to a {} batch",
            task.name(),
            batch.task.name()
        )))
    }
}

fn lm_loss<F: Scalar>(tape: &mut Tape<F>, lm_logits: Var, batch: &SequenceBatch<F>) -> Result<Var> {
    let targets: Vec<usize> = batch.lm_targets.iter().map(|t| t.unwrap_or(0)).collect();
    tape.cross_entropy(lm_logits, &targets, &batch.lm_mask)
}

/// Mean negative log-likelihood of the response tokens (and closing EOS).
pub fn rlm_loss<F: Scalar>(tape: &mut Tape<F>, lm_logits: Var, batch: &SequenceBatch<F>) -> Result<Var> {
    expect_task(batch, Task::Rlm)?;
    lm_loss(tape, lm_logits, batch)
}

/// Mean negative log-likelihood of the caption tokens (and closing EOS).
pub fn clm_loss<F: Scalar>(tape: &mut Tape<F>, lm_logits: Var, batch: &SequenceBatch<F>) -> Result<Var> {
    expect_task(batch, Task::Clm)?;
    lm_loss(tape, lm_logits, batch)
}

/// Mean squared Euclidean distance between predicted and next feature rows
/// over the masked positions.
pub fn vasm_loss<F: Scalar>(tape: &mut Tape<F>, feature_preds: Var, batch: &SequenceBatch<F>) -> Result<Var> {
    expect_task(batch, Task::Vasm)?;
    let cols = tape.value(feature_preds).cols();
    let mut data = Vec::with_capacity(batch.len() * cols);
    for t in &batch.feature_targets {
        match t {
            Some(row) => data.extend_from_slice(row),
            None => data.extend(std::iter::repeat_n(F::zero(), cols)),
        }
    }
    let target = Tensor::new(vec![batch.len(), cols], data)?;
    tape.squared_error(feature_preds, &target, &batch.feature_mask)
}

/// Dispatches to the loss for `batch.task`.
pub fn task_loss<F: Scalar>(tape: &mut Tape<F>, lm_logits: Var, feature_preds: Var, batch: &SequenceBatch<F>) -> Result<Var> {
    match batch.task {
        Task::Rlm => rlm_loss(tape, lm_logits, batch),
        Task::Vasm => vasm_loss(tape, feature_preds, batch),
        Task::Clm => clm_loss(tape, lm_logits, batch),
    }
}

/// Number of positions a task loss averages over.
pub fn target_count<F: Scalar>(batch: &SequenceBatch<F>) -> usize {
    match batch.task {
        Task::Vasm => batch.feature_count(),
        Task::Rlm | Task::Clm => batch.lm_count(),
    }
}
