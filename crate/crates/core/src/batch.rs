//! The assembled sequence layout fed to the model.

use crate::error::{Error, Result};
use crate::tensor::Scalar;
use crate::text::VIDEO_SEG;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Rlm,
    Vasm,
    Clm,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Rlm, Task::Vasm, Task::Clm];

    pub fn name(self) -> &'static str {
        match self {
            Task::Rlm => "rlm",
            Task::Vasm => "vasm",
            Task::Clm => "clm",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rlm" => Ok(Task::Rlm),
            "vasm" => Ok(Task::Vasm),
            "clm" => Ok(Task::Clm),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

/// One position of the sequence. A slot's position is its index.
#[derive(Clone, Debug, PartialEq)]
pub enum Slot<F> {
    Text { token: usize, segment: usize },
    Feature(Vec<F>),
}

impl<F> Slot<F> {
    pub fn segment(&self) -> usize {
        match self {
            Slot::Text { segment, .. } => *segment,
            Slot::Feature(_) => VIDEO_SEG,
        }
    }

    pub fn is_feature(&self) -> bool {
        matches!(self, Slot::Feature(_))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch<F> {
    pub slots: Vec<Slot<F>>,
    pub lm_targets: Vec<Option<usize>>,
    pub lm_mask: Vec<bool>,
    pub feature_targets: Vec<Option<Vec<F>>>,
    pub feature_mask: Vec<bool>,
    pub task: Task,
}

impl<F: Scalar> SequenceBatch<F> {
    pub fn new(task: Task) -> Self {
        Self {
            slots: Vec::new(),
            lm_targets: Vec::new(),
            lm_mask: Vec::new(),
            feature_targets: Vec::new(),
            feature_mask: Vec::new(),
            task,
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn push_text(&mut self, token: usize, segment: usize) {
        self.slots.push(Slot::Text { token, segment });
        self.lm_targets.push(None);
        self.lm_mask.push(false);
        self.feature_targets.push(None);
        self.feature_mask.push(false);
    }

    pub fn push_feature(&mut self, row: Vec<F>) {
        self.slots.push(Slot::Feature(row));
        self.lm_targets.push(None);
        self.lm_mask.push(false);
        self.feature_targets.push(None);
        self.feature_mask.push(false);
    }

    pub fn feature_slot_count(&self) -> usize {
        self.slots.iter().filter(|s| s.is_feature()).count()
    }

    pub fn text_tokens(&self) -> impl Iterator<Item = usize> + '_ {
        self.slots.iter().filter_map(|s| match s {
            Slot::Text { token, .. } => Some(*token),
            Slot::Feature(_) => None,
        })
    }

    pub fn lm_count(&self) -> usize {
        self.lm_mask.iter().filter(|m| **m).count()
    }

    pub fn feature_count(&self) -> usize {
        self.feature_mask.iter().filter(|m| **m).count()
    }

    /// Checks the structural invariants every assembled batch must satisfy.
    pub fn validate(&self) -> Result<()> {
        let n = self.slots.len();
        if [self.lm_targets.len(), self.lm_mask.len(), self.feature_targets.len(), self.feature_mask.len()]
            .iter()
            .any(|l| *l != n)
        {
            return Err(Error::Dimension("batch columns have different lengths".into()));
        }
        for i in 0..n {
            if self.lm_mask[i] && self.lm_targets[i].is_none() {
                return Err(Error::Dimension(format!("lm_mask set without target at {i}")));
            }
            if self.feature_mask[i] && self.feature_targets[i].is_none() {
                return Err(Error::Dimension(format!("feature_mask set without target at {i}")));
            }
        }
        Ok(())
    }
}
