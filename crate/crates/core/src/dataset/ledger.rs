use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ClassId;

/// Label state of one instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", content = "class", rename_all = "snake_case")]
pub enum LabelState {
    Unlabeled,
    Instance(ClassId),
    Batch(ClassId),
}

impl LabelState {
    pub fn class(self) -> Option<ClassId> {
        match self {
            LabelState::Unlabeled => None,
            LabelState::Instance(c) | LabelState::Batch(c) => Some(c),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("instance index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("class {0} is not in the schema")]
    UnknownClass(ClassId),
    #[error("instance {0} carries an instance label and cannot be batch-labeled")]
    ForbiddenTransition(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelCounts {
    pub instance: usize,
    pub batch: usize,
    pub unlabeled: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Entry {
    state: LabelState,
    sequence_no: u64,
}

/// Per-instance label state plus a monotonically increasing action counter.
///
/// Every successful mutation bumps `sequence_no` once and stamps the touched
/// entries with it. An instance label is never downgraded to a batch label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelLedger {
    entries: Vec<Entry>,
    num_classes: usize,
    sequence_no: u64,
    counts: LabelCounts,
}

impl LabelLedger {
    pub fn new(n: usize, num_classes: usize) -> Self {
        Self {
            entries: vec![
                Entry {
                    state: LabelState::Unlabeled,
                    sequence_no: 0
                };
                n
            ],
            num_classes,
            sequence_no: 0,
            counts: LabelCounts {
                unlabeled: n,
                ..LabelCounts::default()
            },
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn sequence_no(&self) -> u64 {
        self.sequence_no
    }

    pub fn state(&self, i: usize) -> LabelState {
        self.entries[i].state
    }

    /// Sequence number of the action that last touched instance `i` (0 = never).
    pub fn stamp(&self, i: usize) -> u64 {
        self.entries[i].sequence_no
    }

    pub fn is_unlabeled(&self, i: usize) -> bool {
        self.entries[i].state == LabelState::Unlabeled
    }

    pub fn counts(&self) -> LabelCounts {
        self.counts
    }

    pub fn states(&self) -> impl Iterator<Item = LabelState> + '_ {
        self.entries.iter().map(|e| e.state)
    }

    fn check(&self, i: usize, class: ClassId) -> Result<(), LedgerError> {
        if i >= self.entries.len() {
            return Err(LedgerError::IndexOutOfRange(i));
        }
        if class.index() >= self.num_classes {
            return Err(LedgerError::UnknownClass(class));
        }
        Ok(())
    }

    fn set(&mut self, i: usize, state: LabelState) {
        let entry = &mut self.entries[i];
        match entry.state {
            LabelState::Unlabeled => self.counts.unlabeled -= 1,
            LabelState::Instance(_) => self.counts.instance -= 1,
            LabelState::Batch(_) => self.counts.batch -= 1,
        }
        match state {
            LabelState::Unlabeled => self.counts.unlabeled += 1,
            LabelState::Instance(_) => self.counts.instance += 1,
            LabelState::Batch(_) => self.counts.batch += 1,
        }
        entry.state = state;
        entry.sequence_no = self.sequence_no;
    }

    /// Assigns an instance label; allowed from every state.
    pub fn label_instance(&mut self, i: usize, class: ClassId) -> Result<LabelState, LedgerError> {
        self.check(i, class)?;
        let previous = self.entries[i].state;
        self.sequence_no += 1;
        self.set(i, LabelState::Instance(class));
        Ok(previous)
    }

    /// Batch-labels all `indices` as one action. Fails without changes if any
    /// of them holds an instance label.
    pub fn label_batch(&mut self, indices: &[usize], class: ClassId) -> Result<usize, LedgerError> {
        for &i in indices {
            self.check(i, class)?;
            if matches!(self.entries[i].state, LabelState::Instance(_)) {
                return Err(LedgerError::ForbiddenTransition(i));
            }
        }
        self.sequence_no += 1;
        for &i in indices {
            self.set(i, LabelState::Batch(class));
        }
        Ok(indices.len())
    }
}
