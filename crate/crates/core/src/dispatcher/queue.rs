use serde::{Deserialize, Serialize};

use crate::board::{ExperimentId, TaskKind};
use crate::clock::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub kind: TaskKind,
    pub experiment: ExperimentId,
    pub created_at: Timestamp,
    /// Creation order; breaks ties between tasks created at the same instant.
    pub order: u64,
}

/// Index of the task to run next: the highest class (fix > analyze >
/// implement), oldest first within a class.
pub fn next_task(pending: &[Task]) -> Option<usize> {
    pending
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            b.kind
                .priority()
                .cmp(&a.kind.priority())
                .then(a.created_at.cmp(&b.created_at))
                .then(a.order.cmp(&b.order))
        })
        .map(|(i, _)| i)
}

/// Pending worker tasks. Holds at most one task per experiment.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TaskQueue {
    pending: Vec<Task>,
    next_order: u64,
}

impl TaskQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn pending(&self) -> &[Task] {
        &self.pending
    }

    pub fn has_task_for(&self, id: &ExperimentId) -> bool {
        self.pending.iter().any(|t| &t.experiment == id)
    }

    /// Queues a task unless the experiment already has one. Returns whether it was added.
    pub fn push(&mut self, kind: TaskKind, experiment: ExperimentId, at: Timestamp) -> bool {
        if self.has_task_for(&experiment) {
            return false;
        }
        self.next_order += 1;
        self.pending.push(Task {
            kind,
            experiment,
            created_at: at,
            order: self.next_order,
        });
        true
    }

    pub fn pop_next(&mut self) -> Option<Task> {
        next_task(&self.pending).map(|i| self.pending.remove(i))
    }

    /// Removes the experiment's pending task, if any.
    pub fn remove(&mut self, id: &ExperimentId) -> Option<Task> {
        let i = self.pending.iter().position(|t| &t.experiment == id)?;
        Some(self.pending.remove(i))
    }

    pub fn drain(&mut self) -> Vec<Task> {
        std::mem::take(&mut self.pending)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn highest_class_first() {
        let mut q = TaskQueue::new();
        q.push(TaskKind::Implement, "a".into(), 1);
        q.push(TaskKind::Analyze, "b".into(), 2);
        q.push(TaskKind::Fix, "c".into(), 3);
        assert_eq!(q.pop_next().unwrap().experiment, "c".into());
        assert_eq!(q.pop_next().unwrap().experiment, "b".into());
        assert_eq!(q.pop_next().unwrap().experiment, "a".into());
        assert_eq!(q.pop_next(), None);
    }

    #[test]
    fn fifo_within_class() {
        let mut q = TaskQueue::new();
        q.push(TaskKind::Implement, "late".into(), 5);
        q.push(TaskKind::Implement, "early".into(), 1);
        assert_eq!(q.pop_next().unwrap().experiment, "early".into());
    }

    #[test]
    fn one_task_per_experiment() {
        let mut q = TaskQueue::new();
        assert!(q.push(TaskKind::Implement, "a".into(), 1));
        assert!(!q.push(TaskKind::Fix, "a".into(), 2));
        assert_eq!(q.len(), 1);
    }
}
