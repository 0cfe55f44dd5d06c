//! Containers for tasks, submissions, ground truths and reviews.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{Locale, SpanAnnotation};
use crate::workflow::{Phase, Review};

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                $name(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_string())
            }
        }
    };
}

string_id!(TaskId);
string_id!(SubmissionId);
string_id!(
    /// Annotator or reviewer identity.
    AnnotatorId
);

/// A prompt awaiting dual annotation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Task {
    pub id: TaskId,
    pub locale: Locale,
    pub phase: Phase,
    pub domain: String,
    pub prompt: String,
}

/// One annotator's full answer for a task. An empty annotation list is the
/// "No PII Found" answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Submission {
    pub id: SubmissionId,
    pub task_id: TaskId,
    pub annotator: AnnotatorId,
    pub annotations: Vec<SpanAnnotation>,
}

impl Submission {
    pub fn no_pii_found(&self) -> bool {
        self.annotations.is_empty()
    }
}

/// The QA-established reference annotations of a task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroundTruth {
    pub task_id: TaskId,
    pub annotations: Vec<SpanAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CorpusError {
    #[error("duplicate task {0}")]
    DuplicateTask(TaskId),
    #[error("duplicate submission {0}")]
    DuplicateSubmission(SubmissionId),
    #[error("unknown task {0}")]
    UnknownTask(TaskId),
    #[error("unknown submission {0}")]
    UnknownSubmission(SubmissionId),
    #[error("task {0} already has a ground truth")]
    DuplicateGroundTruth(TaskId),
    #[error("task {0} already has a review")]
    DuplicateReview(TaskId),
}

/// In-memory corpus with referential integrity between its collections.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    tasks: BTreeMap<TaskId, Task>,
    submissions: BTreeMap<SubmissionId, Submission>,
    by_task: BTreeMap<TaskId, Vec<SubmissionId>>,
    ground_truths: BTreeMap<TaskId, GroundTruth>,
    reviews: BTreeMap<TaskId, Review>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_task(&mut self, task: Task) -> Result<(), CorpusError> {
        if self.tasks.contains_key(&task.id) {
            return Err(CorpusError::DuplicateTask(task.id));
        }
        self.by_task.insert(task.id.clone(), Vec::new());
        self.tasks.insert(task.id.clone(), task);
        Ok(())
    }

    pub fn insert_submission(&mut self, sub: Submission) -> Result<(), CorpusError> {
        if self.submissions.contains_key(&sub.id) {
            return Err(CorpusError::DuplicateSubmission(sub.id));
        }
        let Some(list) = self.by_task.get_mut(&sub.task_id) else {
            return Err(CorpusError::UnknownTask(sub.task_id));
        };
        list.push(sub.id.clone());
        list.sort();
        self.submissions.insert(sub.id.clone(), sub);
        Ok(())
    }

    pub fn insert_ground_truth(&mut self, gt: GroundTruth) -> Result<(), CorpusError> {
        if !self.tasks.contains_key(&gt.task_id) {
            return Err(CorpusError::UnknownTask(gt.task_id));
        }
        if self.ground_truths.contains_key(&gt.task_id) {
            return Err(CorpusError::DuplicateGroundTruth(gt.task_id));
        }
        self.ground_truths.insert(gt.task_id.clone(), gt);
        Ok(())
    }

    /// Replace (or set) the ground truth of a task.
    pub fn set_ground_truth(&mut self, gt: GroundTruth) -> Result<(), CorpusError> {
        if !self.tasks.contains_key(&gt.task_id) {
            return Err(CorpusError::UnknownTask(gt.task_id));
        }
        self.ground_truths.insert(gt.task_id.clone(), gt);
        Ok(())
    }

    pub fn remove_ground_truth(&mut self, task: &TaskId) -> Option<GroundTruth> {
        self.ground_truths.remove(task)
    }

    pub fn insert_review(&mut self, review: Review) -> Result<(), CorpusError> {
        if !self.tasks.contains_key(&review.task_id) {
            return Err(CorpusError::UnknownTask(review.task_id));
        }
        match self.submissions.get(&review.chosen_submission) {
            Some(s) if s.task_id == review.task_id => {}
            _ => return Err(CorpusError::UnknownSubmission(review.chosen_submission)),
        }
        if self.reviews.contains_key(&review.task_id) {
            return Err(CorpusError::DuplicateReview(review.task_id));
        }
        self.reviews.insert(review.task_id.clone(), review);
        Ok(())
    }

    pub fn task(&self, id: &TaskId) -> Option<&Task> {
        self.tasks.get(id)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &Task> {
        self.tasks.values()
    }

    pub fn submission(&self, id: &SubmissionId) -> Option<&Submission> {
        self.submissions.get(id)
    }

    pub fn submissions(&self) -> impl Iterator<Item = &Submission> {
        self.submissions.values()
    }

    /// Submissions of a task, ordered by submission id.
    pub fn submissions_for(&self, task: &TaskId) -> Vec<&Submission> {
        self.by_task
            .get(task)
            .map(|ids| ids.iter().map(|id| &self.submissions[id]).collect())
            .unwrap_or_default()
    }

    pub fn ground_truth(&self, task: &TaskId) -> Option<&GroundTruth> {
        self.ground_truths.get(task)
    }

    pub fn ground_truths(&self) -> impl Iterator<Item = &GroundTruth> {
        self.ground_truths.values()
    }

    pub fn review(&self, task: &TaskId) -> Option<&Review> {
        self.reviews.get(task)
    }

    pub fn reviews(&self) -> impl Iterator<Item = &Review> {
        self.reviews.values()
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Keep only tasks matching `keep`, with everything that references them.
    pub fn retain_tasks(&mut self, mut keep: impl FnMut(&Task) -> bool) {
        let dropped: Vec<TaskId> = self
            .tasks
            .values()
            .filter(|t| !keep(t))
            .map(|t| t.id.clone())
            .collect();
        for id in dropped {
            self.tasks.remove(&id);
            for sid in self.by_task.remove(&id).unwrap_or_default() {
                self.submissions.remove(&sid);
            }
            self.ground_truths.remove(&id);
            self.reviews.remove(&id);
        }
    }
}
