//! Task lifecycle: dual assignment, IRA routing, QA review and annotator
//! quality scores.
//!
//! ```text
//! created -> assigned -> dual_annotated -> accepted
//!                                       -> arbitration -> reviewed
//! ```
//!
//! Tasks that agree above the phase threshold can still be drawn for a QA
//! audit; those go through arbitration like disagreements do, so there is
//! a single review path.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agreement::match_spans;
use crate::corpus::{AnnotatorId, Corpus, CorpusError, GroundTruth, SubmissionId, Task, TaskId};
use crate::model::{Locale, Registry, SpanAnnotation, Violation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkflowError {
    #[error("task {task} is {status}, cannot {action}")]
    InvalidState {
        task: TaskId,
        status: TaskStatus,
        action: &'static str,
    },
    #[error("unknown task {0}")]
    UnknownTask(TaskId),
    #[error("submission {0} does not belong to the task")]
    UnknownSubmission(SubmissionId),
    #[error("invalid ground truth: {0}")]
    InvalidGroundTruth(Violation),
    #[error("inconsistent review: {0}")]
    InconsistentReview(String),
    #[error("need at least {needed} qualified annotators for {locale}, found {found}")]
    InsufficientPool {
        locale: String,
        needed: usize,
        found: usize,
    },
    #[error("invalid phase configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pilot,
    Training,
    Production,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Pilot, Phase::Training, Phase::Production];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pilot => "pilot",
            Phase::Training => "training",
            Phase::Production => "production",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pilot" => Ok(Phase::Pilot),
            "training" => Ok(Phase::Training),
            "production" => Ok(Phase::Production),
            other => Err(format!("unknown phase {other:?}")),
        }
    }
}

/// QA sampling rate and acceptance threshold of one phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    pub qa_sampling: f64,
    pub ira_threshold: f64,
    /// Per-locale overrides (codes as keys).
    #[serde(default)]
    pub locales: BTreeMap<String, LocaleOverride>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocaleOverride {
    pub qa_sampling: Option<f64>,
    pub ira_threshold: Option<f64>,
}

impl PhaseConfig {
    pub fn new(qa_sampling: f64, ira_threshold: f64) -> Self {
        PhaseConfig {
            qa_sampling,
            ira_threshold,
            locales: BTreeMap::new(),
        }
    }

    pub fn qa_sampling_for(&self, locale: &Locale) -> f64 {
        self.locales
            .get(locale.code())
            .and_then(|o| o.qa_sampling)
            .unwrap_or(self.qa_sampling)
    }

    pub fn ira_threshold_for(&self, locale: &Locale) -> f64 {
        self.locales
            .get(locale.code())
            .and_then(|o| o.ira_threshold)
            .unwrap_or(self.ira_threshold)
    }

    fn rates(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        std::iter::once((self.qa_sampling, self.ira_threshold)).chain(self.locales.values().map(
            |o| {
                (
                    o.qa_sampling.unwrap_or(self.qa_sampling),
                    o.ira_threshold.unwrap_or(self.ira_threshold),
                )
            },
        ))
    }
}

/// Routing parameters for all three phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhasePolicy {
    pub pilot: PhaseConfig,
    pub training: PhaseConfig,
    pub production: PhaseConfig,
}

impl Default for PhasePolicy {
    fn default() -> Self {
        PhasePolicy {
            pilot: PhaseConfig::new(1.0, 0.85),
            training: PhaseConfig::new(0.65, 0.85),
            production: PhaseConfig::new(0.12, 0.85),
        }
    }
}

impl PhasePolicy {
    pub fn get(&self, phase: Phase) -> &PhaseConfig {
        match phase {
            Phase::Pilot => &self.pilot,
            Phase::Training => &self.training,
            Phase::Production => &self.production,
        }
    }

    /// Check the operating ranges: pilot reviews everything, training
    /// samples 50-80%, production 10-15%, thresholds in [0.85, 1].
    pub fn validate(&self) -> Result<(), WorkflowError> {
        let ranges = [
            (Phase::Pilot, 1.0, 1.0),
            (Phase::Training, 0.5, 0.8),
            (Phase::Production, 0.10, 0.15),
        ];
        for (phase, lo, hi) in ranges {
            for (sampling, threshold) in self.get(phase).rates() {
                if !(lo..=hi).contains(&sampling) {
                    return Err(WorkflowError::InvalidConfig(format!(
                        "{phase} qa_sampling {sampling} outside [{lo}, {hi}]"
                    )));
                }
                if !(0.85..=1.0).contains(&threshold) {
                    return Err(WorkflowError::InvalidConfig(format!(
                        "{phase} ira_threshold {threshold} outside [0.85, 1.0]"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Created,
    Assigned,
    DualAnnotated,
    Accepted,
    Arbitration,
    Reviewed,
}

impl TaskStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskStatus::Created => "created",
            TaskStatus::Assigned => "assigned",
            TaskStatus::DualAnnotated => "dual_annotated",
            TaskStatus::Accepted => "accepted",
            TaskStatus::Arbitration => "arbitration",
            TaskStatus::Reviewed => "reviewed",
        }
    }

    pub fn can_move_to(self, next: TaskStatus) -> bool {
        use TaskStatus::*;
        matches!(
            (self, next),
            (Created, Assigned)
                | (Assigned, DualAnnotated)
                | (DualAnnotated, Accepted)
                | (DualAnnotated, Arbitration)
                | (Arbitration, Reviewed)
        )
    }

    /// Statuses to pass through, in order, to get from `created` to `self`.
    pub fn path_from_created(self) -> &'static [TaskStatus] {
        use TaskStatus::*;
        match self {
            Created => &[],
            Assigned => &[Assigned],
            DualAnnotated => &[Assigned, DualAnnotated],
            Accepted => &[Assigned, DualAnnotated, Accepted],
            Arbitration => &[Assigned, DualAnnotated, Arbitration],
            Reviewed => &[Assigned, DualAnnotated, Arbitration, Reviewed],
        }
    }
}

impl fmt::Display for TaskStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        use TaskStatus::*;
        [Created, Assigned, DualAnnotated, Accepted, Arbitration, Reviewed]
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown task status {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub task_id: TaskId,
    pub from: TaskStatus,
    pub to: TaskStatus,
    pub at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskState {
    pub task_id: TaskId,
    pub status: TaskStatus,
    pub history: Vec<Transition>,
}

impl TaskState {
    pub fn new(task_id: TaskId) -> Self {
        TaskState {
            task_id,
            status: TaskStatus::Created,
            history: Vec::new(),
        }
    }

    pub fn advance(
        &mut self,
        to: TaskStatus,
        at: u64,
        note: Option<String>,
    ) -> Result<&Transition, WorkflowError> {
        if !self.status.can_move_to(to) {
            return Err(WorkflowError::InvalidState {
                task: self.task_id.clone(),
                status: self.status,
                action: to.as_str(),
            });
        }
        self.history.push(Transition {
            task_id: self.task_id.clone(),
            from: self.status,
            to,
            at,
            note,
        });
        self.status = to;
        Ok(self.history.last().expect("just pushed"))
    }
}

/// An annotator available for assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolMember {
    pub id: AnnotatorId,
    pub locales: BTreeSet<Locale>,
    pub qualified: bool,
    #[serde(default)]
    pub load: usize,
}

/// Least-loaded assignment: eligible annotators sorted by current load,
/// then by id, and the first `per_task` of them get the task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AssignmentPolicy {
    pub per_task: usize,
}

impl Default for AssignmentPolicy {
    fn default() -> Self {
        AssignmentPolicy { per_task: 2 }
    }
}

pub fn assign(
    task: &Task,
    pool: &mut [PoolMember],
    policy: AssignmentPolicy,
) -> Result<Vec<AnnotatorId>, WorkflowError> {
    let needed = policy.per_task.max(2);
    let mut eligible: Vec<usize> = pool
        .iter()
        .enumerate()
        .filter(|(_, m)| m.qualified && m.locales.contains(&task.locale))
        .map(|(i, _)| i)
        .collect();
    if eligible.len() < needed {
        return Err(WorkflowError::InsufficientPool {
            locale: task.locale.to_string(),
            needed,
            found: eligible.len(),
        });
    }
    eligible.sort_by(|&a, &b| pool[a].load.cmp(&pool[b].load).then(pool[a].id.cmp(&pool[b].id)));
    Ok(eligible[..needed]
        .iter()
        .map(|&i| {
            pool[i].load += 1;
            pool[i].id.clone()
        })
        .collect())
}

/// Source of uniform draws in `[0, 1)` for QA sampling.
pub trait Sampler {
    fn draw(&mut self) -> f64;
}

/// ChaCha-backed sampler that keeps every draw for auditing.
#[derive(Debug, Clone)]
pub struct SeededSampler {
    rng: ChaCha8Rng,
    pub draws: Vec<f64>,
}

impl SeededSampler {
    pub fn new(seed: u64) -> Self {
        SeededSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            draws: Vec::new(),
        }
    }
}

impl Sampler for SeededSampler {
    fn draw(&mut self) -> f64 {
        let d = self.rng.gen::<f64>();
        self.draws.push(d);
        d
    }
}

/// Replays a fixed sequence of draws. Panics when exhausted.
#[derive(Debug, Clone)]
pub struct FixedSampler(pub std::collections::VecDeque<f64>);

impl Sampler for FixedSampler {
    fn draw(&mut self) -> f64 {
        self.0.pop_front().expect("fixed sampler exhausted")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Accepted,
    Arbitration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteReason {
    /// IRA below the phase threshold.
    BelowThreshold,
    /// Pilot phase: every task is reviewed.
    FullReview,
    /// Agreed, but drawn for a QA audit.
    Sampled,
    /// Agreed and not drawn.
    Agreed,
}

impl RouteReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RouteReason::BelowThreshold => "below_threshold",
            RouteReason::FullReview => "full_review",
            RouteReason::Sampled => "sampled",
            RouteReason::Agreed => "agreed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub route: Route,
    pub reason: RouteReason,
    pub ira: f64,
    pub threshold: f64,
    pub draw: Option<f64>,
}

/// Decide between acceptance and arbitration for a dual-annotated task.
///
/// Below-threshold IRA always goes to arbitration. Otherwise the task is
/// audited with probability `qa_sampling`; the pilot phase audits
/// everything without drawing.
pub fn route(
    state: &TaskState,
    ira: f64,
    phase: Phase,
    config: &PhaseConfig,
    locale: &Locale,
    sampler: &mut dyn Sampler,
) -> Result<RouteDecision, WorkflowError> {
    if state.status != TaskStatus::DualAnnotated {
        return Err(WorkflowError::InvalidState {
            task: state.task_id.clone(),
            status: state.status,
            action: "route",
        });
    }
    let threshold = config.ira_threshold_for(locale);
    let mk = |route, reason, draw| RouteDecision {
        route,
        reason,
        ira,
        threshold,
        draw,
    };
    if ira < threshold {
        return Ok(mk(Route::Arbitration, RouteReason::BelowThreshold, None));
    }
    if phase == Phase::Pilot {
        return Ok(mk(Route::Arbitration, RouteReason::FullReview, None));
    }
    let draw = sampler.draw();
    if draw < config.qa_sampling_for(locale) {
        Ok(mk(Route::Arbitration, RouteReason::Sampled, Some(draw)))
    } else {
        Ok(mk(Route::Accepted, RouteReason::Agreed, Some(draw)))
    }
}

/// QA rubric error categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    MissingLabels,
    WrongLabelsAdded,
    IncorrectSpan,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 3] = [
        ErrorCategory::MissingLabels,
        ErrorCategory::WrongLabelsAdded,
        ErrorCategory::IncorrectSpan,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::MissingLabels => "missing_labels",
            ErrorCategory::WrongLabelsAdded => "wrong_labels_added",
            ErrorCategory::IncorrectSpan => "incorrect_span",
        }
    }
}

impl FromStr for ErrorCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ErrorCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown error category {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    AcceptedAsIs,
    Corrected,
    Rejected,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::AcceptedAsIs => "accepted_as_is",
            Verdict::Corrected => "corrected",
            Verdict::Rejected => "rejected",
        }
    }
}

impl FromStr for Verdict {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Verdict::AcceptedAsIs, Verdict::Corrected, Verdict::Rejected]
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown verdict {s:?}"))
    }
}

/// A reviewer's decision on an arbitrated task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Review {
    pub task_id: TaskId,
    pub reviewer: AnnotatorId,
    pub chosen_submission: SubmissionId,
    pub ground_truth: Vec<SpanAnnotation>,
    pub error_categories: BTreeSet<ErrorCategory>,
    pub verdict: Verdict,
    pub reviewed_at: u64,
    pub request_id: Option<String>,
}

fn sorted(anns: &[SpanAnnotation]) -> Vec<&SpanAnnotation> {
    let mut v: Vec<&SpanAnnotation> = anns.iter().collect();
    v.sort();
    v
}

/// Rubric categories implied by the edits from `chosen` to `ground_truth`.
///
/// Annotations are paired by overlap. A reference annotation nothing
/// overlaps is a missing label; an extra or retyped annotation is a wrong
/// label; a paired annotation with different offsets is an incorrect span.
pub fn rubric_categories(
    chosen: &[SpanAnnotation],
    ground_truth: &[SpanAnnotation],
) -> BTreeSet<ErrorCategory> {
    let mut out = BTreeSet::new();
    let m = match_spans(ground_truth, chosen, f64::MIN_POSITIVE);
    if !m.unmatched_left.is_empty() {
        out.insert(ErrorCategory::MissingLabels);
    }
    if !m.unmatched_right.is_empty() {
        out.insert(ErrorCategory::WrongLabelsAdded);
    }
    for p in &m.pairs {
        let (g, c) = (&ground_truth[p.left], &chosen[p.right]);
        if g.pii_type != c.pii_type {
            out.insert(ErrorCategory::WrongLabelsAdded);
        }
        if g.span != c.span {
            out.insert(ErrorCategory::IncorrectSpan);
        }
    }
    out
}

impl Review {
    /// Check the review against its task and chosen submission.
    pub fn validate(
        &self,
        task: &Task,
        chosen: &[SpanAnnotation],
        registry: &Registry,
    ) -> Result<(), WorkflowError> {
        for ann in &self.ground_truth {
            registry
                .validate_annotation(&task.prompt, ann, &task.locale)
                .map_err(WorkflowError::InvalidGroundTruth)?;
        }
        let accepted = self.verdict == Verdict::AcceptedAsIs;
        if accepted != self.error_categories.is_empty() {
            return Err(WorkflowError::InconsistentReview(
                "error categories must be empty exactly when the verdict is accepted_as_is".into(),
            ));
        }
        if accepted && sorted(chosen) != sorted(&self.ground_truth) {
            return Err(WorkflowError::InconsistentReview(
                "accepted_as_is requires the ground truth to equal the chosen submission".into(),
            ));
        }
        Ok(())
    }
}

/// Lifecycle states of all tasks plus their routing decisions.
#[derive(Debug, Clone, Default)]
pub struct Workflow {
    states: BTreeMap<TaskId, TaskState>,
    decisions: BTreeMap<TaskId, RouteDecision>,
    assignments: BTreeMap<TaskId, Vec<AnnotatorId>>,
}

impl Workflow {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn state(&self, task: &TaskId) -> Option<&TaskState> {
        self.states.get(task)
    }

    pub fn states(&self) -> impl Iterator<Item = &TaskState> {
        self.states.values()
    }

    pub fn decision(&self, task: &TaskId) -> Option<&RouteDecision> {
        self.decisions.get(task)
    }

    pub fn assignment(&self, task: &TaskId) -> Option<&[AnnotatorId]> {
        self.assignments.get(task).map(Vec::as_slice)
    }

    /// Every transition, ordered by task id then time.
    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.states.values().flat_map(|s| s.history.iter())
    }

    fn state_mut(&mut self, task: &TaskId) -> Result<&mut TaskState, WorkflowError> {
        self.states
            .get_mut(task)
            .ok_or_else(|| WorkflowError::UnknownTask(task.clone()))
    }

    pub fn create(&mut self, task: &TaskId) {
        self.states
            .entry(task.clone())
            .or_insert_with(|| TaskState::new(task.clone()));
    }

    /// Re-apply a logged transition (store replay).
    pub fn apply(&mut self, t: &Transition) -> Result<(), WorkflowError> {
        self.create(&t.task_id);
        let state = self.state_mut(&t.task_id)?;
        if state.status != t.from {
            return Err(WorkflowError::InvalidState {
                task: t.task_id.clone(),
                status: state.status,
                action: t.to.as_str(),
            });
        }
        state.advance(t.to, t.at, t.note.clone())?;
        Ok(())
    }

    /// Move a task one step, creating it first if needed.
    pub fn advance(
        &mut self,
        task: &TaskId,
        to: TaskStatus,
        at: u64,
        note: Option<String>,
    ) -> Result<Transition, WorkflowError> {
        self.create(task);
        self.state_mut(task)?.advance(to, at, note).cloned()
    }

    /// Bring a freshly created task to `status` along the canonical path.
    pub fn restore_status(
        &mut self,
        task: &TaskId,
        status: TaskStatus,
        at: u64,
    ) -> Result<Vec<Transition>, WorkflowError> {
        self.create(task);
        let current = self.state_mut(task)?.status;
        if current != TaskStatus::Created {
            return Err(WorkflowError::InvalidState {
                task: task.clone(),
                status: current,
                action: "restore a status",
            });
        }
        status
            .path_from_created()
            .iter()
            .map(|s| self.advance(task, *s, at, Some("restored".into())))
            .collect()
    }

    pub fn assign(
        &mut self,
        task: &Task,
        pool: &mut [PoolMember],
        policy: AssignmentPolicy,
        at: u64,
    ) -> Result<Vec<AnnotatorId>, WorkflowError> {
        self.create(&task.id);
        let state = self.state_mut(&task.id)?;
        if state.status != TaskStatus::Created {
            return Err(WorkflowError::InvalidState {
                task: task.id.clone(),
                status: state.status,
                action: "assign",
            });
        }
        let chosen = assign(task, pool, policy)?;
        let note = chosen.iter().map(|a| a.as_str()).collect::<Vec<_>>().join(",");
        self.state_mut(&task.id)?
            .advance(TaskStatus::Assigned, at, Some(note))?;
        self.assignments.insert(task.id.clone(), chosen.clone());
        Ok(chosen)
    }

    /// Move an assigned task to dual_annotated once it has two submissions.
    pub fn mark_dual_annotated(
        &mut self,
        task: &TaskId,
        submissions: usize,
        at: u64,
    ) -> Result<(), WorkflowError> {
        let state = self.state_mut(task)?;
        if submissions < 2 {
            return Err(WorkflowError::InvalidState {
                task: task.clone(),
                status: state.status,
                action: "complete dual annotation with fewer than two submissions",
            });
        }
        state.advance(TaskStatus::DualAnnotated, at, None)?;
        Ok(())
    }

    pub fn route(
        &mut self,
        task: &Task,
        ira: f64,
        config: &PhaseConfig,
        sampler: &mut dyn Sampler,
        at: u64,
    ) -> Result<RouteDecision, WorkflowError> {
        let state = self
            .states
            .get(&task.id)
            .ok_or_else(|| WorkflowError::UnknownTask(task.id.clone()))?;
        let decision = route(state, ira, task.phase, config, &task.locale, sampler)?;
        let next = match decision.route {
            Route::Accepted => TaskStatus::Accepted,
            Route::Arbitration => TaskStatus::Arbitration,
        };
        let note = match decision.draw {
            Some(d) => format!("ira={ira:.6};reason={};draw={d:.6}", decision.reason.as_str()),
            None => format!("ira={ira:.6};reason={}", decision.reason.as_str()),
        };
        self.state_mut(&task.id)?.advance(next, at, Some(note))?;
        self.decisions.insert(task.id.clone(), decision);
        Ok(decision)
    }

    /// Record a QA review: validates it, stores the ground truth and the
    /// review in the corpus and closes the task.
    pub fn record_review(
        &mut self,
        corpus: &mut Corpus,
        registry: &Registry,
        review: Review,
    ) -> Result<(), WorkflowError> {
        let task_id = review.task_id.clone();
        let state = self
            .states
            .get(&task_id)
            .ok_or_else(|| WorkflowError::UnknownTask(task_id.clone()))?;
        if state.status != TaskStatus::Arbitration {
            return Err(WorkflowError::InvalidState {
                task: task_id,
                status: state.status,
                action: "record a review",
            });
        }
        let task = corpus
            .task(&task_id)
            .ok_or_else(|| WorkflowError::UnknownTask(task_id.clone()))?;
        let chosen = corpus
            .submission(&review.chosen_submission)
            .filter(|s| s.task_id == task_id)
            .ok_or_else(|| WorkflowError::UnknownSubmission(review.chosen_submission.clone()))?;
        review.validate(task, &chosen.annotations, registry)?;

        corpus.set_ground_truth(GroundTruth {
            task_id: task_id.clone(),
            annotations: review.ground_truth.clone(),
        })?;
        let at = review.reviewed_at;
        let note = format!("verdict={}", review.verdict.as_str());
        corpus.insert_review(review)?;
        self.state_mut(&task_id)?
            .advance(TaskStatus::Reviewed, at, Some(note))?;
        Ok(())
    }
}

/// Per-reviewed-task facts needed for quality scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct ReviewOutcome {
    pub task_id: TaskId,
    pub participants: BTreeSet<AnnotatorId>,
    pub chosen_by: AnnotatorId,
    pub verdict: Verdict,
}

/// Collect review outcomes from a corpus.
pub fn review_outcomes(corpus: &Corpus) -> Vec<ReviewOutcome> {
    corpus
        .reviews()
        .filter_map(|r| {
            let chosen = corpus.submission(&r.chosen_submission)?;
            Some(ReviewOutcome {
                task_id: r.task_id.clone(),
                participants: corpus
                    .submissions_for(&r.task_id)
                    .iter()
                    .map(|s| s.annotator.clone())
                    .collect(),
                chosen_by: chosen.annotator.clone(),
                verdict: r.verdict,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualityConfig {
    pub threshold: f64,
    pub min_reviewed: usize,
    /// Count corrected submissions as half credit.
    #[serde(default)]
    pub lenient: bool,
}

impl Default for QualityConfig {
    fn default() -> Self {
        QualityConfig {
            threshold: 0.85,
            min_reviewed: 1,
            lenient: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityScore {
    pub annotator: AnnotatorId,
    pub score: Option<f64>,
    pub reviewed_count: usize,
    pub qualified: bool,
}

/// Share of reviewed tasks where the annotator's submission was chosen and
/// accepted as is.
pub fn quality_score(
    annotator: &AnnotatorId,
    outcomes: &[ReviewOutcome],
    config: &QualityConfig,
) -> QualityScore {
    let mut reviewed = 0usize;
    let mut credit = 0.0;
    for o in outcomes.iter().filter(|o| o.participants.contains(annotator)) {
        reviewed += 1;
        if &o.chosen_by == annotator {
            credit += match o.verdict {
                Verdict::AcceptedAsIs => 1.0,
                Verdict::Corrected if config.lenient => 0.5,
                _ => 0.0,
            };
        }
    }
    let score = (reviewed > 0).then(|| credit / reviewed as f64);
    QualityScore {
        annotator: annotator.clone(),
        score,
        reviewed_count: reviewed,
        qualified: score.is_some_and(|s| s >= config.threshold) && reviewed >= config.min_reviewed,
    }
}

/// Quality scores for every annotator appearing in `outcomes`.
pub fn quality_scores(outcomes: &[ReviewOutcome], config: &QualityConfig) -> Vec<QualityScore> {
    let annotators: BTreeSet<&AnnotatorId> =
        outcomes.iter().flat_map(|o| o.participants.iter()).collect();
    annotators
        .into_iter()
        .map(|a| quality_score(a, outcomes, config))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct VerdictCounts {
    pub accepted_as_is: usize,
    pub corrected: usize,
    pub rejected: usize,
}

impl VerdictCounts {
    pub fn total(&self) -> usize {
        self.accepted_as_is + self.corrected + self.rejected
    }

    fn add(&mut self, v: Verdict) {
        match v {
            Verdict::AcceptedAsIs => self.accepted_as_is += 1,
            Verdict::Corrected => self.corrected += 1,
            Verdict::Rejected => self.rejected += 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PhaseReport {
    pub per_locale: BTreeMap<String, VerdictCounts>,
    pub error_categories: BTreeMap<ErrorCategory, usize>,
}

impl PhaseReport {
    pub fn reviewed(&self) -> usize {
        self.per_locale.values().map(VerdictCounts::total).sum()
    }
}

/// Verdict counts per locale and the rubric histogram for one phase
/// (`None` covers all phases).
pub fn phase_report(corpus: &Corpus, phase: Option<Phase>) -> PhaseReport {
    let mut report = PhaseReport::default();
    for c in ErrorCategory::ALL {
        report.error_categories.insert(c, 0);
    }
    for review in corpus.reviews() {
        let Some(task) = corpus.task(&review.task_id) else {
            continue;
        };
        if phase.is_some_and(|p| p != task.phase) {
            continue;
        }
        report
            .per_locale
            .entry(task.locale.to_string())
            .or_default()
            .add(review.verdict);
        for c in &review.error_categories {
            *report.error_categories.entry(*c).or_default() += 1;
        }
    }
    report
}
