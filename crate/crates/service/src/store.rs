//! File-backed store: an append-only record log plus an append-only
//! transition log in one directory.
//!
//! ```text
//! <dir>/records.jsonl      exchange records, in the order they were accepted
//! <dir>/transitions.jsonl  task state transitions
//! ```
//!
//! Opening a store replays both logs. Task records are logged without
//! their status; the status is rebuilt from the transitions.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};
use thiserror::Error;

use piiqa_core::agreement::{annotator_matrix, task_agreement, AgreementMatrix};
use piiqa_core::config::PipelineConfig;
use piiqa_core::corpus::{AnnotatorId, Corpus, CorpusError, GroundTruth, Submission, SubmissionId, Task, TaskId};
use piiqa_core::metrics::{metrics_report, row_outcomes, GroupBy, MetricsReport};
use piiqa_core::model::{Locale, ModelError, Registry, SpanAnnotation, Violation};
use piiqa_core::workflow::{
    phase_report, quality_scores, review_outcomes, ErrorCategory, Phase, PhaseReport, QualityScore,
    Review, RouteDecision, Sampler, TaskStatus, Transition, Verdict, Workflow, WorkflowError,
};

use crate::exchange::{
    wire_annotations, GroundTruthRecord, HeaderRecord, Record, ReviewRecord, SubmissionRecord, TaskRecord,
    WireAnnotation, FORMAT, VERSION,
};

const RECORDS: &str = "records.jsonl";
const TRANSITIONS: &str = "transitions.jsonl";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Why a record or request was refused.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecordError {
    #[error("{0}")]
    Schema(String),
    #[error("{0}")]
    Model(ModelError),
    #[error("{0}")]
    Violation(Violation),
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("unknown submission {0}")]
    UnknownSubmission(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    InvalidState(String),
    #[error("{0}")]
    InconsistentReview(String),
}

impl RecordError {
    pub fn code(&self) -> &'static str {
        match self {
            RecordError::Schema(_) => "schema_violation",
            RecordError::Model(ModelError::UnknownLabel(_) | ModelError::EmptyLabel) => "unknown_label",
            RecordError::Model(ModelError::UnknownLocale(_) | ModelError::InvalidLocale(_)) => "unknown_locale",
            RecordError::Model(_) => "invalid_reference_data",
            RecordError::Violation(v) => v.code(),
            RecordError::UnknownTask(_) => "unknown_task",
            RecordError::UnknownSubmission(_) => "unknown_submission",
            RecordError::Conflict(_) => "conflict",
            RecordError::InvalidState(_) => "invalid_state",
            RecordError::InconsistentReview(_) => "inconsistent_review",
        }
    }
}

impl From<WorkflowError> for RecordError {
    fn from(e: WorkflowError) -> Self {
        match e {
            WorkflowError::UnknownTask(t) => RecordError::UnknownTask(t.to_string()),
            WorkflowError::UnknownSubmission(s) => RecordError::UnknownSubmission(s.to_string()),
            WorkflowError::InvalidGroundTruth(v) => RecordError::Violation(v),
            WorkflowError::InconsistentReview(m) => RecordError::InconsistentReview(m),
            WorkflowError::Corpus(c) => c.into(),
            other @ WorkflowError::InvalidState { .. } => RecordError::InvalidState(other.to_string()),
            other => RecordError::InvalidState(other.to_string()),
        }
    }
}

impl From<CorpusError> for RecordError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::UnknownTask(t) => RecordError::UnknownTask(t.to_string()),
            CorpusError::UnknownSubmission(s) => RecordError::UnknownSubmission(s.to_string()),
            other => RecordError::Conflict(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Rejection {
    pub line: usize,
    pub code: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct ImportReport {
    pub loaded: usize,
    pub by_kind: BTreeMap<&'static str, usize>,
    pub rejected: Vec<Rejection>,
}

impl ImportReport {
    pub fn render(&self) -> String {
        let mut out = format!("loaded\t{}\nrejected\t{}\n", self.loaded, self.rejected.len());
        for (k, n) in &self.by_kind {
            out.push_str(&format!("kind\t{k}\t{n}\n"));
        }
        for r in &self.rejected {
            out.push_str(&format!("line {}\t{}\t{}\n", r.line, r.code, r.message));
        }
        out
    }
}

/// Restricts exports, routing and reports to a locale and/or phase.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Filter {
    pub locale: Option<Locale>,
    pub phase: Option<Phase>,
}

impl Filter {
    pub fn matches(&self, task: &Task) -> bool {
        self.locale.as_ref().is_none_or(|l| *l == task.locale) && self.phase.is_none_or(|p| p == task.phase)
    }

    pub fn is_empty(&self) -> bool {
        self.locale.is_none() && self.phase.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Live,
    Replay,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct RoutedTask {
    pub task_id: TaskId,
    pub locale: String,
    pub phase: Phase,
    pub decision: RouteDecision,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct QueueItem {
    pub task_id: TaskId,
    pub locale: String,
    pub phase: Phase,
    pub domain: String,
    pub entered_at: u64,
    pub submissions: usize,
}

/// Result of a review submission.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubmitOutcome {
    Recorded,
    /// Same request id and content as an earlier submission; nothing changed.
    Replayed,
}

#[derive(Debug)]
pub struct Store {
    dir: Option<PathBuf>,
    registry: Registry,
    config: PipelineConfig,
    corpus: Corpus,
    workflow: Workflow,
    extras: BTreeMap<(&'static str, String), Map<String, Value>>,
    request_ids: BTreeMap<String, TaskId>,
    pending_records: Vec<String>,
    pending_transitions: Vec<Transition>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl Store {
    pub fn in_memory(config: PipelineConfig) -> Result<Self, StoreError> {
        config.validate().map_err(StoreError::Config)?;
        let registry = config.registry().map_err(|e| StoreError::Config(e.to_string()))?;
        Ok(Store {
            dir: None,
            registry,
            config,
            corpus: Corpus::new(),
            workflow: Workflow::new(),
            extras: BTreeMap::new(),
            request_ids: BTreeMap::new(),
            pending_records: Vec::new(),
            pending_transitions: Vec::new(),
        })
    }

    /// Open (or create) a store directory and replay its logs.
    pub fn open(dir: &Path, config: PipelineConfig) -> Result<Self, StoreError> {
        let mut store = Store::in_memory(config)?;
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let records = dir.join(RECORDS);
        if records.exists() {
            let text = fs::read_to_string(&records).map_err(io_err(&records))?;
            for (i, line) in complete_lines(&text) {
                let rec = Record::parse(line).map_err(|message| StoreError::Corrupt {
                    path: records.clone(),
                    line: i,
                    message,
                })?;
                store.apply_mode(rec, Mode::Replay).map_err(|e| StoreError::Corrupt {
                    path: records.clone(),
                    line: i,
                    message: e.to_string(),
                })?;
            }
        } else {
            let header = Record::Header(HeaderRecord::default()).to_line() + "\n";
            fs::write(&records, header).map_err(io_err(&records))?;
        }
        let transitions = dir.join(TRANSITIONS);
        if transitions.exists() {
            let text = fs::read_to_string(&transitions).map_err(io_err(&transitions))?;
            for (i, line) in complete_lines(&text) {
                let corrupt = |message: String| StoreError::Corrupt {
                    path: transitions.clone(),
                    line: i,
                    message,
                };
                let t: Transition = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
                store.workflow.apply(&t).map_err(|e| corrupt(e.to_string()))?;
            }
        }
        store.pending_records.clear();
        store.pending_transitions.clear();
        store.dir = Some(dir.to_path_buf());
        Ok(store)
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn workflow(&self) -> &Workflow {
        &self.workflow
    }

    pub fn status(&self, task: &TaskId) -> Option<TaskStatus> {
        self.workflow.state(task).map(|s| s.status)
    }

    /// Write buffered log lines to disk.
    pub fn flush(&mut self) -> Result<(), StoreError> {
        let Some(dir) = &self.dir else {
            self.pending_records.clear();
            self.pending_transitions.clear();
            return Ok(());
        };
        for (file, lines) in [
            (RECORDS, std::mem::take(&mut self.pending_records)),
            (
                TRANSITIONS,
                std::mem::take(&mut self.pending_transitions)
                    .iter()
                    .map(|t| serde_json::to_string(t).expect("transition serialises"))
                    .collect(),
            ),
        ] {
            if lines.is_empty() {
                continue;
            }
            let path = dir.join(file);
            let mut buf = lines.join("\n");
            buf.push('\n');
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(io_err(&path))?;
            f.write_all(buf.as_bytes()).map_err(io_err(&path))?;
            f.sync_data().map_err(io_err(&path))?;
        }
        Ok(())
    }

    /// Import exchange records, one per line. Invalid records are skipped
    /// and reported with their line number.
    pub fn import_str(&mut self, text: &str) -> ImportReport {
        let mut report = ImportReport::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let result = Record::parse(line)
                .map_err(RecordError::Schema)
                .and_then(|rec| {
                    let kind = rec.kind();
                    self.apply_mode(rec, Mode::Live).map(|_| kind)
                });
            match result {
                Ok(kind) => {
                    report.loaded += 1;
                    *report.by_kind.entry(kind).or_insert(0) += 1;
                }
                Err(e) => report.rejected.push(Rejection {
                    line: i + 1,
                    code: e.code(),
                    message: e.to_string(),
                }),
            }
        }
        report
    }

    pub fn import_file(&mut self, path: &Path) -> Result<ImportReport, StoreError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let report = self.import_str(&text);
        self.flush()?;
        Ok(report)
    }

    /// Apply one record as a live mutation.
    pub fn apply(&mut self, rec: Record) -> Result<(), RecordError> {
        self.apply_mode(rec, Mode::Live)
    }

    fn annotations(&self, task: &Task, wire: &[WireAnnotation]) -> Result<Vec<SpanAnnotation>, RecordError> {
        wire.iter()
            .map(|w| {
                let a = w.to_core(&self.registry).map_err(RecordError::Model)?;
                self.registry
                    .validate_annotation(&task.prompt, &a, &task.locale)
                    .map_err(RecordError::Violation)?;
                Ok(a)
            })
            .collect()
    }

    fn task_for(&self, id: &str) -> Result<&Task, RecordError> {
        self.corpus
            .task(&TaskId::new(id))
            .ok_or_else(|| RecordError::UnknownTask(id.to_string()))
    }

    fn log_transitions(&mut self, ts: Vec<Transition>) {
        self.pending_transitions.extend(ts);
    }

    fn apply_mode(&mut self, rec: Record, mode: Mode) -> Result<(), RecordError> {
        match rec {
            Record::Header(h) => {
                if h.format != FORMAT || h.version != VERSION {
                    return Err(RecordError::Schema(format!(
                        "unsupported format {} version {}",
                        h.format, h.version
                    )));
                }
                Ok(())
            }
            Record::Task(t) => self.apply_task(t, mode),
            Record::Submission(s) => {
                let task = self.task_for(&s.task_id)?;
                let annotations = self.annotations(task, &s.annotations)?;
                if s.id.is_empty() || s.annotator.is_empty() {
                    return Err(RecordError::Schema("submission id and annotator must be non-empty".into()));
                }
                self.corpus.insert_submission(Submission {
                    id: SubmissionId::new(&s.id),
                    task_id: TaskId::new(&s.task_id),
                    annotator: AnnotatorId::new(&s.annotator),
                    annotations,
                })?;
                self.extras.insert(("submission", s.id.clone()), s.extra.clone());
                if mode == Mode::Live {
                    self.pending_records.push(Record::Submission(s).to_line());
                }
                Ok(())
            }
            Record::GroundTruth(g) => {
                let task = self.task_for(&g.task_id)?;
                let gt = GroundTruth {
                    task_id: task.id.clone(),
                    annotations: self.annotations(task, &g.annotations)?,
                };
                match mode {
                    Mode::Live => self.corpus.insert_ground_truth(gt)?,
                    Mode::Replay => self.corpus.set_ground_truth(gt)?,
                }
                self.extras.insert(("ground_truth", g.task_id.clone()), g.extra.clone());
                if mode == Mode::Live {
                    self.pending_records.push(Record::GroundTruth(g).to_line());
                }
                Ok(())
            }
            Record::Review(r) => self.apply_review(r, mode).map(|_| ()),
        }
    }

    fn apply_task(&mut self, mut t: TaskRecord, mode: Mode) -> Result<(), RecordError> {
        if t.id.is_empty() {
            return Err(RecordError::Schema("task id must be non-empty".into()));
        }
        let locale = self.registry.resolve_locale(&t.locale).map_err(RecordError::Model)?;
        let phase: Phase = t.phase.parse().map_err(RecordError::Schema)?;
        let status = match &t.status {
            Some(s) => Some(s.parse::<TaskStatus>().map_err(RecordError::Schema)?),
            None => None,
        };
        let id = TaskId::new(&t.id);
        self.corpus.insert_task(Task {
            id: id.clone(),
            locale: locale.clone(),
            phase,
            domain: t.domain.clone(),
            prompt: t.prompt.clone(),
        })?;
        self.workflow.create(&id);
        self.extras.insert(("task", t.id.clone()), t.extra.clone());
        if mode == Mode::Live {
            if let Some(status) = status {
                let ts = self.workflow.restore_status(&id, status, 0)?;
                self.log_transitions(ts);
            }
            t.status = None;
            t.locale = locale.to_string();
            self.pending_records.push(Record::Task(t).to_line());
        }
        Ok(())
    }

    fn review_from(&self, r: &ReviewRecord) -> Result<Review, RecordError> {
        let task = self.task_for(&r.task_id)?;
        let error_categories = r
            .error_categories
            .iter()
            .map(|c| c.parse::<ErrorCategory>().map_err(RecordError::Schema))
            .collect::<Result<_, _>>()?;
        Ok(Review {
            task_id: task.id.clone(),
            reviewer: AnnotatorId::new(&r.reviewer),
            chosen_submission: SubmissionId::new(&r.chosen_submission),
            ground_truth: self.annotations(task, &r.ground_truth)?,
            error_categories,
            verdict: r.verdict.parse::<Verdict>().map_err(RecordError::Schema)?,
            reviewed_at: r.reviewed_at,
            request_id: r.request_id.clone(),
        })
    }

    fn apply_review(&mut self, r: ReviewRecord, mode: Mode) -> Result<SubmitOutcome, RecordError> {
        let review = self.review_from(&r)?;
        let task_id = review.task_id.clone();
        if let Some(rid) = &review.request_id {
            if let Some(prev_task) = self.request_ids.get(rid) {
                let prev = self.corpus.review(prev_task).expect("indexed review exists");
                let same = *prev_task == task_id
                    && prev.reviewer == review.reviewer
                    && prev.chosen_submission == review.chosen_submission
                    && prev.ground_truth == review.ground_truth
                    && prev.error_categories == review.error_categories
                    && prev.verdict == review.verdict;
                return if same && mode == Mode::Live {
                    Ok(SubmitOutcome::Replayed)
                } else {
                    Err(RecordError::Conflict(format!("request id {rid} was already used")))
                };
            }
        }
        if self.corpus.review(&task_id).is_some() {
            return Err(RecordError::Conflict(format!("task {task_id} already has a review")));
        }
        let status = self.status(&task_id).unwrap_or(TaskStatus::Created);
        match (mode, status) {
            (Mode::Live, TaskStatus::Arbitration) => {
                let before = self.workflow.state(&task_id).map_or(0, |s| s.history.len());
                self.workflow.record_review(&mut self.corpus, &self.registry, review.clone())?;
                let new: Vec<Transition> = self.workflow.state(&task_id).expect("task state").history[before..].to_vec();
                self.log_transitions(new);
                let gt = GroundTruthRecord {
                    task_id: task_id.to_string(),
                    annotations: wire_annotations(&review.ground_truth),
                    extra: self
                        .extras
                        .get(&("ground_truth", task_id.to_string()))
                        .cloned()
                        .unwrap_or_default(),
                };
                self.pending_records.push(Record::GroundTruth(gt).to_line());
            }
            (Mode::Live, TaskStatus::Reviewed) | (Mode::Replay, _) => {
                if mode == Mode::Live {
                    let task = self.task_for(task_id.as_str())?;
                    let chosen = self
                        .corpus
                        .submission(&review.chosen_submission)
                        .filter(|s| s.task_id == task_id)
                        .ok_or_else(|| RecordError::UnknownSubmission(review.chosen_submission.to_string()))?;
                    review.validate(task, &chosen.annotations, &self.registry)?;
                }
                if self.corpus.ground_truth(&task_id).is_none() {
                    self.corpus.set_ground_truth(GroundTruth {
                        task_id: task_id.clone(),
                        annotations: review.ground_truth.clone(),
                    })?;
                }
                self.corpus.insert_review(review.clone())?;
            }
            (Mode::Live, other) => {
                return Err(RecordError::InvalidState(format!(
                    "task {task_id} is {other}, reviews need arbitration"
                )))
            }
        }
        if let Some(rid) = &review.request_id {
            self.request_ids.insert(rid.clone(), task_id.clone());
        }
        self.extras.insert(("review", task_id.to_string()), r.extra.clone());
        if mode == Mode::Live {
            self.pending_records.push(Record::Review(r).to_line());
        }
        Ok(SubmitOutcome::Recorded)
    }

    /// Record a QA review coming from the API. Idempotent per request id.
    pub fn submit_review(&mut self, r: ReviewRecord) -> Result<SubmitOutcome, RecordError> {
        let out = self.apply_review(r, Mode::Live);
        if out.is_err() {
            self.pending_records.clear();
            self.pending_transitions.clear();
        }
        out
    }

    fn review_record(&self, review: &Review) -> ReviewRecord {
        ReviewRecord {
            task_id: review.task_id.to_string(),
            reviewer: review.reviewer.to_string(),
            chosen_submission: review.chosen_submission.to_string(),
            ground_truth: wire_annotations(&review.ground_truth),
            error_categories: review.error_categories.iter().map(|c| c.as_str().to_string()).collect(),
            verdict: review.verdict.as_str().to_string(),
            reviewed_at: review.reviewed_at,
            request_id: review.request_id.clone(),
            extra: self
                .extras
                .get(&("review", review.task_id.to_string()))
                .cloned()
                .unwrap_or_default(),
        }
    }

    fn extra(&self, kind: &'static str, key: &str) -> Map<String, Value> {
        self.extras.get(&(kind, key.to_string())).cloned().unwrap_or_default()
    }

    /// Records for the tasks matching `filter`, ordered by task id and then
    /// kind (task, submissions by id, ground truth, review).
    pub fn export_records(&self, filter: &Filter) -> Vec<Record> {
        let mut out = vec![Record::Header(HeaderRecord::default())];
        for task in self.corpus.tasks().filter(|t| filter.matches(t)) {
            let id = task.id.as_str();
            out.push(Record::Task(TaskRecord {
                id: id.to_string(),
                locale: task.locale.to_string(),
                phase: task.phase.to_string(),
                domain: task.domain.clone(),
                prompt: task.prompt.clone(),
                status: Some(self.status(&task.id).unwrap_or(TaskStatus::Created).to_string()),
                extra: self.extra("task", id),
            }));
            for s in self.corpus.submissions_for(&task.id) {
                out.push(Record::Submission(SubmissionRecord {
                    id: s.id.to_string(),
                    task_id: id.to_string(),
                    annotator: s.annotator.to_string(),
                    annotations: wire_annotations(&s.annotations),
                    extra: self.extra("submission", s.id.as_str()),
                }));
            }
            if let Some(gt) = self.corpus.ground_truth(&task.id) {
                out.push(Record::GroundTruth(GroundTruthRecord {
                    task_id: id.to_string(),
                    annotations: wire_annotations(&gt.annotations),
                    extra: self.extra("ground_truth", id),
                }));
            }
            if let Some(r) = self.corpus.review(&task.id) {
                out.push(Record::Review(self.review_record(r)));
            }
        }
        out
    }

    pub fn export_string(&self, filter: &Filter) -> String {
        let mut out = String::new();
        for r in self.export_records(filter) {
            out.push_str(&r.to_line());
            out.push('\n');
        }
        out
    }

    pub fn export_file(&self, path: &Path, filter: &Filter) -> Result<(), StoreError> {
        fs::write(path, self.export_string(filter)).map_err(io_err(path))
    }

    /// Move one task a single step along the state machine.
    pub fn advance(&mut self, task: &TaskId, to: TaskStatus, at: u64, note: Option<String>) -> Result<(), RecordError> {
        self.task_for(task.as_str())?;
        let t = self.workflow.advance(task, to, at, note)?;
        self.pending_transitions.push(t);
        Ok(())
    }

    /// Transition log of the tasks matching `filter`, one JSON object per
    /// line, by task id and then time.
    pub fn transitions_string(&self, filter: &Filter) -> String {
        let mut out = String::new();
        for task in self.corpus.tasks().filter(|t| filter.matches(t)) {
            for t in self.workflow.state(&task.id).map_or(&[][..], |s| &s.history) {
                out.push_str(&serde_json::to_string(t).expect("transition serialises"));
                out.push('\n');
            }
        }
        out
    }

    /// Promote an assigned task with two submissions and route it if it is
    /// dual-annotated. `None` when the task is not ready for routing.
    pub fn route_task(
        &mut self,
        task: &TaskId,
        sampler: &mut dyn Sampler,
        at: u64,
    ) -> Result<Option<RoutedTask>, RecordError> {
        let task = self.task_for(task.as_str())?.clone();
        let subs = self.corpus.submissions_for(&task.id);
        if subs.len() < 2 {
            return Ok(None);
        }
        let before = self.workflow.state(&task.id).map_or(0, |s| s.history.len());
        if self.status(&task.id) == Some(TaskStatus::Assigned) {
            self.workflow.mark_dual_annotated(&task.id, subs.len(), at)?;
        }
        if self.status(&task.id) != Some(TaskStatus::DualAnnotated) {
            return Ok(None);
        }
        let ira = task_agreement(&subs, self.config.tau).expect("two submissions");
        let cfg = self.config.phases.get(task.phase).clone();
        let decision = self.workflow.route(&task, ira, &cfg, sampler, at)?;
        let new = self.workflow.state(&task.id).expect("task state").history[before..].to_vec();
        self.log_transitions(new);
        Ok(Some(RoutedTask {
            task_id: task.id.clone(),
            locale: task.locale.to_string(),
            phase: task.phase,
            decision,
        }))
    }

    /// Route every ready task matching `filter`, in task id order.
    pub fn route_pending(
        &mut self,
        sampler: &mut dyn Sampler,
        filter: &Filter,
        at: u64,
    ) -> Result<Vec<RoutedTask>, RecordError> {
        let ids: Vec<TaskId> = self
            .corpus
            .tasks()
            .filter(|t| filter.matches(t))
            .map(|t| t.id.clone())
            .collect();
        let mut out = Vec::new();
        for id in ids {
            if let Some(r) = self.route_task(&id, sampler, at)? {
                out.push(r);
            }
        }
        Ok(out)
    }

    /// Load a whole in-memory corpus (tasks, submissions, ground truth and
    /// reviews) as live records, bringing every task to `status`.
    pub fn load_corpus(&mut self, corpus: &Corpus, status: TaskStatus) -> Result<(), RecordError> {
        for task in corpus.tasks() {
            self.apply(Record::Task(TaskRecord {
                id: task.id.to_string(),
                locale: task.locale.to_string(),
                phase: task.phase.to_string(),
                domain: task.domain.clone(),
                prompt: task.prompt.clone(),
                status: Some(status.to_string()),
                extra: Map::new(),
            }))?;
            for s in corpus.submissions_for(&task.id) {
                self.apply(Record::Submission(SubmissionRecord {
                    id: s.id.to_string(),
                    task_id: task.id.to_string(),
                    annotator: s.annotator.to_string(),
                    annotations: wire_annotations(&s.annotations),
                    extra: Map::new(),
                }))?;
            }
            if let Some(gt) = corpus.ground_truth(&task.id) {
                self.apply(Record::GroundTruth(GroundTruthRecord {
                    task_id: task.id.to_string(),
                    annotations: wire_annotations(&gt.annotations),
                    extra: Map::new(),
                }))?;
            }
            if let Some(r) = corpus.review(&task.id) {
                let rec = ReviewRecord {
                    extra: Map::new(),
                    ..self.review_record(r)
                };
                self.apply(Record::Review(rec))?;
            }
        }
        Ok(())
    }

    /// Arbitration queue, oldest first. Tasks with fewer than two
    /// submissions are never listed.
    pub fn queue(&self, filter: &Filter) -> Vec<QueueItem> {
        let mut items: Vec<QueueItem> = self
            .corpus
            .tasks()
            .filter(|t| filter.matches(t))
            .filter_map(|t| {
                let state = self.workflow.state(&t.id)?;
                if state.status != TaskStatus::Arbitration {
                    return None;
                }
                let n = self.corpus.submissions_for(&t.id).len();
                (n >= 2).then(|| QueueItem {
                    task_id: t.id.clone(),
                    locale: t.locale.to_string(),
                    phase: t.phase,
                    domain: t.domain.clone(),
                    entered_at: state.history.last().map_or(0, |h| h.at),
                    submissions: n,
                })
            })
            .collect();
        items.sort_by(|a, b| a.entered_at.cmp(&b.entered_at).then_with(|| a.task_id.cmp(&b.task_id)));
        items
    }

    fn filtered(&self, filter: &Filter) -> std::borrow::Cow<'_, Corpus> {
        if filter.is_empty() {
            std::borrow::Cow::Borrowed(&self.corpus)
        } else {
            let mut c = self.corpus.clone();
            c.retain_tasks(|t| filter.matches(t));
            std::borrow::Cow::Owned(c)
        }
    }

    pub fn quality_scores(&self, filter: &Filter) -> Vec<QualityScore> {
        quality_scores(&review_outcomes(&self.filtered(filter)), &self.config.quality)
    }

    pub fn phase_report(&self, filter: &Filter) -> PhaseReport {
        phase_report(&self.filtered(filter), filter.phase)
    }

    pub fn metrics(&self, filter: &Filter, group_by: GroupBy) -> Vec<MetricsReport> {
        let rows = row_outcomes(&self.filtered(filter), &self.registry);
        metrics_report(&rows, group_by, self.config.fpr_mode)
    }

    pub fn agreement_matrix(&self, filter: &Filter) -> AgreementMatrix {
        annotator_matrix(&self.filtered(filter), self.config.tau)
    }
}

/// Lines ending in a newline, numbered from 1. A trailing partial line
/// (interrupted write) is ignored.
fn complete_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    complete
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
}
