//! Inter-annotator agreement over span annotations.
//!
//! Three signals are combined per annotator pair: span overlap (IoU of the
//! matched spans), type agreement and text agreement. Scores are averaged
//! into an overall pair score, then over all pairs of a task.
//!
//! Matching is greedy by descending IoU rather than an optimal assignment.
//! The two only differ on contrived layouts where one span overlaps two
//! others with nearly equal IoU.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{AnnotatorId, Corpus, Submission};
use crate::model::{Span, SpanAnnotation};

pub const DEFAULT_TAU: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AgreementError {
    #[error("submissions belong to different tasks ({0} vs {1})")]
    TaskMismatch(String, String),
    #[error("need at least two submissions, got {0}")]
    InsufficientSubmissions(usize),
}

/// Number of shared character positions.
pub fn overlap_1d(a: Span, b: Span) -> usize {
    a.end.min(b.end).saturating_sub(a.start.max(b.start))
}

/// IoU as an exact `(intersection, union)` pair.
pub fn iou_parts(a: Span, b: Span) -> (usize, usize) {
    let inter = overlap_1d(a, b);
    (inter, a.len() + b.len() - inter)
}

/// Intersection over union of the index sets of two spans.
pub fn iou(a: Span, b: Span) -> f64 {
    match iou_parts(a, b) {
        (_, 0) => 0.0,
        (i, u) => i as f64 / u as f64,
    }
}

fn cmp_ratio(a: (usize, usize), b: (usize, usize)) -> Ordering {
    // a.0/a.1 vs b.0/b.1 without rounding
    (a.0 as u128 * b.1 as u128).cmp(&(b.0 as u128 * a.1 as u128))
}

fn meets_threshold(parts: (usize, usize), tau: f64) -> bool {
    parts.0 > 0 && parts.0 as f64 >= tau * parts.1 as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchedPair {
    pub left: usize,
    pub right: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct SpanMatching {
    pub pairs: Vec<MatchedPair>,
    pub unmatched_left: Vec<usize>,
    pub unmatched_right: Vec<usize>,
}

/// One-to-one greedy matching of two annotation lists.
///
/// Candidates with IoU at least `tau` are taken in descending IoU order; ties
/// go to the smaller left start, then the smaller right start, then the rest
/// of the annotation content so the result does not depend on input order.
pub fn match_spans(left: &[SpanAnnotation], right: &[SpanAnnotation], tau: f64) -> SpanMatching {
    let mut candidates = Vec::new();
    for (i, a) in left.iter().enumerate() {
        for (j, b) in right.iter().enumerate() {
            let parts = iou_parts(a.span, b.span);
            if meets_threshold(parts, tau) {
                candidates.push((parts, i, j));
            }
        }
    }
    candidates.sort_by(|x, y| {
        let (a1, b1) = (&left[x.1], &right[x.2]);
        let (a2, b2) = (&left[y.1], &right[y.2]);
        cmp_ratio(y.0, x.0)
            .then(a1.span.start.cmp(&a2.span.start))
            .then(b1.span.start.cmp(&b2.span.start))
            .then(a1.cmp(a2))
            .then(b1.cmp(b2))
            .then(x.1.cmp(&y.1))
            .then(x.2.cmp(&y.2))
    });

    let mut used_left = vec![false; left.len()];
    let mut used_right = vec![false; right.len()];
    let mut pairs = Vec::new();
    for ((inter, union), i, j) in candidates {
        if used_left[i] || used_right[j] {
            continue;
        }
        used_left[i] = true;
        used_right[j] = true;
        pairs.push(MatchedPair {
            left: i,
            right: j,
            iou: inter as f64 / union as f64,
        });
    }
    SpanMatching {
        pairs,
        unmatched_left: (0..left.len()).filter(|&i| !used_left[i]).collect(),
        unmatched_right: (0..right.len()).filter(|&j| !used_right[j]).collect(),
    }
}

/// Text comparison key: trimmed with internal whitespace collapsed.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AgreementBreakdown {
    pub span_score: f64,
    pub type_score: f64,
    pub text_score: f64,
    pub overall: f64,
}

impl AgreementBreakdown {
    fn from_components(span_score: f64, type_score: f64, text_score: f64) -> Self {
        AgreementBreakdown {
            span_score,
            type_score,
            text_score,
            overall: (span_score + type_score + text_score) / 3.0,
        }
    }

    pub fn perfect() -> Self {
        Self::from_components(1.0, 1.0, 1.0)
    }

    pub fn none() -> Self {
        Self::from_components(0.0, 0.0, 0.0)
    }
}

/// Agreement between two annotation lists over the same prompt.
///
/// Component scores are normalised by the larger list, so both missing and
/// extra annotations cost agreement. Two empty lists agree fully; exactly
/// one empty list scores zero.
pub fn annotation_agreement(
    a: &[SpanAnnotation],
    b: &[SpanAnnotation],
    tau: f64,
) -> AgreementBreakdown {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return AgreementBreakdown::perfect(),
        (true, false) | (false, true) => return AgreementBreakdown::none(),
        _ => {}
    }
    let m = match_spans(a, b, tau);
    let denom = a.len().max(b.len()) as f64;
    let span_sum: f64 = m.pairs.iter().map(|p| p.iou).sum();
    let types = m
        .pairs
        .iter()
        .filter(|p| a[p.left].pii_type == b[p.right].pii_type)
        .count();
    let texts = m
        .pairs
        .iter()
        .filter(|p| normalize_text(&a[p.left].text) == normalize_text(&b[p.right].text))
        .count();
    AgreementBreakdown::from_components(
        span_sum / denom,
        types as f64 / denom,
        texts as f64 / denom,
    )
}

/// Agreement between two submissions of the same task.
pub fn pair_agreement(
    a: &Submission,
    b: &Submission,
    tau: f64,
) -> Result<AgreementBreakdown, AgreementError> {
    if a.task_id != b.task_id {
        return Err(AgreementError::TaskMismatch(
            a.task_id.to_string(),
            b.task_id.to_string(),
        ));
    }
    Ok(annotation_agreement(&a.annotations, &b.annotations, tau))
}

/// Mean overall agreement across all unordered submission pairs of a task.
pub fn task_agreement(submissions: &[&Submission], tau: f64) -> Result<f64, AgreementError> {
    if submissions.len() < 2 {
        return Err(AgreementError::InsufficientSubmissions(submissions.len()));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, a) in submissions.iter().enumerate() {
        for b in &submissions[i + 1..] {
            sum += pair_agreement(a, b, tau)?.overall;
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Cell {
    sum: f64,
    support: usize,
}

/// Annotator × annotator mean pairwise agreement over shared tasks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AgreementMatrix {
    annotators: BTreeSet<AnnotatorId>,
    cells: BTreeMap<(AnnotatorId, AnnotatorId), Cell>,
    tasks_per_annotator: BTreeMap<AnnotatorId, usize>,
}

impl AgreementMatrix {
    pub fn annotators(&self) -> impl Iterator<Item = &AnnotatorId> {
        self.annotators.iter()
    }

    fn key(a: &AnnotatorId, b: &AnnotatorId) -> (AnnotatorId, AnnotatorId) {
        if a <= b {
            (a.clone(), b.clone())
        } else {
            (b.clone(), a.clone())
        }
    }

    /// Mean agreement; `None` when the pair shares no task.
    pub fn cell(&self, a: &AnnotatorId, b: &AnnotatorId) -> Option<f64> {
        if a == b {
            return self.tasks_per_annotator.get(a).map(|_| 1.0);
        }
        self.cells
            .get(&Self::key(a, b))
            .filter(|c| c.support > 0)
            .map(|c| c.sum / c.support as f64)
    }

    /// Number of shared tasks.
    pub fn support(&self, a: &AnnotatorId, b: &AnnotatorId) -> usize {
        if a == b {
            return self.tasks_per_annotator.get(a).copied().unwrap_or(0);
        }
        self.cells.get(&Self::key(a, b)).map_or(0, |c| c.support)
    }

    fn record(&mut self, a: &AnnotatorId, b: &AnnotatorId, overall: f64) {
        let cell = self.cells.entry(Self::key(a, b)).or_default();
        cell.sum += overall;
        cell.support += 1;
    }

    /// Add one task's submissions to the matrix.
    pub fn add_task(&mut self, submissions: &[&Submission], tau: f64) {
        let mut seen = BTreeSet::new();
        for s in submissions {
            self.annotators.insert(s.annotator.clone());
            if seen.insert(s.annotator.clone()) {
                *self.tasks_per_annotator.entry(s.annotator.clone()).or_default() += 1;
            }
        }
        for (i, a) in submissions.iter().enumerate() {
            for b in &submissions[i + 1..] {
                if a.annotator == b.annotator {
                    continue;
                }
                let overall = annotation_agreement(&a.annotations, &b.annotations, tau).overall;
                self.record(&a.annotator, &b.annotator, overall);
            }
        }
    }

    /// Tab-separated rendering: `annotator_a  annotator_b  agreement  support`,
    /// one row per pair with support, diagonal included.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("annotator_a\tannotator_b\tagreement\tsupport\n");
        for a in &self.annotators {
            for b in self.annotators.range(a.clone()..) {
                if let Some(v) = self.cell(a, b) {
                    out.push_str(&format!("{a}\t{b}\t{v:.6}\t{}\n", self.support(a, b)));
                }
            }
        }
        out
    }
}

/// Build the agreement matrix over every task of a corpus.
pub fn annotator_matrix(corpus: &Corpus, tau: f64) -> AgreementMatrix {
    let mut m = AgreementMatrix::default();
    for task in corpus.tasks() {
        let subs = corpus.submissions_for(&task.id);
        m.add_task(&subs, tau);
    }
    m
}
