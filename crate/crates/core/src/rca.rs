//! Root-cause analysis of disagreements, confusion-pair mining and dataset
//! distribution reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agreement::{iou_parts, match_spans, normalize_text};
use crate::corpus::{Corpus, GroundTruth, Submission, Task, TaskId};
use crate::metrics::type_sequence;
use crate::model::{Locale, PiiTypeId, Registry, SpanAnnotation};
use crate::workflow::Phase;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RcaError {
    #[error("submission is for task {sub}, ground truth for task {gt}")]
    PromptMismatch { gt: TaskId, sub: TaskId },
    #[error("unknown distribution axis {0:?} (expected domain, length_bin or pii_category)")]
    UnknownAxis(String),
    #[error("invalid length bins: {0}")]
    InvalidBins(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RcaCategory {
    PiiType,
    PiiSpan,
    PiiText,
    NumberOfPiis,
    SamePiiOrder,
}

impl RcaCategory {
    pub const ALL: [RcaCategory; 5] = [
        RcaCategory::PiiType,
        RcaCategory::PiiSpan,
        RcaCategory::PiiText,
        RcaCategory::NumberOfPiis,
        RcaCategory::SamePiiOrder,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RcaCategory::PiiType => "PII_TYPE",
            RcaCategory::PiiSpan => "PII_SPAN",
            RcaCategory::PiiText => "PII_TEXT",
            RcaCategory::NumberOfPiis => "NUMBER_OF_PIIS",
            RcaCategory::SamePiiOrder => "SAME_PII_ORDER",
        }
    }
}

impl fmt::Display for RcaCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn type_multiset(anns: &[SpanAnnotation]) -> BTreeMap<&PiiTypeId, usize> {
    let mut m = BTreeMap::new();
    for a in anns {
        *m.entry(&a.pii_type).or_insert(0) += 1;
    }
    m
}

/// Disagreement categories between a reference and a submission's
/// annotations. Empty exactly when both hold the same annotations.
pub fn categorize(gt: &[SpanAnnotation], sub: &[SpanAnnotation], tau: f64) -> BTreeSet<RcaCategory> {
    let mut out = BTreeSet::new();
    let m = match_spans(gt, sub, tau);
    for p in &m.pairs {
        let (g, s) = (&gt[p.left], &sub[p.right]);
        if g.pii_type != s.pii_type {
            out.insert(RcaCategory::PiiType);
        }
        if g.span != s.span {
            out.insert(RcaCategory::PiiSpan);
        } else if normalize_text(&g.text) != normalize_text(&s.text) {
            out.insert(RcaCategory::PiiText);
        }
    }
    // overlapping annotations that the matching left apart
    let loose = m.unmatched_left.iter().any(|&i| {
        sub.iter().any(|s| iou_parts(gt[i].span, s.span).0 > 0)
    }) || m.unmatched_right.iter().any(|&j| {
        gt.iter().any(|g| iou_parts(g.span, sub[j].span).0 > 0)
    });
    if loose {
        out.insert(RcaCategory::PiiSpan);
    }

    let same_count = gt.len() == sub.len();
    if !same_count {
        out.insert(RcaCategory::NumberOfPiis);
    } else {
        if !m.unmatched_left.is_empty() {
            out.insert(RcaCategory::PiiSpan);
        }
        if type_multiset(gt) != type_multiset(sub) {
            out.insert(RcaCategory::PiiType);
        } else if type_sequence(gt) != type_sequence(sub) {
            out.insert(RcaCategory::SamePiiOrder);
        }
    }
    out
}

pub fn categorize_disagreement(
    gt: &GroundTruth,
    sub: &Submission,
    tau: f64,
) -> Result<BTreeSet<RcaCategory>, RcaError> {
    if gt.task_id != sub.task_id {
        return Err(RcaError::PromptMismatch {
            gt: gt.task_id.clone(),
            sub: sub.task_id.clone(),
        });
    }
    Ok(categorize(&gt.annotations, &sub.annotations, tau))
}

/// Unordered pair of confused types, stored alphabetically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionPair {
    pub first: PiiTypeId,
    pub second: PiiTypeId,
    pub count: usize,
    pub phase: Phase,
}

fn rank(counts: BTreeMap<(PiiTypeId, PiiTypeId), usize>, phase: Phase, top_k: usize) -> Vec<ConfusionPair> {
    let mut pairs: Vec<ConfusionPair> = counts
        .into_iter()
        .map(|((first, second), count)| ConfusionPair {
            first,
            second,
            count,
            phase,
        })
        .collect();
    pairs.sort_by(|a, b| {
        b.count
            .cmp(&a.count)
            .then_with(|| a.first.cmp(&b.first))
            .then_with(|| a.second.cmp(&b.second))
    });
    pairs.truncate(top_k);
    pairs
}

fn pair_key(a: &PiiTypeId, b: &PiiTypeId) -> (PiiTypeId, PiiTypeId) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

fn count_confusions<'a>(
    corpus: &'a Corpus,
    tasks: impl Iterator<Item = &'a Task>,
    tau: f64,
    into: &mut BTreeMap<Phase, BTreeMap<(PiiTypeId, PiiTypeId), usize>>,
) {
    for task in tasks {
        let Some(gt) = corpus.ground_truth(&task.id) else {
            continue;
        };
        for sub in corpus.submissions_for(&task.id) {
            let m = match_spans(&gt.annotations, &sub.annotations, tau);
            for p in m.pairs {
                let (g, s) = (&gt.annotations[p.left].pii_type, &sub.annotations[p.right].pii_type);
                if g != s {
                    *into
                        .entry(task.phase)
                        .or_default()
                        .entry(pair_key(g, s))
                        .or_insert(0) += 1;
                }
            }
        }
    }
}

/// Type confusions between submissions and ground truth, per phase,
/// ranked by count and then alphabetically.
pub fn confusion_pairs(corpus: &Corpus, tau: f64, top_k: usize) -> BTreeMap<Phase, Vec<ConfusionPair>> {
    let mut counts = BTreeMap::new();
    count_confusions(corpus, corpus.tasks(), tau, &mut counts);
    counts
        .into_iter()
        .map(|(phase, c)| (phase, rank(c, phase, top_k)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LengthBin {
    S,
    M,
    L,
    XL,
}

impl LengthBin {
    pub const ALL: [LengthBin; 4] = [LengthBin::S, LengthBin::M, LengthBin::L, LengthBin::XL];

    pub fn as_str(self) -> &'static str {
        match self {
            LengthBin::S => "S",
            LengthBin::M => "M",
            LengthBin::L => "L",
            LengthBin::XL => "XL",
        }
    }
}

impl fmt::Display for LengthBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LengthBin {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LengthBin::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| format!("unknown length bin {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountUnit {
    /// Maximal runs of non-whitespace.
    #[default]
    Words,
    /// Non-whitespace characters.
    Chars,
}

impl CountUnit {
    pub fn count(self, text: &str) -> usize {
        match self {
            CountUnit::Words => text.split_whitespace().count(),
            CountUnit::Chars => text.chars().filter(|c| !c.is_whitespace()).count(),
        }
    }
}

/// Inclusive upper bounds of the S, M, L and XL bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinBounds {
    pub s_max: usize,
    pub m_max: usize,
    pub l_max: usize,
    pub xl_max: usize,
    #[serde(default)]
    pub unit: CountUnit,
}

impl Default for BinBounds {
    fn default() -> Self {
        BinBounds {
            s_max: 29,
            m_max: 239,
            l_max: 1199,
            xl_max: 3500,
            unit: CountUnit::Words,
        }
    }
}

impl BinBounds {
    pub fn validate(&self) -> Result<(), RcaError> {
        if self.s_max < self.m_max && self.m_max < self.l_max && self.l_max < self.xl_max {
            Ok(())
        } else {
            Err(RcaError::InvalidBins(format!(
                "bounds must increase strictly: {} {} {} {}",
                self.s_max, self.m_max, self.l_max, self.xl_max
            )))
        }
    }

    /// Inclusive count range of a bin.
    pub fn range(&self, bin: LengthBin) -> (usize, usize) {
        match bin {
            LengthBin::S => (0, self.s_max),
            LengthBin::M => (self.s_max + 1, self.m_max),
            LengthBin::L => (self.m_max + 1, self.l_max),
            LengthBin::XL => (self.l_max + 1, self.xl_max),
        }
    }

    pub fn bin_of(&self, count: usize) -> LengthBin {
        if count <= self.s_max {
            LengthBin::S
        } else if count <= self.m_max {
            LengthBin::M
        } else if count <= self.l_max {
            LengthBin::L
        } else {
            LengthBin::XL
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LengthBinConfig {
    #[serde(default)]
    pub default: BinBounds,
    /// Per-locale bounds, e.g. character counts for zh locales.
    #[serde(default)]
    pub locales: BTreeMap<String, BinBounds>,
}

impl LengthBinConfig {
    pub fn bounds_for(&self, locale: &Locale) -> &BinBounds {
        self.locales.get(locale.code()).unwrap_or(&self.default)
    }

    pub fn validate(&self) -> Result<(), RcaError> {
        self.default.validate()?;
        self.locales.values().try_for_each(BinBounds::validate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BinAssignment {
    pub bin: LengthBin,
    pub count: usize,
    /// The count exceeds the XL upper bound and was clamped into XL.
    pub clamped: bool,
}

pub fn length_bin(prompt: &str, cfg: &LengthBinConfig, locale: &Locale) -> BinAssignment {
    let bounds = cfg.bounds_for(locale);
    let count = bounds.unit.count(prompt);
    BinAssignment {
        bin: bounds.bin_of(count),
        count,
        clamped: count > bounds.xl_max,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Domain,
    LengthBin,
    PiiCategory,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Domain => "domain",
            Axis::LengthBin => "length_bin",
            Axis::PiiCategory => "pii_category",
        }
    }
}

impl FromStr for Axis {
    type Err = RcaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "domain" => Ok(Axis::Domain),
            "length_bin" => Ok(Axis::LengthBin),
            "pii_category" => Ok(Axis::PiiCategory),
            other => Err(RcaError::UnknownAxis(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionReport {
    pub axis: Axis,
    pub group: String,
    pub counts: BTreeMap<String, usize>,
    pub total: usize,
    pub proportions: BTreeMap<String, f64>,
    /// Prompts longer than the XL bound (length_bin axis only).
    pub clamped: usize,
}

/// Bucket proportions per locale group. The pii_category axis counts
/// ground-truth annotations; the other axes count tasks.
pub fn distributions(
    corpus: &Corpus,
    registry: &Registry,
    axis: Axis,
    bins: &LengthBinConfig,
) -> Vec<DistributionReport> {
    let mut groups: BTreeMap<String, (BTreeMap<String, usize>, usize)> = BTreeMap::new();
    for task in corpus.tasks() {
        let (counts, clamped) = groups
            .entry(registry.group_of(&task.locale).to_string())
            .or_default();
        match axis {
            Axis::Domain => *counts.entry(task.domain.clone()).or_insert(0) += 1,
            Axis::LengthBin => {
                let b = length_bin(&task.prompt, bins, &task.locale);
                *counts.entry(b.bin.to_string()).or_insert(0) += 1;
                *clamped += usize::from(b.clamped);
            }
            Axis::PiiCategory => {
                for a in corpus.ground_truth(&task.id).map_or(&[][..], |g| &g.annotations) {
                    let cat = registry
                        .category_of(&a.pii_type)
                        .map_or_else(|| a.pii_type.to_string(), |c| c.to_string());
                    *counts.entry(cat).or_insert(0) += 1;
                }
            }
        }
    }
    groups
        .into_iter()
        .map(|(group, (counts, clamped))| {
            let total: usize = counts.values().sum();
            let proportions = counts
                .iter()
                .map(|(k, &v)| (k.clone(), v as f64 / total as f64))
                .collect();
            DistributionReport {
                axis,
                group,
                counts,
                total,
                proportions,
                clamped,
            }
        })
        .collect()
}

pub fn distributions_tsv(reports: &[DistributionReport]) -> String {
    let mut out = String::from("axis\tgroup\tbucket\tcount\tproportion\n");
    for r in reports {
        for (bucket, count) in &r.counts {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{:.6}",
                r.axis.as_str(),
                r.group,
                bucket,
                count,
                r.proportions[bucket]
            );
        }
    }
    out
}

/// Half-open range of review timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: u64,
    pub end: u64,
}

impl Window {
    pub fn contains(&self, at: u64) -> bool {
        (self.start..self.end).contains(&at)
    }

    /// The window of equal length ending where this one starts.
    pub fn previous(&self) -> Window {
        let len = self.end.saturating_sub(self.start);
        Window {
            start: self.start.saturating_sub(len),
            end: self.start,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct WindowStats {
    pub reviewed_tasks: usize,
    pub rows: usize,
    pub disagreement_rows: usize,
    pub categories: BTreeMap<RcaCategory, usize>,
    /// Locale code to number of rows with at least one category.
    pub affected_locales: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RcaReport {
    pub window: Window,
    pub current: WindowStats,
    pub previous: WindowStats,
    pub confusion_pairs: Vec<ConfusionPair>,
    /// Per category: current count minus previous count.
    pub trend: BTreeMap<RcaCategory, i64>,
    /// No reviews fell into the window.
    pub empty: bool,
}

impl RcaReport {
    pub fn total_trend(&self) -> i64 {
        self.current.disagreement_rows as i64 - self.previous.disagreement_rows as i64
    }
}

fn reviewed_in<'a>(corpus: &'a Corpus, window: Window) -> impl Iterator<Item = &'a Task> + 'a {
    corpus.reviews().filter(move |r| window.contains(r.reviewed_at)).filter_map(|r| corpus.task(&r.task_id))
}

fn window_stats(corpus: &Corpus, window: Window, tau: f64) -> WindowStats {
    let mut stats = WindowStats::default();
    for c in RcaCategory::ALL {
        stats.categories.insert(c, 0);
    }
    for task in reviewed_in(corpus, window) {
        let Some(gt) = corpus.ground_truth(&task.id) else {
            continue;
        };
        stats.reviewed_tasks += 1;
        for sub in corpus.submissions_for(&task.id) {
            stats.rows += 1;
            let cats = categorize(&gt.annotations, &sub.annotations, tau);
            if cats.is_empty() {
                continue;
            }
            stats.disagreement_rows += 1;
            *stats.affected_locales.entry(task.locale.to_string()).or_insert(0) += 1;
            for c in cats {
                *stats.categories.entry(c).or_insert(0) += 1;
            }
        }
    }
    stats
}

/// Disagreement categories, confusion pairs and affected locales for the
/// tasks reviewed within `window`, with the change against the previous
/// window of the same length.
pub fn rca_report(corpus: &Corpus, window: Window, tau: f64, top_k: usize) -> RcaReport {
    let current = window_stats(corpus, window, tau);
    let previous = window_stats(corpus, window.previous(), tau);
    let mut counts = BTreeMap::new();
    count_confusions(corpus, reviewed_in(corpus, window), tau, &mut counts);
    let mut merged: BTreeMap<(PiiTypeId, PiiTypeId), usize> = BTreeMap::new();
    for c in counts.into_values() {
        for (k, v) in c {
            *merged.entry(k).or_insert(0) += v;
        }
    }
    // phase is not meaningful once merged across phases; use the latest one present
    let phase = reviewed_in(corpus, window)
        .map(|t| t.phase)
        .max()
        .unwrap_or(Phase::Production);
    let trend = RcaCategory::ALL
        .into_iter()
        .map(|c| (c, current.categories[&c] as i64 - previous.categories[&c] as i64))
        .collect();
    RcaReport {
        window,
        empty: current.reviewed_tasks == 0,
        confusion_pairs: rank(merged, phase, top_k),
        current,
        previous,
        trend,
    }
}

pub fn rca_tsv(report: &RcaReport) -> String {
    let mut out = String::from("section\tkey\tcurrent\tprevious\ttrend\n");
    for c in RcaCategory::ALL {
        let _ = writeln!(
            out,
            "category\t{}\t{}\t{}\t{:+}",
            c,
            report.current.categories[&c],
            report.previous.categories[&c],
            report.trend[&c]
        );
    }
    for p in &report.confusion_pairs {
        let _ = writeln!(out, "confusion\t{} <-> {}\t{}\t\t", p.first, p.second, p.count);
    }
    for (locale, n) in &report.current.affected_locales {
        let prev = report.previous.affected_locales.get(locale).copied().unwrap_or(0);
        let _ = writeln!(out, "locale\t{locale}\t{n}\t{prev}\t{:+}", *n as i64 - prev as i64);
    }
    out
}

pub fn confusion_tsv(pairs: &BTreeMap<Phase, Vec<ConfusionPair>>) -> String {
    let mut out = String::from("phase\tfirst\tsecond\tcount\n");
    for (phase, list) in pairs {
        for p in list {
            let _ = writeln!(out, "{phase}\t{}\t{}\t{}", p.first, p.second, p.count);
        }
    }
    out
}

/// Share of reference annotations that no annotation of the paired
/// submission overlaps. `None` without reference annotations.
pub fn miss_rate<'a>(
    rows: impl IntoIterator<Item = (&'a [SpanAnnotation], &'a [SpanAnnotation])>,
) -> Option<f64> {
    let (mut missed, mut total) = (0usize, 0usize);
    for (gt, sub) in rows {
        for g in gt {
            total += 1;
            if !sub.iter().any(|s| iou_parts(g.span, s.span).0 > 0) {
                missed += 1;
            }
        }
    }
    (total > 0).then(|| missed as f64 / total as f64)
}
