//! Ground-truth comparison: row taxonomy, coarse/fine correctness, Recall
//! and FPR.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, SubmissionId, TaskId};
use crate::model::{PiiTypeId, Registry, SpanAnnotation};
use crate::workflow::Phase;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grain {
    Fine,
    Coarse,
}

impl Grain {
    pub const ALL: [Grain; 2] = [Grain::Fine, Grain::Coarse];

    pub fn as_str(self) -> &'static str {
        match self {
            Grain::Fine => "fine",
            Grain::Coarse => "coarse",
        }
    }
}

impl fmt::Display for Grain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Grain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fine" => Ok(Grain::Fine),
            "coarse" => Ok(Grain::Coarse),
            other => Err(format!("unknown grain {other:?}")),
        }
    }
}

/// How false positives and negatives are counted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FprMode {
    /// Negatives are rows whose ground truth is empty.
    #[default]
    Row,
    /// Negatives are registry types of the locale absent from the ground
    /// truth; each such type the submission reports is a false positive.
    TypeInstance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Taxonomy {
    Agreement,
    Disagreement,
    NotReviewed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RowVerdict {
    pub taxonomy: Taxonomy,
    pub fine_correct: Option<bool>,
    pub coarse_correct: Option<bool>,
}

impl RowVerdict {
    pub fn correct(&self, grain: Grain) -> Option<bool> {
        match grain {
            Grain::Fine => self.fine_correct,
            Grain::Coarse => self.coarse_correct,
        }
    }
}

/// Canonical types ordered by span start, then span end.
pub fn type_sequence(annotations: &[SpanAnnotation]) -> Vec<PiiTypeId> {
    let mut anns: Vec<&SpanAnnotation> = annotations.iter().collect();
    anns.sort_by_key(|a| (a.span.start, a.span.end));
    anns.into_iter().map(|a| a.pii_type.clone()).collect()
}

pub fn row_correct_fine(gt: &[PiiTypeId], sub: &[PiiTypeId]) -> bool {
    gt == sub
}

/// True when the two sequences share at least one type (counted as a
/// multiset), or both are empty.
pub fn row_correct_coarse(gt: &[PiiTypeId], sub: &[PiiTypeId]) -> bool {
    if gt.is_empty() && sub.is_empty() {
        return true;
    }
    let gt: BTreeSet<&PiiTypeId> = gt.iter().collect();
    sub.iter().any(|t| gt.contains(t))
}

pub fn classify_row(gt: Option<&[SpanAnnotation]>, sub: &[SpanAnnotation]) -> RowVerdict {
    let Some(gt) = gt else {
        return RowVerdict {
            taxonomy: Taxonomy::NotReviewed,
            fine_correct: None,
            coarse_correct: None,
        };
    };
    let (g, s) = (type_sequence(gt), type_sequence(sub));
    let fine = row_correct_fine(&g, &s);
    RowVerdict {
        taxonomy: if fine {
            Taxonomy::Agreement
        } else {
            Taxonomy::Disagreement
        },
        fine_correct: Some(fine),
        coarse_correct: Some(row_correct_coarse(&g, &s)),
    }
}

/// One submission compared with its task's ground truth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowOutcome {
    pub task_id: TaskId,
    pub submission_id: SubmissionId,
    pub locale: String,
    pub phase: Phase,
    pub verdict: RowVerdict,
    /// `None` when the task has no ground truth.
    pub gt_positive: Option<bool>,
    pub sub_positive: bool,
    /// Distinct reported types that are registered for the locale but
    /// absent from the ground truth.
    pub spurious_types: usize,
    /// Registered types of the locale absent from the ground truth.
    pub negative_types: usize,
}

/// Compare every submission in the corpus with its task's ground truth.
pub fn row_outcomes(corpus: &Corpus, registry: &Registry) -> Vec<RowOutcome> {
    let mut rows = Vec::new();
    for task in corpus.tasks() {
        let gt = corpus.ground_truth(&task.id).map(|g| g.annotations.as_slice());
        let registered = registry.registry_for(&task.locale).unwrap_or_default();
        for sub in corpus.submissions_for(&task.id) {
            let (spurious, negatives) = match gt {
                Some(gt) => {
                    let gt_types: BTreeSet<&PiiTypeId> = gt.iter().map(|a| &a.pii_type).collect();
                    let negatives: BTreeSet<&PiiTypeId> =
                        registered.iter().filter(|t| !gt_types.contains(t)).collect();
                    let reported: BTreeSet<&PiiTypeId> =
                        sub.annotations.iter().map(|a| &a.pii_type).collect();
                    (reported.intersection(&negatives).count(), negatives.len())
                }
                None => (0, 0),
            };
            rows.push(RowOutcome {
                task_id: task.id.clone(),
                submission_id: sub.id.clone(),
                locale: task.locale.to_string(),
                phase: task.phase,
                verdict: classify_row(gt, &sub.annotations),
                gt_positive: gt.map(|g| !g.is_empty()),
                sub_positive: !sub.annotations.is_empty(),
                spurious_types: spurious,
                negative_types: negatives,
            });
        }
    }
    rows
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
    pub na: usize,
}

impl Counts {
    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn fpr(&self) -> Option<f64> {
        ratio(self.fp, self.fp + self.tn)
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Confusion counts over `rows` at one grain. Rows without ground truth
/// only contribute to `na`.
pub fn count_rows<'a>(
    rows: impl IntoIterator<Item = &'a RowOutcome>,
    grain: Grain,
    mode: FprMode,
) -> Counts {
    let mut c = Counts::default();
    for row in rows {
        let (Some(positive), Some(correct)) = (row.gt_positive, row.verdict.correct(grain)) else {
            c.na += 1;
            continue;
        };
        if positive {
            if correct {
                c.tp += 1;
            } else {
                c.fn_ += 1;
            }
        }
        match mode {
            FprMode::Row if !positive => {
                if row.sub_positive {
                    c.fp += 1;
                } else {
                    c.tn += 1;
                }
            }
            FprMode::Row => {}
            FprMode::TypeInstance => {
                c.fp += row.spurious_types;
                c.tn += row.negative_types - row.spurious_types;
            }
        }
    }
    c
}

pub fn recall(rows: &[RowOutcome], grain: Grain) -> Option<f64> {
    count_rows(rows, grain, FprMode::Row).recall()
}

pub fn fpr(rows: &[RowOutcome], grain: Grain, mode: FprMode) -> Option<f64> {
    count_rows(rows, grain, mode).fpr()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroupBy {
    pub locale: bool,
    pub phase: bool,
}

impl GroupBy {
    pub const BOTH: GroupBy = GroupBy {
        locale: true,
        phase: true,
    };
    pub const NONE: GroupBy = GroupBy {
        locale: false,
        phase: false,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub locale: Option<String>,
    pub phase: Option<Phase>,
    pub grain: Grain,
    pub recall: Option<f64>,
    pub fpr: Option<f64>,
    pub counts: Counts,
}

/// Recall and FPR per group, at both grains.
pub fn metrics_report(rows: &[RowOutcome], group_by: GroupBy, mode: FprMode) -> Vec<MetricsReport> {
    type Key = (Option<String>, Option<Phase>);
    let mut groups: BTreeMap<Key, Vec<&RowOutcome>> = BTreeMap::new();
    for row in rows {
        let key = (
            group_by.locale.then(|| row.locale.clone()),
            group_by.phase.then_some(row.phase),
        );
        groups.entry(key).or_default().push(row);
    }
    let mut out = Vec::new();
    for ((locale, phase), rows) in groups {
        for grain in Grain::ALL {
            let counts = count_rows(rows.iter().copied(), grain, mode);
            out.push(MetricsReport {
                locale: locale.clone(),
                phase,
                grain,
                recall: counts.recall(),
                fpr: counts.fpr(),
                counts,
            });
        }
    }
    out
}

/// Ratio cell: six decimals, `NA` when undefined.
pub fn fmt_ratio(value: Option<f64>) -> String {
    value.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"))
}

pub const REPORT_HEADER: &str = "locale\tphase\tgrain\trecall\tfpr\ttp\tfn\tfp\ttn\tna";

pub fn report_tsv(reports: &[MetricsReport]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in reports {
        let c = &r.counts;
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.locale.as_deref().unwrap_or("*"),
            r.phase.map_or("*", Phase::as_str),
            r.grain,
            fmt_ratio(r.recall),
            fmt_ratio(r.fpr),
            c.tp,
            c.fn_,
            c.fp,
            c.tn,
            c.na
        );
    }
    out
}

/// One metric for a locale across the three phases.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseTrend {
    pub locale: String,
    pub values: [Option<f64>; 3],
}

impl PhaseTrend {
    /// Production minus pilot, when both are defined.
    pub fn delta(&self) -> Option<f64> {
        Some(self.values[2]? - self.values[0]?)
    }

    pub fn render(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| format!("{v:.3}"));
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.locale,
            cell(self.values[0]),
            cell(self.values[1]),
            cell(self.values[2]),
            self.delta()
                .map_or_else(|| "NA".to_string(), |d| format!("{d:+.3}"))
        )
    }
}

/// Per-locale phase trend of recall or FPR at one grain, taken from a
/// locale x phase report.
pub fn phase_trends(reports: &[MetricsReport], grain: Grain, use_fpr: bool) -> Vec<PhaseTrend> {
    let mut by_locale: BTreeMap<String, [Option<f64>; 3]> = BTreeMap::new();
    for r in reports.iter().filter(|r| r.grain == grain) {
        let (Some(locale), Some(phase)) = (&r.locale, r.phase) else {
            continue;
        };
        let idx = Phase::ALL.iter().position(|p| *p == phase).expect("phase");
        by_locale.entry(locale.clone()).or_default()[idx] = if use_fpr { r.fpr } else { r.recall };
    }
    by_locale
        .into_iter()
        .map(|(locale, values)| PhaseTrend { locale, values })
        .collect()
}

pub const TREND_HEADER: &str = "locale\tpilot\ttraining\tproduction\tdelta";
