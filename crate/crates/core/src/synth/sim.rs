//! Simulated annotators and reviewers.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::agreement::annotation_agreement;
use crate::corpus::{AnnotatorId, Submission, Task};
use crate::model::{char_slice, Locale, PiiTypeId, Registry, Span, SpanAnnotation};
use crate::workflow::{rubric_categories, Review, Verdict};

/// Commonly confused type pairs; either side may be reported for the other.
pub const CONFUSABLE: &[(&str, &str)] = &[
    ("CREDIT DEBIT NUMBER", "BANK ACCOUNT NUMBER"),
    ("CREDIT DEBIT CVV", "PIN"),
    ("SSN", "HEALTH ID"),
    ("TIN", "SSN"),
    ("AWS SECRET KEY", "AWS ACCESS KEY ID"),
    ("USERNAME", "SWIFT CODE"),
    ("SSN", "PIN"),
    ("HEALTH ID", "NATIONAL ID"),
    ("MAC ADDRESS", "IP ADDRESS"),
    ("CREDIT DEBIT CVV", "CREDIT DEBIT NUMBER"),
    ("USERNAME", "EMAIL"),
    ("PHONE", "BANK ROUTING"),
    ("DATE", "CREDIT DEBIT EXPIRY"),
];

/// Error-injection parameters of a simulated annotator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotatorProfile {
    pub miss_rate: f64,
    /// True type to a distribution over reported types. Types without a
    /// row are always reported correctly.
    pub confusion: BTreeMap<PiiTypeId, Vec<(PiiTypeId, f64)>>,
    pub span_jitter: usize,
    pub spurious_rate: f64,
}

/// Rates used to derive a full profile for a locale.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileRates {
    pub miss: f64,
    pub confusion: f64,
    pub spurious: f64,
    #[serde(default)]
    pub jitter: usize,
}

impl ProfileRates {
    pub const PERFECT: ProfileRates = ProfileRates {
        miss: 0.0,
        confusion: 0.0,
        spurious: 0.0,
        jitter: 0,
    };
}

fn probability(name: &str, p: f64) -> Result<(), SynthError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(SynthError::SpecInvalid(format!("{name} {p} outside [0, 1]")))
    }
}

impl AnnotatorProfile {
    pub fn perfect() -> Self {
        AnnotatorProfile {
            miss_rate: 0.0,
            confusion: BTreeMap::new(),
            span_jitter: 0,
            spurious_rate: 0.0,
        }
    }

    /// Profile where each kept annotation is retyped with probability
    /// `rates.confusion`. The replacement is a known confusable partner
    /// registered for the locale, else a registered type of the same
    /// category, else any other registered type.
    pub fn for_locale(rates: ProfileRates, locale: &Locale, registry: &Registry) -> Result<Self, SynthError> {
        let registered = registry
            .registry_for(locale)
            .map_err(|e| SynthError::SpecInvalid(e.to_string()))?;
        let mut confusion = BTreeMap::new();
        if rates.confusion > 0.0 {
            for t in &registered {
                let partners: BTreeSet<PiiTypeId> = CONFUSABLE
                    .iter()
                    .filter_map(|(a, b)| {
                        if *a == t.as_str() {
                            Some(*b)
                        } else if *b == t.as_str() {
                            Some(*a)
                        } else {
                            None
                        }
                    })
                    .filter_map(|name| registered.iter().find(|r| r.as_str() == name).cloned())
                    .collect();
                let targets: Vec<PiiTypeId> = if !partners.is_empty() {
                    partners.into_iter().collect()
                } else {
                    let cat = registry.category_of(t);
                    let siblings: Vec<PiiTypeId> = registered
                        .iter()
                        .filter(|r| *r != t && registry.category_of(r) == cat)
                        .cloned()
                        .collect();
                    if siblings.is_empty() {
                        registered.iter().filter(|r| *r != t).cloned().collect()
                    } else {
                        siblings
                    }
                };
                let share = rates.confusion / targets.len() as f64;
                let mut row = vec![(t.clone(), 1.0 - rates.confusion)];
                row.extend(targets.into_iter().map(|x| (x, share)));
                confusion.insert(t.clone(), row);
            }
        }
        let p = AnnotatorProfile {
            miss_rate: rates.miss,
            confusion,
            span_jitter: rates.jitter,
            spurious_rate: rates.spurious,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        probability("miss_rate", self.miss_rate)?;
        probability("spurious_rate", self.spurious_rate)?;
        for (t, row) in &self.confusion {
            let mut sum = 0.0;
            for (_, p) in row {
                probability("confusion probability", *p)?;
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(SynthError::SpecInvalid(format!("confusion row for {t} sums to {sum}")));
            }
        }
        Ok(())
    }

    fn report_type(&self, truth: &PiiTypeId, rng: &mut impl Rng) -> PiiTypeId {
        let Some(row) = self.confusion.get(truth) else {
            return truth.clone();
        };
        let mut x: f64 = rng.gen();
        for (t, p) in row {
            if x < *p {
                return t.clone();
            }
            x -= p;
        }
        row.last().map_or_else(|| truth.clone(), |(t, _)| t.clone())
    }
}

/// Whitespace-delimited tokens of `text` as character spans.
pub fn token_spans(text: &str) -> Vec<Span> {
    let mut out = Vec::new();
    let mut start = None;
    let mut n = 0;
    for (i, c) in text.chars().enumerate() {
        match (c.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                out.push(Span::new(s, i));
                start = None;
            }
            _ => {}
        }
        n = i + 1;
    }
    if let Some(s) = start {
        out.push(Span::new(s, n));
    }
    out
}

fn overlaps(a: Span, b: Span) -> bool {
    a.start < b.end && b.start < a.end
}

/// Produce one annotator's answer for a prompt with known ground truth.
///
/// Each reference annotation is dropped with `miss_rate`, otherwise
/// retyped per the confusion row and its boundaries moved by up to
/// `span_jitter` characters. With `spurious_rate` one extra annotation of a
/// random registered type is placed on a token that no reference
/// annotation touches.
pub fn simulate_annotator(
    prompt: &str,
    gt: &[SpanAnnotation],
    locale: &Locale,
    profile: &AnnotatorProfile,
    registry: &Registry,
    rng: &mut impl Rng,
) -> Vec<SpanAnnotation> {
    let len = prompt.chars().count();
    let mut out = Vec::new();
    for g in gt {
        if rng.gen::<f64>() < profile.miss_rate {
            continue;
        }
        let ty = profile.report_type(&g.pii_type, rng);
        let mut span = g.span;
        if profile.span_jitter > 0 {
            let j = profile.span_jitter as i64;
            let start = (span.start as i64 + rng.gen_range(-j..=j)).clamp(0, len as i64) as usize;
            let end = (span.end as i64 + rng.gen_range(-j..=j)).clamp(0, len as i64) as usize;
            if start < end {
                span = Span::new(start, end);
            }
        }
        let text = char_slice(prompt, span).expect("span within prompt");
        out.push(SpanAnnotation::new(span, ty, text));
    }
    if profile.spurious_rate > 0.0 && rng.gen::<f64>() < profile.spurious_rate {
        let free: Vec<Span> = token_spans(prompt)
            .into_iter()
            .filter(|t| !gt.iter().chain(out.iter()).any(|a| overlaps(a.span, *t)))
            .collect();
        let types: Vec<PiiTypeId> = registry.registry_for(locale).unwrap_or_default().into_iter().collect();
        if let (Some(span), Some(ty)) = (free.choose(rng).copied(), types.choose(rng).cloned()) {
            let text = char_slice(prompt, span).expect("token within prompt");
            out.push(SpanAnnotation::new(span, ty, text));
        }
    }
    out.sort();
    out
}

/// Review an arbitrated task against a known reference: pick the
/// submission that agrees best with it, accept it as is when identical,
/// reject it when it agrees less than half, otherwise correct it.
pub fn simulated_review(
    task: &Task,
    submissions: &[&Submission],
    reference: &[SpanAnnotation],
    reviewer: &AnnotatorId,
    tau: f64,
    at: u64,
) -> Option<Review> {
    let mut best: Option<(&Submission, f64)> = None;
    for s in submissions {
        let score = annotation_agreement(&s.annotations, reference, tau).overall;
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((s, score));
        }
    }
    let (chosen, score) = best?;
    let categories = rubric_categories(&chosen.annotations, reference);
    let verdict = if categories.is_empty() {
        Verdict::AcceptedAsIs
    } else if score < 0.5 {
        Verdict::Rejected
    } else {
        Verdict::Corrected
    };
    let ground_truth = if verdict == Verdict::AcceptedAsIs {
        chosen.annotations.clone()
    } else {
        reference.to_vec()
    };
    Some(Review {
        task_id: task.id.clone(),
        reviewer: reviewer.clone(),
        chosen_submission: chosen.id.clone(),
        ground_truth,
        error_categories: categories,
        verdict,
        reviewed_at: at,
        request_id: None,
    })
}
