//! Synthetic prompts with exact ground truth, and simulated annotators.
//!
//! Everything here is a pure function of its inputs and seed. Each task
//! draws from its own ChaCha stream seeded from the corpus seed and the
//! task id, so a corpus can be generated in any order with the same result.

mod sim;
mod template;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use sim::{
    simulate_annotator, simulated_review, token_spans, AnnotatorProfile, ProfileRates, CONFUSABLE,
};
pub use template::{gen_value, FormatTemplate, TemplateRegistry};

use crate::corpus::{AnnotatorId, Corpus, GroundTruth, Submission, SubmissionId, Task, TaskId};
use crate::model::{Locale, PiiTypeId, Registry, Span, SpanAnnotation};
use crate::rca::{BinBounds, LengthBin, LengthBinConfig};
use crate::workflow::Phase;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("no template for {pii_type} in {locale}")]
    NoTemplate { locale: String, pii_type: String },
    #[error("cannot fit {n_pii} PII values into a {bin} prompt")]
    BinInfeasible { bin: LengthBin, n_pii: usize },
    #[error("invalid corpus spec: {0}")]
    SpecInvalid(String),
    #[error("{table} line {line}: {message}")]
    Table {
        table: String,
        line: usize,
        message: String,
    },
}

/// Seed for one unit of work (a task) derived from the corpus seed.
pub fn derive_seed(seed: u64, key: &str) -> u64 {
    // FNV-1a over the key, then a splitmix64 finaliser
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn task_rng(seed: u64, task: &TaskId) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, task.as_str()))
}

/// Build a prompt of filler words with one generated value per entry of
/// `types`, its size falling inside `bin`.
pub fn gen_prompt(
    templates: &TemplateRegistry,
    locale: &Locale,
    bounds: &BinBounds,
    bin: LengthBin,
    types: &[PiiTypeId],
    rng: &mut impl Rng,
) -> Result<(String, Vec<SpanAnnotation>), SynthError> {
    let (lo, hi) = bounds.range(bin);
    let infeasible = SynthError::BinInfeasible {
        bin,
        n_pii: types.len(),
    };
    if types.len() > hi {
        return Err(infeasible);
    }
    let values = types
        .iter()
        .map(|t| gen_value(templates, locale, t, rng))
        .collect::<Result<Vec<_>, _>>()?;
    let pii_size: usize = values.iter().map(|v| bounds.unit.count(v)).sum();
    if pii_size > hi {
        return Err(infeasible);
    }
    let filler = templates
        .words(locale, "filler")
        .ok_or_else(|| SynthError::SpecInvalid(format!("no filler words for {locale}")))?;

    let target = rng.gen_range(lo.max(pii_size)..=hi);
    let mut size = pii_size;
    let mut tokens: Vec<Option<&str>> = Vec::new();
    while size < target {
        let room = target - size;
        let fits: Vec<&String> = filler.iter().filter(|w| bounds.unit.count(w) <= room).collect();
        let Some(w) = fits.choose(rng) else {
            break;
        };
        size += bounds.unit.count(w);
        tokens.push(Some(w.as_str()));
    }
    if size < lo {
        return Err(infeasible);
    }
    for _ in &values {
        let at = rng.gen_range(0..=tokens.len());
        tokens.insert(at, None);
    }

    let mut prompt = String::new();
    let mut chars = 0;
    let mut next_value = 0;
    let mut annotations = Vec::new();
    for (k, tok) in tokens.iter().enumerate() {
        if k > 0 {
            prompt.push(' ');
            chars += 1;
        }
        let text = match tok {
            Some(w) => *w,
            None => {
                let v = values[next_value].as_str();
                let n = v.chars().count();
                annotations.push(SpanAnnotation::new(
                    Span::new(chars, chars + n),
                    types[next_value].clone(),
                    v,
                ));
                next_value += 1;
                v
            }
        };
        prompt.push_str(text);
        chars += text.chars().count();
    }
    Ok((prompt, annotations))
}

/// Error rates of the simulated annotators in each phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseProfiles {
    pub pilot: ProfileRates,
    pub training: ProfileRates,
    pub production: ProfileRates,
}

impl PhaseProfiles {
    pub fn get(&self, phase: Phase) -> ProfileRates {
        match phase {
            Phase::Pilot => self.pilot,
            Phase::Training => self.training,
            Phase::Production => self.production,
        }
    }

    pub fn uniform(rates: ProfileRates) -> Self {
        PhaseProfiles {
            pilot: rates,
            training: rates,
            production: rates,
        }
    }
}

impl Default for PhaseProfiles {
    fn default() -> Self {
        let r = |miss, confusion, spurious| ProfileRates {
            miss,
            confusion,
            spurious,
            jitter: 0,
        };
        PhaseProfiles {
            pilot: r(0.30, 0.15, 0.05),
            training: r(0.10, 0.05, 0.02),
            production: r(0.02, 0.01, 0.005),
        }
    }
}

/// Task volume ranges per locale for the pilot, training and production
/// phases.
pub const PUBLISHED_VOLUMES: &[(&str, [(usize, usize); 3])] = &[
    ("ar-UAE", [(75, 80), (1000, 1200), (4000, 4200)]),
    ("fi-FI", [(95, 100), (1000, 1200), (4000, 4200)]),
    ("hi-IN", [(70, 75), (1000, 1200), (4000, 4200)]),
    ("no-NO", [(150, 170), (1000, 1200), (4000, 4200)]),
    ("nl-BE", [(25, 30), (300, 350), (1000, 1200)]),
    ("nl-NL", [(70, 75), (700, 800), (2500, 2600)]),
    ("pl-PL", [(80, 85), (1000, 1200), (4000, 4200)]),
    ("pt-BR", [(50, 55), (700, 800), (2500, 2600)]),
    ("pt-PT", [(25, 30), (300, 400), (1000, 1200)]),
    ("sv-SE", [(80, 85), (1000, 1200), (4000, 4200)]),
    ("zh-CN", [(75, 80), (700, 800), (2500, 2600)]),
    ("zh-SG", [(25, 30), (300, 350), (1000, 1200)]),
];

/// Everything needed to generate a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub seed: u64,
    /// Locale code to task counts for pilot, training and production.
    pub locales: BTreeMap<String, [usize; 3]>,
    /// Optional inclusive count ranges the counts must respect.
    pub ranges: BTreeMap<String, [(usize, usize); 3]>,
    pub domains: BTreeMap<String, f64>,
    pub length_bins: BTreeMap<LengthBin, f64>,
    /// Weight of prompts with 1, 2, 3, ... PII values among positive rows.
    pub pii_density: Vec<f64>,
    /// Share of prompts without PII.
    pub negative_fraction: f64,
    /// Probability that a generated PII value is a NAME; `None` draws
    /// types uniformly from the locale registry.
    pub name_share: Option<f64>,
    pub annotators_per_task: usize,
    pub pool_size: usize,
    pub profiles: PhaseProfiles,
    pub bins: LengthBinConfig,
}

/// Published volumes, but with no range checks, so a config file that
/// lists its own `locales` is not held to the published ranges.
impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            ranges: BTreeMap::new(),
            ..CorpusSpec::published_volumes(0)
        }
    }
}

impl CorpusSpec {
    /// Midpoints of the published volume ranges for the twelve locales.
    pub fn published_volumes(seed: u64) -> Self {
        let mut locales = BTreeMap::new();
        let mut ranges = BTreeMap::new();
        for (code, r) in PUBLISHED_VOLUMES {
            locales.insert(code.to_string(), r.map(|(a, b)| (a + b) / 2));
            ranges.insert(code.to_string(), *r);
        }
        CorpusSpec {
            locales,
            ranges,
            ..CorpusSpec::small(seed, &[], 0)
        }
    }

    /// `per_phase` tasks in every phase of each locale.
    pub fn small(seed: u64, locales: &[&str], per_phase: usize) -> Self {
        CorpusSpec {
            seed,
            locales: locales
                .iter()
                .map(|l| (l.to_string(), [per_phase; 3]))
                .collect(),
            ranges: BTreeMap::new(),
            domains: ["finance", "health", "insurance", "IT", "media", "retail", "travel"]
                .iter()
                .map(|d| (d.to_string(), 1.0))
                .collect(),
            length_bins: [
                (LengthBin::S, 0.40),
                (LengthBin::M, 0.45),
                (LengthBin::L, 0.12),
                (LengthBin::XL, 0.03),
            ]
            .into(),
            pii_density: vec![0.85, 0.12, 0.03],
            negative_fraction: 0.2,
            name_share: None,
            annotators_per_task: 2,
            pool_size: 8,
            profiles: PhaseProfiles::default(),
            bins: LengthBinConfig::default(),
        }
    }

    pub fn validate(&self, registry: &Registry) -> Result<(), SynthError> {
        let invalid = |m: String| Err(SynthError::SpecInvalid(m));
        for (code, counts) in &self.locales {
            let locale = Locale::parse(code).map_err(|e| SynthError::SpecInvalid(e.to_string()))?;
            if registry.locale_info(&locale).is_none() {
                return invalid(format!("unknown locale {code}"));
            }
            if let Some(r) = self.ranges.get(code) {
                for (i, (n, (lo, hi))) in counts.iter().zip(r).enumerate() {
                    if n < lo || n > hi {
                        return invalid(format!(
                            "{code} {} count {n} outside [{lo}, {hi}]",
                            Phase::ALL[i]
                        ));
                    }
                }
            }
        }
        if !(self.negative_fraction > 0.0 && self.negative_fraction < 1.0) {
            return invalid(format!("negative_fraction {} outside (0, 1)", self.negative_fraction));
        }
        if let Some(p) = self.name_share {
            if !(0.0..=1.0).contains(&p) {
                return invalid(format!("name_share {p} outside [0, 1]"));
            }
        }
        for (what, weights) in [
            ("domains", self.domains.values().copied().collect::<Vec<_>>()),
            ("length_bins", self.length_bins.values().copied().collect()),
            ("pii_density", self.pii_density.clone()),
        ] {
            if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || weights.iter().sum::<f64>() <= 0.0 {
                return invalid(format!("{what} weights must be non-negative with a positive sum"));
            }
        }
        if self.annotators_per_task < 2 || self.annotators_per_task > self.pool_size {
            return invalid(format!(
                "annotators_per_task must be in [2, pool_size], got {}",
                self.annotators_per_task
            ));
        }
        self.bins
            .validate()
            .map_err(|e| SynthError::SpecInvalid(e.to_string()))?;
        for phase in Phase::ALL {
            let r = self.profiles.get(phase);
            for (name, p) in [("miss", r.miss), ("confusion", r.confusion), ("spurious", r.spurious)] {
                if !(0.0..=1.0).contains(&p) {
                    return invalid(format!("{phase} {name} rate {p} outside [0, 1]"));
                }
            }
        }
        Ok(())
    }

    pub fn total_tasks(&self) -> usize {
        self.locales.values().flatten().sum()
    }
}

fn weighted<'a, T>(items: impl IntoIterator<Item = (&'a T, f64)>, rng: &mut impl Rng) -> &'a T
where
    T: 'a,
{
    let items: Vec<(&T, f64)> = items.into_iter().collect();
    let total: f64 = items.iter().map(|(_, w)| w).sum();
    let mut x = rng.gen::<f64>() * total;
    for (item, w) in &items {
        if x < *w {
            return item;
        }
        x -= w;
    }
    items.iter().rev().find(|(_, w)| *w > 0.0).expect("positive weight").0
}

/// Annotator ids of a locale's simulated pool.
pub fn pool_ids(locale: &str, size: usize) -> Vec<AnnotatorId> {
    (0..size)
        .map(|k| AnnotatorId::new(format!("{locale}-a{k:02}")))
        .collect()
}

/// Generate tasks, reference ground truth and simulated submissions.
pub fn gen_corpus(
    spec: &CorpusSpec,
    registry: &Registry,
    templates: &TemplateRegistry,
) -> Result<Corpus, SynthError> {
    spec.validate(registry)?;
    let mut corpus = Corpus::new();
    let name = registry.ty("NAME");
    for (code, counts) in &spec.locales {
        let locale = Locale::parse(code).expect("validated");
        let registered: Vec<PiiTypeId> = registry
            .registry_for(&locale)
            .expect("validated")
            .into_iter()
            .collect();
        let others: Vec<PiiTypeId> = registered.iter().filter(|t| **t != name).cloned().collect();
        let bounds = spec.bins.bounds_for(&locale);
        let pool = pool_ids(code, spec.pool_size);
        for (phase, &count) in Phase::ALL.iter().zip(counts) {
            let profile = AnnotatorProfile::for_locale(spec.profiles.get(*phase), &locale, registry)?;
            for i in 0..count {
                let id = TaskId::new(format!("{code}-{phase}-{i:05}"));
                let mut rng = task_rng(spec.seed, &id);
                let domain = weighted(spec.domains.iter().map(|(d, w)| (d, *w)), &mut rng).clone();
                let bin = *weighted(spec.length_bins.iter().map(|(b, w)| (b, *w)), &mut rng);
                let n_pii = if rng.gen::<f64>() < spec.negative_fraction {
                    0
                } else {
                    let idx: Vec<usize> = (1..=spec.pii_density.len()).collect();
                    *weighted(idx.iter().zip(spec.pii_density.iter().copied()), &mut rng)
                };
                let types: Vec<PiiTypeId> = (0..n_pii)
                    .map(|_| match spec.name_share {
                        Some(p) if rng.gen::<f64>() < p || others.is_empty() => name.clone(),
                        Some(_) => others.choose(&mut rng).expect("non-empty").clone(),
                        None => registered.choose(&mut rng).expect("non-empty").clone(),
                    })
                    .collect();
                let (prompt, gt) = gen_prompt(templates, &locale, bounds, bin, &types, &mut rng)?;

                corpus
                    .insert_task(Task {
                        id: id.clone(),
                        locale: locale.clone(),
                        phase: *phase,
                        domain,
                        prompt: prompt.clone(),
                    })
                    .map_err(|e| SynthError::SpecInvalid(e.to_string()))?;
                for j in 0..spec.annotators_per_task {
                    let who = &pool[(i * spec.annotators_per_task + j + i / spec.pool_size) % spec.pool_size];
                    let annotations = simulate_annotator(&prompt, &gt, &locale, &profile, registry, &mut rng);
                    corpus
                        .insert_submission(Submission {
                            id: SubmissionId::new(format!("{id}-s{j}")),
                            task_id: id.clone(),
                            annotator: who.clone(),
                            annotations,
                        })
                        .map_err(|e| SynthError::SpecInvalid(e.to_string()))?;
                }
                corpus
                    .insert_ground_truth(GroundTruth {
                        task_id: id,
                        annotations: gt,
                    })
                    .map_err(|e| SynthError::SpecInvalid(e.to_string()))?;
            }
        }
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rca::length_bin;

    fn reg() -> &'static Registry {
        Registry::builtin()
    }

    fn pl() -> Locale {
        Locale::parse("pl-PL").unwrap()
    }

    #[test]
    fn seeds_differ_per_key() {
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
        assert_ne!(derive_seed(1, "a"), derive_seed(2, "a"));
        assert_eq!(derive_seed(7, "x"), derive_seed(7, "x"));
    }

    #[test]
    fn negative_prompt_has_no_annotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (p, gt) = gen_prompt(
            TemplateRegistry::builtin(),
            &pl(),
            &BinBounds::default(),
            LengthBin::S,
            &[],
            &mut rng,
        )
        .unwrap();
        assert!(gt.is_empty());
        assert!(p.split_whitespace().count() <= 29);
    }

    #[test]
    fn prompts_land_in_their_bin_with_valid_spans() {
        let cfg = LengthBinConfig::default();
        let types = [reg().ty("NAME"), reg().ty("ADDRESS"), reg().ty("NATIONAL ID")];
        for (seed, bin) in [(1, LengthBin::S), (2, LengthBin::M), (3, LengthBin::L), (4, LengthBin::XL)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (p, gt) =
                gen_prompt(TemplateRegistry::builtin(), &pl(), cfg.bounds_for(&pl()), bin, &types, &mut rng).unwrap();
            assert_eq!(length_bin(&p, &cfg, &pl()).bin, bin);
            assert_eq!(gt.len(), 3);
            for a in &gt {
                reg().validate_annotation(&p, a, &pl()).unwrap();
            }
        }
    }

    #[test]
    fn too_many_values_for_small_bin() {
        let types = vec![reg().ty("PIN"); 40];
        let err = gen_prompt(
            TemplateRegistry::builtin(),
            &pl(),
            &BinBounds::default(),
            LengthBin::S,
            &types,
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert!(matches!(err, Err(SynthError::BinInfeasible { n_pii: 40, .. })));
    }

    #[test]
    fn published_volumes_midpoints_are_in_range() {
        let spec = CorpusSpec::published_volumes(0);
        spec.validate(reg()).unwrap();
        assert_eq!(spec.locales["pl-PL"][2], 4100);
        let mut bad = spec.clone();
        bad.locales.get_mut("pl-PL").unwrap()[2] = 3000;
        assert!(bad.validate(reg()).is_err());
    }

    #[test]
    fn corpus_is_deterministic_and_valid() {
        let spec = CorpusSpec::small(9, &["pl-PL", "zh-CN"], 15);
        let a = gen_corpus(&spec, reg(), TemplateRegistry::builtin()).unwrap();
        let b = gen_corpus(&spec, reg(), TemplateRegistry::builtin()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 90);
        for task in a.tasks() {
            let subs = a.submissions_for(&task.id);
            assert_eq!(subs.len(), 2);
            assert_ne!(subs[0].annotator, subs[1].annotator);
            for ann in a.ground_truth(&task.id).unwrap().annotations.iter().chain(subs.iter().flat_map(|s| &s.annotations)) {
                reg().validate_annotation(&task.prompt, ann, &task.locale).unwrap();
            }
        }
        let other = gen_corpus(&CorpusSpec { seed: 10, ..spec }, reg(), TemplateRegistry::builtin()).unwrap();
        assert_ne!(a, other);
    }
}
