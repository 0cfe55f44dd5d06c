//! End-to-end three-phase run over a generated corpus.
//!
//! Tasks go through the real store and workflow: creation, assignment,
//! dual annotation, IRA routing and, for arbitrated tasks, a simulated QA
//! review against the generator's reference annotations. Phases are laid
//! out on a synthetic clock so RCA windows line up with phases.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Map;

use piiqa_core::agreement::task_agreement;
use piiqa_core::config::PipelineConfig;
use piiqa_core::corpus::{AnnotatorId, Corpus};
use piiqa_core::metrics::{
    fmt_ratio, metrics_report, phase_trends, report_tsv, row_outcomes, Grain, GroupBy, MetricsReport, TREND_HEADER,
};
use piiqa_core::rca::{confusion_pairs, confusion_tsv, distributions, distributions_tsv, miss_rate, rca_report, rca_tsv, Axis, Window};
use piiqa_core::synth::simulated_review;
use piiqa_core::synth::TemplateRegistry;
use piiqa_core::synth::{derive_seed, gen_corpus, CorpusSpec};
use piiqa_core::workflow::{Phase, Route, RouteReason, SeededSampler, TaskStatus};

use crate::exchange::{wire_annotations, Record, ReviewRecord, SubmissionRecord, TaskRecord};
use crate::store::{RoutedTask, Store};

/// Ticks of the synthetic clock reserved for each phase.
pub const PHASE_SPAN: u64 = 1_000_000;

pub fn phase_window(phase: Phase) -> Window {
    let k = phase_rank(phase);
    Window {
        start: k * PHASE_SPAN,
        end: (k + 1) * PHASE_SPAN,
    }
}

fn phase_rank(phase: Phase) -> u64 {
    Phase::ALL.iter().position(|p| *p == phase).expect("known phase") as u64
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("corpus generation failed: {0}")]
    Synth(#[from] piiqa_core::synth::SynthError),
    #[error("{0}")]
    Store(#[from] crate::store::StoreError),
    #[error("{0}")]
    Record(#[from] crate::store::RecordError),
}

#[derive(Debug)]
pub struct SimulationRun {
    /// Pipeline state: ground truth exists only for reviewed tasks.
    pub store: Store,
    /// The generated corpus with reference annotations for every task.
    pub reference: Corpus,
    pub routed: Vec<RoutedTask>,
    /// Phase error rates the annotators were simulated with.
    pub spec: CorpusSpec,
}

pub fn run(spec: &CorpusSpec, config: PipelineConfig) -> Result<SimulationRun, SimError> {
    let mut store = Store::in_memory(config)?;
    let reference = gen_corpus(spec, store.registry(), TemplateRegistry::builtin())?;
    let tau = store.config().tau;
    let mut sampler = SeededSampler::new(derive_seed(spec.seed, "routing"));
    let mut routed = Vec::new();
    let mut tick: BTreeMap<Phase, u64> = BTreeMap::new();

    for task in reference.tasks() {
        let t = tick.entry(task.phase).or_insert(0);
        let at = phase_rank(task.phase) * PHASE_SPAN + *t;
        *t += 3;

        store.apply(Record::Task(TaskRecord {
            id: task.id.to_string(),
            locale: task.locale.to_string(),
            phase: task.phase.to_string(),
            domain: task.domain.clone(),
            prompt: task.prompt.clone(),
            status: None,
            extra: Map::new(),
        }))?;
        let subs = reference.submissions_for(&task.id);
        let who = subs.iter().map(|s| s.annotator.as_str()).collect::<Vec<_>>().join(",");
        store.advance(&task.id, TaskStatus::Assigned, at, Some(who))?;
        for s in &subs {
            store.apply(Record::Submission(SubmissionRecord {
                id: s.id.to_string(),
                task_id: task.id.to_string(),
                annotator: s.annotator.to_string(),
                annotations: wire_annotations(&s.annotations),
                extra: Map::new(),
            }))?;
        }
        let Some(r) = store.route_task(&task.id, &mut sampler, at + 1)? else {
            continue;
        };
        if r.decision.route == Route::Arbitration {
            let gt = reference.ground_truth(&task.id).map_or(&[][..], |g| &g.annotations);
            let reviewer = AnnotatorId::new(format!("{}-qa", task.locale));
            let review = simulated_review(task, &subs, gt, &reviewer, tau, at + 2).expect("two submissions");
            store.submit_review(ReviewRecord {
                task_id: task.id.to_string(),
                reviewer: review.reviewer.to_string(),
                chosen_submission: review.chosen_submission.to_string(),
                ground_truth: wire_annotations(&review.ground_truth),
                error_categories: review.error_categories.iter().map(|c| c.as_str().to_string()).collect(),
                verdict: review.verdict.as_str().to_string(),
                reviewed_at: review.reviewed_at,
                request_id: None,
                extra: Map::new(),
            })?;
        }
        routed.push(r);
    }
    store.flush()?;
    Ok(SimulationRun {
        store,
        reference,
        routed,
        spec: spec.clone(),
    })
}

impl SimulationRun {
    /// Recall and FPR of the simulated annotators against the reference
    /// annotations, per locale and phase plus per phase overall.
    pub fn reference_metrics(&self) -> Vec<MetricsReport> {
        let rows = row_outcomes(&self.reference, self.store.registry());
        let mode = self.store.config().fpr_mode;
        let mut out = metrics_report(&rows, GroupBy::BOTH, mode);
        out.extend(metrics_report(
            &rows,
            GroupBy {
                locale: false,
                phase: true,
            },
            mode,
        ));
        out
    }

    /// Measured miss rate per (locale, phase) against the reference.
    pub fn miss_rates(&self) -> BTreeMap<(String, Phase), Option<f64>> {
        let mut rows: BTreeMap<(String, Phase), Vec<(&[_], &[_])>> = BTreeMap::new();
        for task in self.reference.tasks() {
            let gt = self.reference.ground_truth(&task.id).map_or(&[][..], |g| &g.annotations);
            for s in self.reference.submissions_for(&task.id) {
                rows.entry((task.locale.to_string(), task.phase))
                    .or_default()
                    .push((gt, &s.annotations[..]));
            }
        }
        rows.into_iter().map(|(k, v)| (k, miss_rate(v))).collect()
    }

    pub fn routing_tsv(&self) -> String {
        #[derive(Default)]
        struct Row {
            tasks: usize,
            below: usize,
            full: usize,
            sampled: usize,
            accepted: usize,
            agreed: usize,
        }
        let mut rows: BTreeMap<(String, Phase), Row> = BTreeMap::new();
        for r in &self.routed {
            let row = rows.entry((r.locale.clone(), r.phase)).or_default();
            row.tasks += 1;
            match r.decision.reason {
                RouteReason::BelowThreshold => row.below += 1,
                RouteReason::FullReview => {
                    row.full += 1;
                    row.agreed += 1;
                }
                RouteReason::Sampled => {
                    row.sampled += 1;
                    row.agreed += 1;
                }
                RouteReason::Agreed => {
                    row.accepted += 1;
                    row.agreed += 1;
                }
            }
        }
        let mut out = String::from("locale\tphase\ttasks\tbelow_threshold\tfull_review\tsampled\taccepted\taudited_fraction\n");
        for ((locale, phase), r) in rows {
            let audited = (r.agreed > 0).then(|| (r.full + r.sampled) as f64 / r.agreed as f64);
            let _ = writeln!(
                out,
                "{locale}\t{phase}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.tasks,
                r.below,
                r.full,
                r.sampled,
                r.accepted,
                fmt_ratio(audited)
            );
        }
        out
    }

    fn ira_tsv(&self) -> String {
        let tau = self.store.config().tau;
        let mut out = String::from("task_id\tlocale\tphase\tira\tstatus\n");
        for task in self.store.corpus().tasks() {
            let subs = self.store.corpus().submissions_for(&task.id);
            let ira = task_agreement(&subs, tau).ok();
            let status = self.store.status(&task.id).unwrap_or(TaskStatus::Created);
            let _ = writeln!(out, "{}\t{}\t{}\t{}\t{status}", task.id, task.locale, task.phase, fmt_ratio(ira));
        }
        out
    }

    fn quality_tsv(&self) -> String {
        let mut out = String::from("annotator\tscore\treviewed\tqualified\n");
        for q in self.store.quality_scores(&Default::default()) {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                q.annotator,
                fmt_ratio(q.score),
                q.reviewed_count,
                q.qualified
            );
        }
        out
    }

    fn phase_report_tsv(&self) -> String {
        let mut out = String::from("phase\tlocale\taccepted_as_is\tcorrected\trejected\n");
        let mut cats = String::from("phase\terror_category\tcount\n");
        for phase in Phase::ALL {
            let report = self.store.phase_report(&crate::store::Filter {
                locale: None,
                phase: Some(phase),
            });
            for (locale, v) in &report.per_locale {
                let _ = writeln!(out, "{phase}\t{locale}\t{}\t{}\t{}", v.accepted_as_is, v.corrected, v.rejected);
            }
            for (c, n) in &report.error_categories {
                let _ = writeln!(cats, "{phase}\t{}\t{n}", c.as_str());
            }
        }
        out.push('\n');
        out.push_str(&cats);
        out
    }

    fn miss_tsv(&self) -> String {
        let mut out = String::from("locale\tphase\tinjected\tmeasured\n");
        for ((locale, phase), measured) in self.miss_rates() {
            let injected = self.spec.profiles.get(phase).miss;
            let _ = writeln!(out, "{locale}\t{phase}\t{injected:.6}\t{}", fmt_ratio(measured));
        }
        out
    }

    /// Every report as (file name, contents), in a fixed order.
    pub fn reports(&self) -> Vec<(&'static str, String)> {
        let cfg = self.store.config();
        let reference = self.reference_metrics();
        let trend = |grain, fpr| {
            let mut s = format!("{TREND_HEADER}\n");
            for t in phase_trends(&reference, grain, fpr) {
                s.push_str(&t.render());
                s.push('\n');
            }
            s
        };
        let mut rca = String::new();
        for phase in Phase::ALL {
            let _ = writeln!(rca, "# {phase}");
            rca.push_str(&rca_tsv(&rca_report(self.store.corpus(), phase_window(phase), cfg.tau, cfg.top_k)));
        }
        let mut dist = String::new();
        for (i, axis) in [Axis::Domain, Axis::LengthBin, Axis::PiiCategory].into_iter().enumerate() {
            let body = distributions_tsv(&distributions(&self.reference, self.store.registry(), axis, &cfg.length_bins));
            dist.push_str(if i == 0 { &body } else { body.split_once('\n').map_or("", |(_, b)| b) });
        }
        vec![
            ("corpus.jsonl", self.store.export_string(&Default::default())),
            ("ira.tsv", self.ira_tsv()),
            ("routing.tsv", self.routing_tsv()),
            ("metrics.tsv", report_tsv(&self.store.metrics(&Default::default(), GroupBy::BOTH))),
            ("reference_metrics.tsv", report_tsv(&reference)),
            ("recall_trend.tsv", trend(Grain::Fine, false)),
            ("fpr_trend.tsv", trend(Grain::Fine, true)),
            ("miss_rates.tsv", self.miss_tsv()),
            ("quality.tsv", self.quality_tsv()),
            ("reviews.tsv", self.phase_report_tsv()),
            ("rca.tsv", rca),
            ("confusion.tsv", confusion_tsv(&confusion_pairs(self.store.corpus(), cfg.tau, cfg.top_k))),
            ("distributions.tsv", dist),
            ("agreement_matrix.tsv", self.store.agreement_matrix(&Default::default()).to_tsv()),
        ]
    }

    pub fn write_reports(&self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for (name, body) in self.reports() {
            let path = dir.join(name);
            fs::write(&path, body)?;
            written.push(path);
        }
        Ok(written)
    }
}
