use std::collections::BTreeSet;

use proptest::prelude::*;

use piiqa_core::agreement::{annotation_agreement, iou, match_spans, task_agreement, DEFAULT_TAU};
use piiqa_core::metrics::{row_correct_coarse, row_correct_fine, type_sequence};
use piiqa_core::synth::{gen_corpus, CorpusSpec, TemplateRegistry};
use piiqa_core::workflow::{Phase, PhaseConfig, Route, SeededSampler, TaskStatus, Workflow};
use piiqa_core::{AnnotatorId, Registry, Span, SpanAnnotation, Submission, SubmissionId, Task, TaskId};

const TYPES: [&str; 4] = ["NAME", "DATE", "PIN", "EMAIL"];

fn span() -> impl Strategy<Value = Span> {
    (0usize..60, 1usize..20).prop_map(|(s, l)| Span::new(s, s + l))
}

fn annotation() -> impl Strategy<Value = SpanAnnotation> {
    (span(), 0..TYPES.len()).prop_map(|(sp, t)| SpanAnnotation::new(sp, Registry::builtin().ty(TYPES[t]), "x"))
}

fn annotations() -> impl Strategy<Value = Vec<SpanAnnotation>> {
    prop::collection::vec(annotation(), 0..6)
}

fn submission(id: &str, anns: Vec<SpanAnnotation>) -> Submission {
    Submission {
        id: SubmissionId::new(id),
        task_id: TaskId::new("t"),
        annotator: AnnotatorId::new(id),
        annotations: anns,
    }
}

/// Matched pairs as annotation contents, independent of input positions.
fn matched(left: &[SpanAnnotation], right: &[SpanAnnotation]) -> BTreeSet<(SpanAnnotation, SpanAnnotation)> {
    match_spans(left, right, DEFAULT_TAU)
        .pairs
        .iter()
        .map(|p| (left[p.left].clone(), right[p.right].clone()))
        .collect()
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in span(), b in span()) {
        let x = iou(a, b);
        prop_assert_eq!(x, iou(b, a));
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!(iou(a, a), 1.0);
    }

    #[test]
    fn matching_ignores_input_order(left in annotations(), right in annotations(), k in 0usize..6) {
        let mut l2 = left.clone();
        l2.reverse();
        let mut r2 = right.clone();
        if !r2.is_empty() {
            let n = r2.len();
            r2.rotate_left(k % n);
        }
        prop_assert_eq!(matched(&left, &right), matched(&l2, &r2));
    }

    #[test]
    fn matching_is_one_to_one_above_tau(left in annotations(), right in annotations()) {
        let m = match_spans(&left, &right, DEFAULT_TAU);
        let ls: BTreeSet<usize> = m.pairs.iter().map(|p| p.left).collect();
        let rs: BTreeSet<usize> = m.pairs.iter().map(|p| p.right).collect();
        prop_assert_eq!(ls.len(), m.pairs.len());
        prop_assert_eq!(rs.len(), m.pairs.len());
        prop_assert_eq!(ls.len() + m.unmatched_left.len(), left.len());
        prop_assert_eq!(rs.len() + m.unmatched_right.len(), right.len());
        prop_assert!(m.pairs.iter().all(|p| p.iou >= DEFAULT_TAU));
    }

    #[test]
    fn agreement_is_symmetric_and_bounded(a in annotations(), b in annotations()) {
        let ab = annotation_agreement(&a, &b, DEFAULT_TAU);
        let ba = annotation_agreement(&b, &a, DEFAULT_TAU);
        prop_assert!((ab.overall - ba.overall).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab.overall));
        let self_score = annotation_agreement(&a, &a, DEFAULT_TAU).overall;
        prop_assert_eq!(self_score, 1.0);
    }

    #[test]
    fn task_agreement_ignores_submission_order(a in annotations(), b in annotations(), c in annotations()) {
        let (sa, sb, sc) = (submission("a", a), submission("b", b), submission("c", c));
        let x = task_agreement(&[&sa, &sb, &sc], DEFAULT_TAU).unwrap();
        let y = task_agreement(&[&sc, &sa, &sb], DEFAULT_TAU).unwrap();
        prop_assert!((x - y).abs() < 1e-12);
    }

    #[test]
    fn fine_correct_implies_coarse_correct(gt in annotations(), sub in annotations()) {
        let (g, s) = (type_sequence(&gt), type_sequence(&sub));
        if row_correct_fine(&g, &s) {
            prop_assert!(row_correct_coarse(&g, &s));
        }
        prop_assert!(row_correct_fine(&g, &g) && row_correct_coarse(&g, &g));
    }

    #[test]
    fn routing_below_threshold_always_arbitrates(ira in 0.0f64..1.0, seed in any::<u64>(), phase in 0usize..3) {
        let phase = Phase::ALL[phase];
        let task = Task {
            id: TaskId::new("t"),
            locale: piiqa_core::Locale::parse("pl-PL").unwrap(),
            phase,
            domain: "d".into(),
            prompt: "x".into(),
        };
        let mut wf = Workflow::new();
        wf.advance(&task.id, TaskStatus::Assigned, 0, None).unwrap();
        wf.advance(&task.id, TaskStatus::DualAnnotated, 1, None).unwrap();
        let cfg = PhaseConfig::new(0.12, 0.85);
        let d = wf.route(&task, ira, &cfg, &mut SeededSampler::new(seed), 2).unwrap();
        if ira < 0.85 || phase == Phase::Pilot {
            prop_assert_eq!(d.route, Route::Arbitration);
        }
        let expected = match d.route {
            Route::Arbitration => TaskStatus::Arbitration,
            Route::Accepted => TaskStatus::Accepted,
        };
        prop_assert_eq!(wf.state(&task.id).unwrap().status, expected);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn generated_corpora_are_valid_and_reproducible(seed in any::<u64>()) {
        let spec = CorpusSpec::small(seed, &["zh-CN", "hi-IN", "nl-BE"], 3);
        let reg = Registry::builtin();
        let a = gen_corpus(&spec, reg, TemplateRegistry::builtin()).unwrap();
        prop_assert_eq!(&a, &gen_corpus(&spec, reg, TemplateRegistry::builtin()).unwrap());
        prop_assert_eq!(a.len(), 27);
        for task in a.tasks() {
            let gt = a.ground_truth(&task.id).expect("every generated task has a reference");
            let subs = a.submissions_for(&task.id);
            prop_assert_eq!(subs.len(), spec.annotators_per_task);
            for ann in gt.annotations.iter().chain(subs.iter().flat_map(|s| s.annotations.iter())) {
                prop_assert!(reg.validate_annotation(&task.prompt, ann, &task.locale).is_ok(), "{:?}", ann);
            }
        }
    }
}
