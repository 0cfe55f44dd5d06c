use std::collections::BTreeMap;

use piiqa_core::config::PipelineConfig;
use piiqa_core::synth::CorpusSpec;
use piiqa_core::workflow::{Phase, TaskStatus};
use piiqa_core::TaskId;
use piiqa_service::cli::gen_exchange;
use piiqa_service::exchange::Record;
use piiqa_service::store::{Filter, Store};
use proptest::prelude::*;

const PROMPT: &str = "Call Anna at 555 1234";

fn task_line(id: &str, phase: &str) -> String {
    format!(r#"{{"kind":"task","id":"{id}","locale":"pl-PL","phase":"{phase}","domain":"finance","prompt":"{PROMPT}"}}"#)
}

fn sub_line(id: &str, task: &str, who: &str, anns: &str) -> String {
    format!(r#"{{"kind":"submission","id":"{id}","task_id":"{task}","annotator":"{who}","annotations":[{anns}]}}"#)
}

const NAME: &str = r#"{"start":5,"end":9,"type":"NAME","text":"Anna"}"#;

fn store() -> Store {
    Store::in_memory(PipelineConfig::default()).unwrap()
}

fn statuses(s: &Store) -> BTreeMap<TaskId, TaskStatus> {
    s.corpus()
        .tasks()
        .map(|t| (t.id.clone(), s.status(&t.id).unwrap()))
        .collect()
}

fn assert_same_content(a: &Store, b: &Store) {
    assert_eq!(a.corpus(), b.corpus());
    assert_eq!(statuses(a), statuses(b));
    assert_eq!(a.export_string(&Filter::default()), b.export_string(&Filter::default()));
}

#[test]
fn valid_file_loads_every_record() {
    let mut lines = Vec::new();
    for i in 0..25 {
        let t = format!("t{i:02}");
        lines.push(task_line(&t, "pilot"));
        lines.push(sub_line(&format!("{t}-a"), &t, "ann1", NAME));
        lines.push(sub_line(&format!("{t}-b"), &t, "ann2", ""));
        lines.push(format!(r#"{{"kind":"ground_truth","task_id":"{t}","annotations":[{NAME}]}}"#));
    }
    let mut s = store();
    let report = s.import_str(&lines.join("\n"));
    assert_eq!(report.loaded, 100);
    assert!(report.rejected.is_empty());
    assert_eq!(report.by_kind["task"], 25);
}

#[test]
fn rejections_carry_line_numbers_and_codes() {
    let text = [
        task_line("t1", "pilot"),
        sub_line("s1", "t1", "a", r#"{"start":5,"end":99,"type":"NAME","text":"Anna"}"#),
        task_line("t1", "training"),
        sub_line("s2", "t1", "a", r#"{"start":5,"end":9,"type":"NOPE","text":"Anna"}"#),
        sub_line("s3", "missing", "a", ""),
        sub_line("s4", "t1", "a", r#"{"start":5,"end":9,"type":"NAME","text":"Anne"}"#),
        "not json".to_string(),
        r#"{"kind":"task","id":"t9"}"#.to_string(),
        sub_line("s5", "t1", "a", NAME),
    ]
    .join("\n");
    let mut s = store();
    let report = s.import_str(&text);
    assert_eq!(report.loaded, 2);
    let got: Vec<(usize, &str)> = report.rejected.iter().map(|r| (r.line, r.code)).collect();
    assert_eq!(
        got,
        vec![
            (2, "span_out_of_bounds"),
            (3, "conflict"),
            (4, "unknown_label"),
            (5, "unknown_task"),
            (6, "text_mismatch"),
            (7, "schema_violation"),
            (8, "schema_violation"),
        ]
    );
}

#[test]
fn labels_are_normalised_and_unknown_fields_kept() {
    let text = [
        r#"{"kind":"task","id":"t1","locale":"pl-PL","phase":"pilot","domain":"d","prompt":"PIN 1234","batch":7,"meta":{"a":[1,2]}}"#,
        r#"{"kind":"submission","id":"s1","task_id":"t1","annotator":"a","annotations":[{"start":4,"end":8,"type":"pin","text":"1234"}],"tool":"x"}"#,
    ]
    .join("\n");
    let mut s = store();
    assert!(s.import_str(&text).rejected.is_empty());
    let out = s.export_string(&Filter::default());
    assert!(out.contains(r#""batch":7"#), "{out}");
    assert!(out.contains(r#""meta":{"a":[1,2]}"#));
    assert!(out.contains(r#""tool":"x""#));
    assert!(out.contains(r#""type":"PIN""#));
}

#[test]
fn empty_store_exports_only_the_header() {
    let out = store().export_string(&Filter::default());
    assert_eq!(out, "{\"kind\":\"header\",\"format\":\"piiqa-exchange\",\"version\":1}\n");
}

#[test]
fn phase_filter_keeps_only_that_phase() {
    let spec = CorpusSpec::small(3, &["pl-PL", "nl-BE"], 4);
    let text = gen_exchange(&spec, PipelineConfig::default()).unwrap();
    let mut s = store();
    assert!(s.import_str(&text).rejected.is_empty());
    let pilot = s.export_string(&Filter {
        locale: None,
        phase: Some(Phase::Pilot),
    });
    let records: Vec<Record> = pilot.lines().map(|l| Record::parse(l).unwrap()).collect();
    let tasks: Vec<_> = records
        .iter()
        .filter_map(|r| match r {
            Record::Task(t) => Some(t),
            _ => None,
        })
        .collect();
    assert_eq!(tasks.len(), 8);
    assert!(tasks.iter().all(|t| t.phase == "pilot"));
    for r in &records {
        let task_id = match r {
            Record::Submission(s) => &s.task_id,
            Record::GroundTruth(g) => &g.task_id,
            _ => continue,
        };
        assert!(task_id.contains("-pilot-"));
    }
}

#[test]
fn export_orders_by_task_then_kind() {
    let text = [
        task_line("t2", "pilot"),
        task_line("t1", "pilot"),
        sub_line("z", "t1", "a", NAME),
        sub_line("b", "t1", "b", ""),
        r#"{"kind":"ground_truth","task_id":"t1","annotations":[]}"#.to_string(),
    ]
    .join("\n");
    let mut s = store();
    s.import_str(&text);
    let kinds: Vec<String> = s
        .export_string(&Filter::default())
        .lines()
        .map(|l| {
            let r = Record::parse(l).unwrap();
            match r {
                Record::Task(t) => format!("task {}", t.id),
                Record::Submission(x) => format!("sub {}", x.id),
                other => other.kind().to_string(),
            }
        })
        .collect();
    assert_eq!(kinds, ["header", "task t1", "sub b", "sub z", "ground_truth", "task t2"]);
}

#[test]
fn generated_corpus_round_trips() {
    let spec = CorpusSpec::small(11, &["zh-CN", "hi-IN", "ar-UAE"], 6);
    let text = gen_exchange(&spec, PipelineConfig::default()).unwrap();
    let mut a = store();
    assert!(a.import_str(&text).rejected.is_empty());
    let mut b = store();
    let report = b.import_str(&a.export_string(&Filter::default()));
    assert!(report.rejected.is_empty());
    assert_same_content(&a, &b);
    assert_eq!(a.export_string(&Filter::default()), text);
}

#[test]
fn reopened_store_has_the_same_content() {
    let dir = tempfile::tempdir().unwrap();
    let spec = CorpusSpec::small(5, &["pt-BR"], 5);
    let text = gen_exchange(&spec, PipelineConfig::default()).unwrap();
    let file = dir.path().join("in.jsonl");
    std::fs::write(&file, &text).unwrap();
    let store_dir = dir.path().join("store");
    let before = {
        let mut s = Store::open(&store_dir, PipelineConfig::default()).unwrap();
        assert!(s.import_file(&file).unwrap().rejected.is_empty());
        let mut sampler = piiqa_core::workflow::SeededSampler::new(1);
        let routed = s.route_pending(&mut sampler, &Filter::default(), 10).unwrap();
        assert_eq!(routed.len(), 15);
        s.flush().unwrap();
        s.export_string(&Filter::default())
    };
    let s = Store::open(&store_dir, PipelineConfig::default()).unwrap();
    assert_eq!(s.export_string(&Filter::default()), before);
    assert!(s
        .corpus()
        .tasks()
        .all(|t| matches!(s.status(&t.id), Some(TaskStatus::Accepted | TaskStatus::Arbitration))));
}

#[test]
fn interrupted_final_line_is_ignored_on_open() {
    let dir = tempfile::tempdir().unwrap();
    {
        let mut s = Store::open(dir.path(), PipelineConfig::default()).unwrap();
        s.import_str(&task_line("t1", "pilot"));
        s.flush().unwrap();
    }
    let log = dir.path().join("records.jsonl");
    let mut text = std::fs::read_to_string(&log).unwrap();
    text.push_str(r#"{"kind":"task","id":"t2","loc"#);
    std::fs::write(&log, text).unwrap();
    let s = Store::open(dir.path(), PipelineConfig::default()).unwrap();
    assert_eq!(s.corpus().len(), 1);
}

#[test]
fn reviews_need_arbitration_on_live_import() {
    let mut s = store();
    let review = r#"{"kind":"review","task_id":"t1","reviewer":"qa","chosen_submission":"s1","ground_truth":[],"error_categories":[],"verdict":"accepted_as_is","reviewed_at":5}"#;
    let text = [task_line("t1", "pilot"), sub_line("s1", "t1", "a", ""), sub_line("s2", "t1", "b", ""), review.to_string()].join("\n");
    let report = s.import_str(&text);
    assert_eq!(report.rejected.len(), 1);
    assert_eq!(report.rejected[0].code, "invalid_state");

    let mut s = store();
    let text = text.replacen(
        r#""domain":"finance""#,
        r#""domain":"finance","status":"arbitration""#,
        1,
    );
    assert!(s.import_str(&text).rejected.is_empty());
    assert_eq!(s.status(&TaskId::new("t1")), Some(TaskStatus::Reviewed));
    assert!(s.corpus().ground_truth(&TaskId::new("t1")).is_some());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn round_trip_any_seed(seed in any::<u64>(), n in 1usize..4) {
        let spec = CorpusSpec::small(seed, &["sv-SE", "vi-VN"], n);
        let text = gen_exchange(&spec, PipelineConfig::default()).unwrap();
        let mut a = store();
        prop_assert!(a.import_str(&text).rejected.is_empty());
        let mut b = store();
        prop_assert!(b.import_str(&a.export_string(&Filter::default())).rejected.is_empty());
        prop_assert_eq!(a.corpus(), b.corpus());
        prop_assert_eq!(statuses(&a), statuses(&b));
    }
}
