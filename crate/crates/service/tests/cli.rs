use std::path::Path;
use std::process::{Command, Output};

fn piiqa(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_piiqa"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn gen_is_byte_identical_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    for out in ["a.jsonl", "b.jsonl"] {
        let o = piiqa(p, &["gen", "--seed", "7", "--per-phase", "3", "--out", out]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = std::fs::read(p.join("a.jsonl")).unwrap();
    assert_eq!(a, std::fs::read(p.join("b.jsonl")).unwrap());
    piiqa(p, &["gen", "--seed", "8", "--per-phase", "3", "--out", "c.jsonl"]);
    assert_ne!(a, std::fs::read(p.join("c.jsonl")).unwrap());
}

#[test]
fn pipeline_commands() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = piiqa(p, &["gen", "--seed", "2", "--locales", "pl-PL,zh-CN", "--per-phase", "4", "--out", "in.jsonl"]);
    assert!(o.status.success());
    let o = piiqa(p, &["ingest", "in.jsonl"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("rejected\t0"));

    let o = piiqa(p, &["route", "--seed", "1"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 1 + 24);

    let o = piiqa(p, &["metrics", "--phase", "production", "--grain", "fine"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let mut lines = out.lines();
    let header: Vec<&str> = lines.next().unwrap().split('\t').collect();
    assert!(header.contains(&"recall") && header.contains(&"fpr"));
    for l in lines {
        let cols: Vec<&str> = l.split('\t').collect();
        assert_eq!(cols[1], "production");
        assert_eq!(cols[2], "fine");
    }

    for args in [
        &["agree"][..],
        &["agree", "--matrix"],
        &["agree", "--task", "pl-PL-pilot-00000"],
        &["rca"],
        &["distributions"],
        &["distributions", "--axis", "length_bin"],
        &["export", "--phase", "pilot", "--out", "pilot.jsonl", "--transitions", "t.jsonl"],
    ] {
        let o = piiqa(p, args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let pilot = std::fs::read_to_string(p.join("pilot.jsonl")).unwrap();
    assert!(!pilot.contains("\"phase\":\"training\""));
    assert!(std::fs::read_to_string(p.join("t.jsonl")).unwrap().contains("\"to\":\"arbitration\""));
}

#[test]
fn agree_on_single_submission_task_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(
        p.join("one.jsonl"),
        concat!(
            r#"{"kind":"task","id":"t1","locale":"fi-FI","phase":"pilot","domain":"d","prompt":"hei"}"#,
            "\n",
            r#"{"kind":"submission","id":"s1","task_id":"t1","annotator":"a","annotations":[]}"#,
            "\n"
        ),
    )
    .unwrap();
    assert!(piiqa(p, &["ingest", "one.jsonl"]).status.success());
    let o = piiqa(p, &["agree", "--task", "t1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    // missing input file is an I/O failure
    assert_eq!(piiqa(p, &["ingest", "nope.jsonl"]).status.code(), Some(2));
    // rejected records are a validation failure, valid ones are still stored
    std::fs::write(
        p.join("bad.jsonl"),
        concat!(
            r#"{"kind":"task","id":"t1","locale":"fi-FI","phase":"pilot","domain":"d","prompt":"hei"}"#,
            "\n",
            r#"{"kind":"task","id":"t1","locale":"fi-FI","phase":"pilot","domain":"d","prompt":"hei"}"#,
            "\n"
        ),
    )
    .unwrap();
    let o = piiqa(p, &["ingest", "bad.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("line 2\tconflict"));
    assert!(stdout(&piiqa(p, &["export"])).contains("\"id\":\"t1\""));

    assert_eq!(piiqa(p, &["metrics", "--grain", "medium"]).status.code(), Some(1));
    assert_eq!(piiqa(p, &["metrics", "--phase", "beta"]).status.code(), Some(1));
    assert_eq!(piiqa(p, &["frobnicate"]).status.code(), Some(1));
    std::fs::write(p.join("bad.toml"), "[pipeline]\ntau = 3.0\n").unwrap();
    assert_eq!(piiqa(p, &["--config", "bad.toml", "metrics"]).status.code(), Some(1));
    assert_eq!(piiqa(p, &["--config", "missing.toml", "metrics"]).status.code(), Some(2));
    assert_eq!(piiqa(p, &["export", "--out", "no/such/dir/x.jsonl"]).status.code(), Some(2));
}

#[test]
fn config_file_sets_pipeline_and_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(
        p.join("c.toml"),
        r#"
[pipeline]
tau = 0.6
top_k = 3

[pipeline.phases.production]
qa_sampling = 0.10
ira_threshold = 0.9

[corpus]
seed = 4
locales = { "nl-NL" = [2, 2, 2] }
"#,
    )
    .unwrap();
    let o = piiqa(p, &["--config", "c.toml", "gen"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).matches("\"kind\":\"task\"").count(), 6);
}

#[test]
fn simulate_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    for out in ["a", "b"] {
        let o = piiqa(p, &["simulate", "--seed", "5", "--locales", "sv-SE,hi-IN", "--per-phase", "15", "--out-dir", out]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let mut names: Vec<_> = std::fs::read_dir(p.join("a")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 14);
    for name in names {
        let a = std::fs::read(p.join("a").join(&name)).unwrap();
        assert_eq!(a, std::fs::read(p.join("b").join(&name)).unwrap(), "{name:?}");
    }
}
