use std::sync::{Arc, RwLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use piiqa_core::config::PipelineConfig;
use piiqa_core::workflow::{FixedSampler, TaskStatus};
use piiqa_core::TaskId;
use piiqa_service::api::{router, Shared};
use piiqa_service::store::{Filter, Store};

const PROMPT: &str = "Kontakt: Anna Nowak, tel 600 100 200";

fn seeded() -> Shared {
    let mut store = Store::in_memory(PipelineConfig::default()).unwrap();
    let mut lines = Vec::new();
    for (t, phase) in [("t1", "pilot"), ("t2", "pilot"), ("t3", "production"), ("t4", "pilot")] {
        lines.push(format!(
            r#"{{"kind":"task","id":"{t}","locale":"pl-PL","phase":"{phase}","domain":"finance","prompt":"{PROMPT}","status":"assigned"}}"#
        ));
        if t == "t4" {
            // a single submission: must never show up in the queue
            lines.push(format!(r#"{{"kind":"submission","id":"{t}-a","task_id":"{t}","annotator":"ann1","annotations":[]}}"#));
            continue;
        }
        lines.push(format!(
            r#"{{"kind":"submission","id":"{t}-a","task_id":"{t}","annotator":"ann1","annotations":[{{"start":9,"end":19,"type":"NAME","text":"Anna Nowak"}}]}}"#
        ));
        lines.push(format!(
            r#"{{"kind":"submission","id":"{t}-b","task_id":"{t}","annotator":"ann2","annotations":[{{"start":9,"end":13,"type":"NAME","text":"Anna"}}]}}"#
        ));
    }
    let report = store.import_str(&lines.join("\n"));
    assert!(report.rejected.is_empty(), "{:?}", report.rejected);
    let mut sampler = FixedSampler(vec![0.5].into());
    store.route_pending(&mut sampler, &Filter::default(), 100).unwrap();
    Arc::new(RwLock::new(store))
}

async fn call(state: &Shared, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = router(state.clone()).oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

fn review_body(request_id: &str) -> Value {
    json!({
        "reviewer": "qa1",
        "chosen_submission": "t1-a",
        "ground_truth": [
            {"start": 9, "end": 19, "type": "NAME", "text": "Anna Nowak"},
            {"start": 25, "end": 36, "type": "PHONE", "text": "600 100 200"}
        ],
        "error_categories": ["missing_labels"],
        "verdict": "corrected",
        "request_id": request_id,
        "reviewed_at": 500
    })
}

#[tokio::test]
async fn queue_lists_arbitration_tasks_oldest_first() {
    let state = seeded();
    let (status, body) = call(&state, "GET", "/v1/queue", None).await;
    assert_eq!(status, StatusCode::OK);
    let ids: Vec<&str> = body["items"].as_array().unwrap().iter().map(|i| i["task_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["t1", "t2", "t3"]);
    assert_eq!(body["total"], 3);
    assert!(body["items"].as_array().unwrap().iter().all(|i| i["submissions"].as_u64().unwrap() >= 2));

    let (_, page) = call(&state, "GET", "/v1/queue?per_page=2&page=2", None).await;
    assert_eq!(page["items"].as_array().unwrap().len(), 1);
    let (_, prod) = call(&state, "GET", "/v1/queue?phase=production", None).await;
    assert_eq!(prod["total"], 1);
    let (status, err) = call(&state, "GET", "/v1/queue?phase=beta", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(err["error"]["code"].is_string());
}

#[tokio::test]
async fn task_view_has_submissions_and_agreement() {
    let state = seeded();
    let (status, body) = call(&state, "GET", "/v1/tasks/t1", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["task"]["status"], "arbitration");
    assert_eq!(body["submissions"].as_array().unwrap().len(), 2);
    let pair = &body["agreement"]["pairs"][0];
    assert_eq!(pair["left"], "t1-a");
    assert!((pair["overall"].as_f64().unwrap() - body["agreement"]["ira"].as_f64().unwrap()).abs() < 1e-12);

    let (status, err) = call(&state, "GET", "/v1/tasks/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["error"]["code"], "unknown_task");
}

#[tokio::test]
async fn review_moves_task_to_reviewed_once() {
    let state = seeded();
    let (status, body) = call(&state, "POST", "/v1/tasks/t1/reviews", Some(review_body("r-1"))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["status"], "reviewed");
    assert_eq!(body["replayed"], false);
    let history_len = |s: &Shared| s.read().unwrap().workflow().state(&TaskId::new("t1")).unwrap().history.len();
    let before = history_len(&state);

    let (status, body) = call(&state, "POST", "/v1/tasks/t1/reviews", Some(review_body("r-1"))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["replayed"], true);
    assert_eq!(history_len(&state), before);

    let gt = state.read().unwrap().corpus().ground_truth(&TaskId::new("t1")).unwrap().annotations.len();
    assert_eq!(gt, 2);

    // a new request id on a reviewed task is a conflict
    let (status, body) = call(&state, "POST", "/v1/tasks/t1/reviews", Some(review_body("r-2"))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["code"], "conflict");

    // reusing a request id for another task is a conflict too
    let mut other = review_body("r-1");
    other["chosen_submission"] = json!("t2-a");
    let (status, _) = call(&state, "POST", "/v1/tasks/t2/reviews", Some(other)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (_, queue) = call(&state, "GET", "/v1/queue", None).await;
    assert_eq!(queue["total"], 2);
}

#[tokio::test]
async fn invalid_reviews_are_rejected_without_state_change() {
    let state = seeded();
    let cases = [
        (json!({"chosen_submission": "t3-a"}), "unknown_submission"),
        (json!({"verdict": "maybe"}), "schema_violation"),
        (json!({"error_categories": []}), "inconsistent_review"),
        (
            json!({"ground_truth": [{"start": 9, "end": 19, "type": "NAME", "text": "Anna"}]}),
            "text_mismatch",
        ),
        (
            json!({"ground_truth": [{"start": 9, "end": 19, "type": "WHATEVER", "text": "Anna Nowak"}]}),
            "unknown_label",
        ),
    ];
    for (patch, code) in cases {
        let mut body = review_body("x");
        for (k, v) in patch.as_object().unwrap() {
            body[k] = v.clone();
        }
        let (status, resp) = call(&state, "POST", "/v1/tasks/t1/reviews", Some(body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{code}: {resp}");
        assert_eq!(resp["error"]["code"], code);
    }
    let (status, resp) = call(&state, "POST", "/v1/tasks/t1/reviews", Some(json!({"reviewer": 3}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(resp["error"]["code"], "schema_violation");
    assert_eq!(
        state.read().unwrap().status(&TaskId::new("t1")),
        Some(TaskStatus::Arbitration)
    );
    assert!(state.read().unwrap().corpus().review(&TaskId::new("t1")).is_none());
}

#[tokio::test]
async fn dashboards_on_empty_store_are_empty() {
    let state: Shared = Arc::new(RwLock::new(Store::in_memory(PipelineConfig::default()).unwrap()));
    for path in [
        "/v1/dashboard/quality-scores",
        "/v1/dashboard/error-categories",
        "/v1/dashboard/metrics",
        "/v1/dashboard/agreement-matrix",
        "/v1/queue",
    ] {
        let (status, body) = call(&state, "GET", path, None).await;
        assert_eq!(status, StatusCode::OK, "{path}");
        assert!(body.get("error").is_none());
    }
    let (_, q) = call(&state, "GET", "/v1/dashboard/quality-scores", None).await;
    assert_eq!(q["scores"], json!([]));
    let (_, m) = call(&state, "GET", "/v1/dashboard/metrics", None).await;
    assert_eq!(m["reports"], json!([]));
    let (_, e) = call(&state, "GET", "/v1/dashboard/error-categories", None).await;
    assert_eq!(e["reviewed"], 0);
}

#[tokio::test]
async fn dashboards_reflect_reviews() {
    let state = seeded();
    call(&state, "POST", "/v1/tasks/t1/reviews", Some(review_body("r-1"))).await;
    let (_, q) = call(&state, "GET", "/v1/dashboard/quality-scores", None).await;
    let scores = q["scores"].as_array().unwrap();
    assert_eq!(scores.len(), 2);
    assert!(scores.iter().all(|s| s["reviewed_count"] == 1));
    let (_, e) = call(&state, "GET", "/v1/dashboard/error-categories", None).await;
    assert_eq!(e["error_categories"]["missing_labels"], 1);
    let (_, m) = call(&state, "GET", "/v1/dashboard/metrics?grain=fine&group_by=none", None).await;
    let reports = m["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0]["counts"]["fn"], 2);
    let (_, a) = call(&state, "GET", "/v1/dashboard/agreement-matrix", None).await;
    assert_eq!(a["annotators"], json!(["ann1", "ann2"]));
    let (status, _) = call(&state, "GET", "/v1/nothing", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn reviews_survive_a_restart_and_stay_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let seeded = seeded();
    let text = seeded.read().unwrap().export_string(&Filter::default());
    {
        let mut store = Store::open(dir.path(), PipelineConfig::default()).unwrap();
        assert!(store.import_str(&text).rejected.is_empty());
        store.flush().unwrap();
        let state: Shared = Arc::new(RwLock::new(store));
        let (status, _) = call(&state, "POST", "/v1/tasks/t1/reviews", Some(review_body("r-1"))).await;
        assert_eq!(status, StatusCode::OK);
    }
    let state: Shared = Arc::new(RwLock::new(Store::open(dir.path(), PipelineConfig::default()).unwrap()));
    let (_, body) = call(&state, "GET", "/v1/tasks/t1", None).await;
    assert_eq!(body["task"]["status"], "reviewed");
    assert_eq!(body["ground_truth"].as_array().unwrap().len(), 2);
    let (status, body) = call(&state, "POST", "/v1/tasks/t1/reviews", Some(review_body("r-1"))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["replayed"], true);
}
