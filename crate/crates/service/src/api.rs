//! HTTP API under `/v1`.
//!
//! Every error response has the body `{"error": {"code": ..., "message": ...}}`.

use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use piiqa_core::agreement::{pair_agreement, task_agreement};
use piiqa_core::metrics::{Grain, GroupBy};
use piiqa_core::workflow::Phase;
use piiqa_core::TaskId;

use crate::exchange::{wire_annotations, ReviewRecord, WireAnnotation};
use crate::store::{Filter, RecordError, Store, SubmitOutcome};

pub type Shared = Arc<RwLock<Store>>;

pub const MAX_PER_PAGE: usize = 200;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: String,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: impl Into<String>, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code: code.into(),
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "validation_failed", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<RecordError> for ApiError {
    fn from(e: RecordError) -> Self {
        let status = match &e {
            RecordError::UnknownTask(_) => StatusCode::NOT_FOUND,
            RecordError::Conflict(_) | RecordError::InvalidState(_) => StatusCode::CONFLICT,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"code": self.code, "message": self.message}});
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ListParams {
    pub locale: Option<String>,
    pub phase: Option<String>,
    pub page: Option<usize>,
    pub per_page: Option<usize>,
    pub grain: Option<String>,
    pub group_by: Option<String>,
}

impl ListParams {
    fn filter(&self, store: &Store) -> Result<Filter, ApiError> {
        let locale = match &self.locale {
            Some(l) => Some(
                store
                    .registry()
                    .resolve_locale(l)
                    .map_err(|e| ApiError::bad_request(e.to_string()))?,
            ),
            None => None,
        };
        let phase = match &self.phase {
            Some(p) => Some(p.parse::<Phase>().map_err(ApiError::bad_request)?),
            None => None,
        };
        Ok(Filter { locale, phase })
    }
}

fn read(state: &Shared) -> Result<std::sync::RwLockReadGuard<'_, Store>, ApiError> {
    state.read().map_err(|_| ApiError::internal("store lock poisoned"))
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/queue", get(queue))
        .route("/v1/tasks/{id}", get(task))
        .route("/v1/tasks/{id}/reviews", post(submit_review))
        .route("/v1/dashboard/quality-scores", get(quality_scores))
        .route("/v1/dashboard/error-categories", get(error_categories))
        .route("/v1/dashboard/metrics", get(metrics))
        .route("/v1/dashboard/agreement-matrix", get(agreement_matrix))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(state)
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

#[derive(Debug, Serialize)]
pub struct QueueEntry {
    pub task_id: TaskId,
    pub locale: String,
    pub phase: Phase,
    pub domain: String,
    pub entered_at: u64,
    pub submissions: usize,
    pub ira: f64,
}

#[derive(Debug, Serialize)]
pub struct Page<T> {
    pub items: Vec<T>,
    pub page: usize,
    pub per_page: usize,
    pub total: usize,
}

async fn queue(State(state): State<Shared>, Query(params): Query<ListParams>) -> ApiResult<Page<QueueEntry>> {
    let store = read(&state)?;
    let filter = params.filter(&store)?;
    let page = params.page.unwrap_or(1).max(1);
    let per_page = params.per_page.unwrap_or(50).clamp(1, MAX_PER_PAGE);
    let all = store.queue(&filter);
    let total = all.len();
    let tau = store.config().tau;
    let items = all
        .into_iter()
        .skip((page - 1) * per_page)
        .take(per_page)
        .map(|q| {
            let subs = store.corpus().submissions_for(&q.task_id);
            QueueEntry {
                ira: task_agreement(&subs, tau).unwrap_or(0.0),
                task_id: q.task_id,
                locale: q.locale,
                phase: q.phase,
                domain: q.domain,
                entered_at: q.entered_at,
                submissions: q.submissions,
            }
        })
        .collect();
    Ok(Json(Page {
        items,
        page,
        per_page,
        total,
    }))
}

async fn task(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Value> {
    let store = read(&state)?;
    let id = TaskId::new(id);
    let task = store
        .corpus()
        .task(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_task", format!("unknown task {id}")))?;
    let tau = store.config().tau;
    let subs = store.corpus().submissions_for(&id);
    let mut pairs = Vec::new();
    for (i, a) in subs.iter().enumerate() {
        for b in &subs[i + 1..] {
            let br = pair_agreement(a, b, tau).expect("same task");
            pairs.push(json!({
                "left": a.id, "right": b.id,
                "span_score": br.span_score, "type_score": br.type_score,
                "text_score": br.text_score, "overall": br.overall,
            }));
        }
    }
    let state = store.workflow().state(&id);
    Ok(Json(json!({
        "task": {
            "id": task.id, "locale": task.locale.to_string(), "phase": task.phase,
            "domain": task.domain, "prompt": task.prompt,
            "status": state.map(|s| s.status.as_str()).unwrap_or("created"),
        },
        "submissions": subs.iter().map(|s| json!({
            "id": s.id, "annotator": s.annotator, "annotations": wire_annotations(&s.annotations),
        })).collect::<Vec<_>>(),
        "agreement": {"ira": task_agreement(&subs, tau).ok(), "pairs": pairs},
        "ground_truth": store.corpus().ground_truth(&id).map(|g| wire_annotations(&g.annotations)),
        "decision": store.workflow().decision(&id),
        "history": state.map(|s| s.history.clone()).unwrap_or_default(),
    })))
}

/// Body of `POST /v1/tasks/{id}/reviews`.
#[derive(Debug, Deserialize)]
pub struct ReviewRequest {
    pub reviewer: String,
    pub chosen_submission: String,
    pub ground_truth: Vec<WireAnnotation>,
    #[serde(default)]
    pub error_categories: Vec<String>,
    pub verdict: String,
    #[serde(default)]
    pub request_id: Option<String>,
    #[serde(default)]
    pub reviewed_at: Option<u64>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

async fn submit_review(
    State(state): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<ReviewRequest>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Value> {
    let Json(req) = body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "schema_violation", e.body_text()))?;
    let reviewed_at = req.reviewed_at.unwrap_or_else(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs())
    });
    let record = ReviewRecord {
        task_id: id.clone(),
        reviewer: req.reviewer,
        chosen_submission: req.chosen_submission,
        ground_truth: req.ground_truth,
        error_categories: req.error_categories,
        verdict: req.verdict,
        reviewed_at,
        request_id: req.request_id,
        extra: req.extra,
    };
    let mut store = state.write().map_err(|_| ApiError::internal("store lock poisoned"))?;
    let outcome = store.submit_review(record)?;
    store.flush().map_err(|e| ApiError::internal(e.to_string()))?;
    let status = store.status(&TaskId::new(&id)).map(|s| s.as_str());
    Ok(Json(json!({
        "task_id": id,
        "status": status,
        "replayed": outcome == SubmitOutcome::Replayed,
    })))
}

async fn quality_scores(State(state): State<Shared>, Query(params): Query<ListParams>) -> ApiResult<Value> {
    let store = read(&state)?;
    let filter = params.filter(&store)?;
    Ok(Json(json!({
        "threshold": store.config().quality.threshold,
        "scores": store.quality_scores(&filter),
    })))
}

async fn error_categories(State(state): State<Shared>, Query(params): Query<ListParams>) -> ApiResult<Value> {
    let store = read(&state)?;
    let filter = params.filter(&store)?;
    let report = store.phase_report(&filter);
    Ok(Json(json!({
        "reviewed": report.reviewed(),
        "error_categories": report.error_categories,
        "verdicts": report.per_locale,
    })))
}

fn parse_group_by(s: Option<&str>) -> Result<GroupBy, ApiError> {
    let mut g = GroupBy::NONE;
    for part in s.unwrap_or("locale,phase").split(',').filter(|p| !p.is_empty()) {
        match part {
            "locale" => g.locale = true,
            "phase" => g.phase = true,
            "none" => {}
            other => return Err(ApiError::bad_request(format!("cannot group by {other:?}"))),
        }
    }
    Ok(g)
}

async fn metrics(State(state): State<Shared>, Query(params): Query<ListParams>) -> ApiResult<Value> {
    let store = read(&state)?;
    let filter = params.filter(&store)?;
    let grain = match &params.grain {
        Some(g) => Some(g.parse::<Grain>().map_err(ApiError::bad_request)?),
        None => None,
    };
    let group_by = parse_group_by(params.group_by.as_deref())?;
    let reports: Vec<_> = store
        .metrics(&filter, group_by)
        .into_iter()
        .filter(|r| grain.is_none_or(|g| r.grain == g))
        .collect();
    Ok(Json(json!({ "fpr_mode": store.config().fpr_mode, "reports": reports })))
}

async fn agreement_matrix(State(state): State<Shared>, Query(params): Query<ListParams>) -> ApiResult<Value> {
    let store = read(&state)?;
    let filter = params.filter(&store)?;
    let m = store.agreement_matrix(&filter);
    let annotators: Vec<_> = m.annotators().cloned().collect();
    let mut cells = Vec::new();
    for (i, a) in annotators.iter().enumerate() {
        for b in &annotators[i..] {
            if let Some(v) = m.cell(a, b) {
                cells.push(json!({"a": a, "b": b, "agreement": v, "support": m.support(a, b)}));
            }
        }
    }
    Ok(Json(json!({ "annotators": annotators, "cells": cells })))
}

/// Serve until ctrl-c.
pub async fn serve(state: Shared, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
