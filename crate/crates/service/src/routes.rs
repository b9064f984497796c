use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{BytesRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use handmend_core::pipeline::{ParamOverrides, StepReport};
use handmend_core::raster::decode_rgb;
use handmend_core::{PipelineSession, SessionParams, StepName, StepStatus};

use crate::error::ApiError;
use crate::state::{new_session_id, AppState, SessionSlot};

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.config.max_upload_bytes;
    Router::new()
        .route("/templates", get(list_templates))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/steps/{step}", post(run_step))
        .route("/sessions/{id}/artifacts/{name}", get(get_artifact))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

fn artifact_url(id: &str, file: &str) -> String {
    format!("/sessions/{id}/artifacts/{file}")
}

fn session_view(slot: &SessionSlot, session: &PipelineSession) -> Value {
    let mut state = BTreeMap::new();
    let mut artifacts = BTreeMap::new();
    for step in StepName::ALL {
        let rec = session.record(step);
        state.insert(step.as_str(), json!(rec.status));
        let urls: BTreeMap<&str, String> = rec
            .artifacts
            .iter()
            .map(|(logical, file)| (logical.as_str(), artifact_url(&slot.id, file)))
            .collect();
        artifacts.insert(step.as_str(), urls);
    }
    json!({
        "id": slot.id,
        "created_at": slot.created_at,
        "running": slot.running(),
        "state": state,
        "params": session.params(),
        "artifacts": artifacts,
        "input_url": artifact_url(&slot.id, handmend_core::pipeline::INPUT_FILE),
        "manifest_url": artifact_url(&slot.id, handmend_core::pipeline::MANIFEST_FILE),
    })
}

async fn list_templates(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({ "templates": state.pipeline.templates().names() }))
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    query: Result<Query<ParamOverrides>, QueryRejection>,
    body: Result<Bytes, BytesRejection>,
) -> ApiResult<Response> {
    let body = body.map_err(|e| {
        if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
            ApiError::new(
                StatusCode::PAYLOAD_TOO_LARGE,
                "PayloadTooLarge",
                format!("upload exceeds {} bytes", state.config.max_upload_bytes),
            )
        } else {
            ApiError::new(StatusCode::BAD_REQUEST, "BadRequest", e.body_text())
        }
    })?;
    let Query(overrides) =
        query.map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidParams", e.body_text()))?;
    if body.is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "EmptyUpload", "the request body is empty"));
    }
    let image = decode_rgb(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "UndecodableImage", e.to_string()))?;
    let params = overrides.apply(&SessionParams::default());
    state.pipeline.validate_params(&params)?;

    let id = new_session_id();
    let dir = state.session_dir(&id);
    let pipeline = state.pipeline.clone();
    let session = tokio::task::spawn_blocking(move || pipeline.create_session(&dir, image, params))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    let slot = Arc::new(SessionSlot::new(id.clone(), session.clone()));
    state.insert(slot.clone());

    let location = HeaderValue::from_str(&format!("/sessions/{id}")).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok((
        StatusCode::CREATED,
        [(header::LOCATION, location)],
        Json(session_view(&slot, &session)),
    )
        .into_response())
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let slot = state.lookup(&id)?;
    Ok(Json(session_view(&slot, &slot.snapshot())))
}

async fn delete_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    let slot = state.lookup(&id)?;
    let guard = slot.session.clone().try_lock_owned().map_err(|_| ApiError::busy(&id))?;
    state.remove(&id);
    let dir = guard.dir().to_path_buf();
    tokio::task::spawn_blocking(move || {
        drop(guard);
        std::fs::remove_dir_all(dir)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
    .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct StepQuery {
    /// Rerun the downstream steps too; on unless set to false.
    cascade: Option<bool>,
    /// Answer 202 at once instead of waiting for the step.
    #[serde(rename = "async")]
    asynchronous: Option<bool>,
}

fn report_view(id: &str, report: &StepReport) -> Value {
    let artifacts: BTreeMap<&str, String> = report
        .artifacts
        .iter()
        .map(|(logical, file)| (logical.as_str(), artifact_url(id, file)))
        .collect();
    json!({
        "step": report.step,
        "run": report.run,
        "status": report.status,
        "artifacts": artifacts,
        "warnings": report.warnings,
        "elapsed_ms": report.elapsed_ms,
    })
}

fn step_response(slot: &SessionSlot, step: StepName, reports: &[StepReport]) -> Response {
    let last = reports.last().map(|r| &r.status);
    let (code, error) = match last {
        Some(StepStatus::Failed { class, reason, .. }) => {
            let code = if class == "PlacementFailure" {
                StatusCode::UNPROCESSABLE_ENTITY
            } else {
                StatusCode::BAD_GATEWAY
            };
            (code, Some(json!({ "class": class, "message": reason })))
        }
        _ => (StatusCode::OK, None),
    };
    let mut body = json!({
        "session": slot.id,
        "step": step,
        "reports": reports.iter().map(|r| report_view(&slot.id, r)).collect::<Vec<_>>(),
        "session_state": session_view(slot, &slot.snapshot()),
    });
    if let Some(error) = error {
        body["error"] = error;
    }
    (code, Json(body)).into_response()
}

fn accepted(slot: &SessionSlot, step: StepName) -> Response {
    let poll = format!("/sessions/{}", slot.id);
    let mut headers = HeaderMap::new();
    if let Ok(v) = HeaderValue::from_str(&poll) {
        headers.insert(header::LOCATION, v);
    }
    (
        StatusCode::ACCEPTED,
        headers,
        Json(json!({ "session": slot.id, "step": step, "running": true, "poll": poll })),
    )
        .into_response()
}

async fn run_step(
    State(state): State<Arc<AppState>>,
    Path((id, step)): Path<(String, String)>,
    query: Result<Query<StepQuery>, QueryRejection>,
    body: Bytes,
) -> ApiResult<Response> {
    let step: StepName = step.parse().map_err(ApiError::not_found)?;
    let Query(query) = query.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "BadRequest", e.body_text()))?;
    let slot = state.lookup(&id)?;
    let mut guard = slot.session.clone().try_lock_owned().map_err(|_| ApiError::busy(&id))?;
    state.pipeline.check_ready(&guard, step)?;
    let overrides: ParamOverrides = if body.iter().all(u8::is_ascii_whitespace) {
        ParamOverrides::default()
    } else {
        serde_json::from_slice(&body)
            .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidParams", e.to_string()))?
    };
    state.pipeline.update_params(&mut guard, &overrides)?;
    slot.publish(&guard);

    let cascade = query.cascade.unwrap_or(true);
    slot.set_running(Some(step));
    let pipeline = state.pipeline.clone();
    let worker = slot.clone();
    let task = tokio::task::spawn_blocking(move || {
        let mut session = guard;
        let result = if cascade {
            pipeline.rerun_from(&mut session, step)
        } else {
            pipeline.run_step(&mut session, step).map(|r| vec![r])
        };
        worker.publish(&session);
        drop(session);
        worker.set_running(None);
        worker.touch();
        result
    });

    if query.asynchronous.unwrap_or(state.config.async_steps) {
        return Ok(accepted(&slot, step));
    }
    match tokio::time::timeout(state.config.step_timeout, task).await {
        Ok(joined) => {
            let reports = joined.map_err(|e| ApiError::internal(e.to_string()))??;
            Ok(step_response(&slot, step, &reports))
        }
        Err(_) => Ok(accepted(&slot, step)),
    }
}

fn content_type(name: &str) -> &'static str {
    match name.rsplit('.').next() {
        Some("png") => "image/png",
        Some("json") => "application/json",
        Some("txt") => "text/plain; charset=utf-8",
        _ => "application/octet-stream",
    }
}

async fn get_artifact(
    State(state): State<Arc<AppState>>,
    Path((id, name)): Path<(String, String)>,
) -> ApiResult<Response> {
    let slot = state.lookup(&id)?;
    let missing = || ApiError::not_found(format!("session {id} has no artifact `{name}`"));
    let path = slot.snapshot().resolve_artifact(&name).ok_or_else(missing)?;
    let bytes = tokio::task::spawn_blocking(move || std::fs::read(path))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|_| missing())?;
    Ok(([(header::CONTENT_TYPE, content_type(&name))], bytes).into_response())
}
