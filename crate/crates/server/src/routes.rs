use std::collections::HashMap;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;

use veilmod_core::experiment::{
    hash_token, ModerationResponse, RevealEvent, RevealKind, RevealSource, SessionState,
};
use veilmod_core::region::{region_tile, RevealRegion};
use veilmod_core::report::ReportFormat;
use veilmod_core::stage::{same_sigma, RevealTool, StageConfig};
use veilmod_core::survey::SurveyResponse;

use crate::wire::{image_url, url_escape, CreateSession, Logged, RevealLogged, SessionCreated, TaskPayload};
use crate::{ApiError, AppState};

type ApiResult<T> = Result<T, ApiError>;

pub(crate) fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/instruments", get(instruments))
        .route("/api/sessions", post(create_session))
        .route("/api/tasks/next", get(next_task))
        .route("/api/images/{id}", get(get_image))
        .route("/api/images/{id}/tile", get(get_tile))
        .route("/api/responses", post(post_response))
        .route("/api/reveals", post(post_reveal))
        .route("/api/surveys", post(post_survey))
        .route("/api/admin/report", get(admin_report))
        .with_state(state)
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    let value = headers.get(header::AUTHORIZATION)?.to_str().ok()?;
    let token = value.strip_prefix("Bearer ")?.trim();
    (!token.is_empty()).then_some(token)
}

fn unauthorized() -> ApiError {
    ApiError::new(StatusCode::UNAUTHORIZED, "missing or unknown bearer token")
}

/// Session id for the request's bearer token.
fn session_id(app: &AppState, headers: &HeaderMap) -> ApiResult<String> {
    let token = bearer(headers).ok_or_else(unauthorized)?;
    let exp = app.lock()?;
    exp.state()
        .session_for_token(token)
        .map(|s| s.session.session_id.clone())
        .ok_or_else(unauthorized)
}

fn live<'a>(session: &'a SessionState, now: u64) -> ApiResult<&'a SessionState> {
    if now > session.session.expires_at {
        return Err(ApiError::new(
            StatusCode::GONE,
            format!("session {} has expired", session.session.session_id),
        ));
    }
    Ok(session)
}

async fn health(State(app): State<AppState>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "experiment_id": app.config().experiment_id }))
}

async fn instruments(State(app): State<AppState>) -> Response {
    Json(app.battery().clone()).into_response()
}

async fn create_session(State(app): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req: CreateSession = parse_body(&body)?;
    let token = app.inner.options.tokens.next_token();
    let now = app.now_ms();
    let session = app
        .lock()?
        .start_session(&req.worker_id, req.stage_id, app.corpus(), &token, now)?;
    let body = SessionCreated {
        token,
        session_id: session.session_id,
        task_count: session.task_list.len(),
        stage: session.stage,
        expires_at_ms: session.expires_at,
        region_radius: app.config().region_radius,
    };
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn next_task(State(app): State<AppState>, headers: HeaderMap) -> ApiResult<Response> {
    let sid = session_id(&app, &headers)?;
    let now = app.now_ms();
    let mut exp = app.lock()?;
    let Some(task) = exp.serve_next(&sid, now)? else {
        return Ok(StatusCode::NO_CONTENT.into_response());
    };
    let session = &exp.state().session(&sid)?.session;
    let stage = session.stage.clone();
    let payload = TaskPayload {
        session_id: sid.clone(),
        index: session.task_list.iter().position(|t| *t == task.image_id).unwrap_or(0),
        total: session.task_list.len(),
        image_url: image_url(&task.image_id, stage.sigma),
        tile_url: stage
            .permits_tiles()
            .then(|| format!("/api/images/{}/tile", url_escape(&task.image_id))),
        image_id: task.image_id,
        width: task.width,
        height: task.height,
        stage,
        region_radius: app.config().region_radius,
        region_max_radius: app.config().region_max_radius,
    };
    Ok(Json(payload).into_response())
}

fn parse_num<T: std::str::FromStr>(q: &HashMap<String, String>, key: &str) -> ApiResult<Option<T>> {
    q.get(key)
        .map(|v| {
            v.parse()
                .map_err(|_| ApiError::bad_request(format!("query parameter {key}={v:?} is not a valid number")))
        })
        .transpose()
}

/// The canonical allowed sigma matching `sigma`, or 403.
fn permitted_sigma(stage: &StageConfig, sigma: f64) -> ApiResult<f64> {
    stage
        .allowed_sigmas()
        .into_iter()
        .find(|s| same_sigma(*s, sigma))
        .ok_or_else(|| {
            ApiError::new(
                StatusCode::FORBIDDEN,
                format!("sigma {sigma} is not available in stage {}", stage.stage_id),
            )
        })
}

async fn get_image(
    State(app): State<AppState>,
    Path(image_id): Path<String>,
    Query(query): Query<HashMap<String, String>>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let sid = session_id(&app, &headers)?;
    let requested: Option<f64> = parse_num(&query, "sigma")?;
    if requested.is_some_and(|s| !s.is_finite() || s < 0.0) {
        return Err(ApiError::bad_request("sigma must be a non-negative number"));
    }
    let now = app.now_ms();
    let sigma = {
        let mut exp = app.lock()?;
        let session = live(exp.state().session(&sid)?, now)?;
        if session.task(&image_id).is_none() {
            return Err(ApiError::new(StatusCode::NOT_FOUND, format!("image {image_id} is not in this session")));
        }
        let stage = session.session.stage.clone();
        let sigma = permitted_sigma(&stage, requested.unwrap_or(stage.sigma))?;
        if stage.reveal_tool == RevealTool::Slider {
            let active = session
                .activity
                .get(&image_id)
                .is_some_and(|a| a.first_served_at.is_some() && a.response.is_none());
            // Anything sharper than the stage default is released only while
            // the image is open, and is logged before it is sent.
            if !active && !same_sigma(sigma, stage.sigma) {
                return Err(ApiError::new(
                    StatusCode::CONFLICT,
                    format!("image {image_id} is not open; only sigma {} is available", stage.sigma),
                ));
            }
            if active {
                exp.note_rendition(&sid, &image_id, sigma, now)?;
            }
        }
        sigma
    };
    let record = app
        .corpus()
        .get(&image_id)
        .cloned()
        .ok_or_else(|| ApiError::internal(format!("image {image_id} missing from corpus")))?;
    let worker = app.clone();
    let (bytes, _) = tokio::task::spawn_blocking(move || worker.cache().get_or_render(worker.corpus(), &record, sigma))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    let mut resp = (StatusCode::OK, bytes).into_response();
    let h = resp.headers_mut();
    h.insert(header::CONTENT_TYPE, HeaderValue::from_static("image/jpeg"));
    h.insert(header::CACHE_CONTROL, HeaderValue::from_static("private, no-store"));
    h.insert("x-sigma", HeaderValue::from_str(&sigma.to_string()).expect("ascii"));
    Ok(resp)
}

fn need<T>(v: Option<T>, key: &str) -> ApiResult<T> {
    v.ok_or_else(|| ApiError::bad_request(format!("missing query parameter {key}")))
}

fn parse_region(query: &HashMap<String, String>, max_radius: u32) -> ApiResult<RevealRegion> {
    let too_large = |what: String| ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, what);
    let rect = ["x", "y", "w", "h"].iter().any(|k| query.contains_key(*k));
    let circle = ["cx", "cy", "r"].iter().any(|k| query.contains_key(*k));
    let region = match (rect, circle) {
        (true, false) => {
            let w: u32 = need(parse_num(query, "w")?, "w")?;
            let h: u32 = need(parse_num(query, "h")?, "h")?;
            let limit = max_radius.saturating_mul(2).saturating_add(1);
            if w > limit || h > limit {
                return Err(too_large(format!("tile {w}x{h} exceeds {limit}x{limit}")));
            }
            RevealRegion::rect(need(parse_num(query, "x")?, "x")?, need(parse_num(query, "y")?, "y")?, w, h)
        }
        (false, true) => {
            let r: u32 = need(parse_num(query, "r")?, "r")?;
            if r > max_radius {
                return Err(too_large(format!("radius {r} exceeds {max_radius}")));
            }
            RevealRegion::circle(need(parse_num(query, "cx")?, "cx")?, need(parse_num(query, "cy")?, "cy")?, r)
        }
        _ => return Err(ApiError::bad_request("give either x,y,w,h or cx,cy,r")),
    };
    region.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(region)
}

async fn get_tile(
    State(app): State<AppState>,
    Path(image_id): Path<String>,
    Query(query): Query<HashMap<String, String>>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let sid = session_id(&app, &headers)?;
    let now = app.now_ms();
    let (region, seq) = {
        let mut exp = app.lock()?;
        let session = live(exp.state().session(&sid)?, now)?;
        let stage = &session.session.stage;
        let kind = match stage.reveal_tool {
            RevealTool::Click => RevealKind::ClickReveal,
            RevealTool::Hover => RevealKind::HoverStart,
            _ => {
                return Err(ApiError::new(
                    StatusCode::FORBIDDEN,
                    format!("stage {} has no reveal tiles", stage.stage_id),
                ))
            }
        };
        let region = parse_region(&query, app.config().region_max_radius)?;
        let event = RevealEvent {
            image_id: image_id.clone(),
            kind,
            region: Some(region),
            sigma_value: None,
            client_at_ms: None,
            source: RevealSource::Server,
        };
        let records = exp.record_reveal_event(&sid, event, now)?;
        (region, records.last().map_or(0, |r| r.seq))
    };
    let record = app
        .corpus()
        .get(&image_id)
        .cloned()
        .ok_or_else(|| ApiError::internal(format!("image {image_id} missing from corpus")))?;
    let worker = app.clone();
    let png = tokio::task::spawn_blocking(move || -> ApiResult<Vec<u8>> {
        let original = worker.corpus().load_image(&record).map_err(|e| ApiError::internal(e.to_string()))?;
        let tile = region_tile(&original, &region).map_err(|e| ApiError::bad_request(e.to_string()))?;
        tile.encode_png().map_err(|e| ApiError::internal(e.to_string()))
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    let mut resp = (StatusCode::OK, png).into_response();
    let h = resp.headers_mut();
    h.insert(header::CONTENT_TYPE, HeaderValue::from_static("image/png"));
    h.insert(header::CACHE_CONTROL, HeaderValue::from_static("private, no-store"));
    h.insert("x-reveal-seq", HeaderValue::from(seq));
    Ok(resp)
}

async fn post_response(State(app): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let sid = session_id(&app, &headers)?;
    let response: ModerationResponse = parse_body(&body)?;
    let now = app.now_ms();
    let record = app.lock()?.record_response(&sid, response, now)?;
    Ok((StatusCode::CREATED, Json(Logged { seq: record.seq })).into_response())
}

async fn post_reveal(State(app): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let sid = session_id(&app, &headers)?;
    let mut event: RevealEvent = parse_body(&body)?;
    event.source = RevealSource::Client;
    let now = app.now_ms();
    let records = app.lock()?.record_reveal_event(&sid, event, now)?;
    let sigma_value = records.last().and_then(|r| match &r.event {
        veilmod_core::eventlog::LogEvent::Reveal(e) => e.sigma_value,
        _ => None,
    });
    let body = RevealLogged {
        seqs: records.iter().map(|r| r.seq).collect(),
        sigma_value,
    };
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn post_survey(State(app): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let sid = session_id(&app, &headers)?;
    let survey: SurveyResponse = parse_body(&body)?;
    let now = app.now_ms();
    let record = app.lock()?.record_survey(&sid, survey, now)?;
    Ok((StatusCode::CREATED, Json(Logged { seq: record.seq })).into_response())
}

async fn admin_report(
    State(app): State<AppState>,
    Query(query): Query<HashMap<String, String>>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let token = bearer(&headers).ok_or_else(unauthorized)?;
    let is_admin = app
        .config()
        .admin_token
        .as_deref()
        .is_some_and(|admin| hash_token(admin) == hash_token(token));
    if !is_admin {
        return Err(ApiError::new(StatusCode::FORBIDDEN, "admin token required"));
    }
    let experiment = query
        .get("experiment")
        .ok_or_else(|| ApiError::bad_request("missing query parameter experiment"))?;
    if *experiment != app.config().experiment_id {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown experiment {experiment:?}")));
    }
    let format: ReportFormat = query
        .get("format")
        .map(|f| f.parse().map_err(ApiError::bad_request))
        .transpose()?
        .unwrap_or(ReportFormat::Json);
    let text = app.report(format)?;
    let content_type = match format {
        ReportFormat::Table => "text/plain; charset=utf-8",
        ReportFormat::Csv => "text/csv; charset=utf-8",
        ReportFormat::Json => "application/json",
    };
    Ok(([(header::CONTENT_TYPE, content_type)], text).into_response())
}
