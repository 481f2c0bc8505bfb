//! Story-session endpoints.
//!
//! ```text
//! POST  /api/session                          SketchSet -> {id, revision, plan}
//! GET   /api/session/{id}                     -> session
//! POST  /api/session/{id}/generate[?stream=true]
//! PATCH /api/session/{id}/sketch              SketchSet -> {id, revision, plan}
//! POST  /api/session/{id}/line/{n}/regenerate
//! GET   /api/topics                           -> {codes}
//! ```
//!
//! Streaming generation answers with newline-delimited JSON events:
//! one `{"type": "line", ...}` per finished line, then a final
//! `{"type": "story", ...}` or `{"type": "error", ...}`.

use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use plugblend_core::{
    compile_plan, generate_story_with, regenerate_line, Error, LinePlan, PipelineParams, Providers,
    SketchSet, Story, StoryError, StoryLine,
};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::mpsc;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use crate::store::{Session, SessionStore};

/// Header carrying the session revision on story responses.
pub const REVISION_HEADER: &str = "x-session-revision";

#[derive(Clone)]
pub struct AppState {
    pub providers: Providers,
    pub store: Arc<SessionStore>,
    pub params: PipelineParams,
}

impl AppState {
    pub fn new(providers: Providers, store: SessionStore, params: PipelineParams) -> Self {
        Self {
            providers,
            store: Arc::new(store),
            params,
        }
    }
}

/// Builds the router. `cors_origin` of `None` allows any origin.
pub fn router(state: AppState, cors_origin: Option<&str>) -> Router {
    let origin = match cors_origin.and_then(|o| HeaderValue::from_str(o).ok()) {
        Some(o) => AllowOrigin::exact(o),
        None => AllowOrigin::from(Any),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods(Any)
        .allow_headers(Any)
        .expose_headers([header::HeaderName::from_static(REVISION_HEADER)]);
    Router::new()
        .route("/api/session", post(create_session))
        .route("/api/session/{id}", get(get_session))
        .route("/api/session/{id}/generate", post(generate))
        .route("/api/session/{id}/sketch", patch(patch_sketch))
        .route("/api/session/{id}/line/{n}/regenerate", post(regenerate))
        .route("/api/topics", get(topics))
        .layer(cors)
        .with_state(state)
}

fn status_of(e: &Error) -> StatusCode {
    match e {
        e if e.is_provider_failure() => StatusCode::BAD_GATEWAY,
        Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    }
}

fn error_response(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn not_found(id: &str) -> Response {
    error_response(StatusCode::NOT_FOUND, format!("no session `{id}`"))
}

fn parse_sketch(body: &Bytes) -> Result<SketchSet, Response> {
    let text = std::str::from_utf8(body)
        .map_err(|_| error_response(StatusCode::BAD_REQUEST, "body is not UTF-8"))?;
    SketchSet::from_json_str(text)
        .map_err(|e| error_response(StatusCode::BAD_REQUEST, e.to_string()))
}

fn compile_for(state: &AppState, sketch: &SketchSet) -> Result<LinePlan, Response> {
    let known = state.providers.guide().codes();
    if let Some(s) = sketch.sketches.iter().find(|s| !known.contains(&s.code)) {
        return Err(error_response(
            StatusCode::BAD_REQUEST,
            format!("invalid sketch: unknown control code `{}`", s.code),
        ));
    }
    compile_plan(sketch).map_err(|e| error_response(status_of(&e), e.to_string()))
}

#[derive(Serialize)]
struct PlanView<'a> {
    id: &'a str,
    revision: u64,
    plan: &'a LinePlan,
}

fn plan_view(session: &Session) -> Response {
    Json(PlanView {
        id: &session.id,
        revision: session.revision,
        plan: &session.plan,
    })
    .into_response()
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> Response {
    let sketch = match parse_sketch(&body) {
        Ok(s) => s,
        Err(r) => return r,
    };
    let plan = match compile_for(&state, &sketch) {
        Ok(p) => p,
        Err(r) => return r,
    };
    let session = Session {
        id: uuid::Uuid::new_v4().simple().to_string(),
        revision: 0,
        sketch,
        plan,
        story: None,
        params: state.params.clone(),
    };
    state.store.insert(session.clone());
    plan_view(&session)
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    match state.store.get(&id) {
        Some(slot) => Json(slot.snapshot()).into_response(),
        None => not_found(&id),
    }
}

async fn patch_sketch(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Response {
    let Some(slot) = state.store.get(&id) else {
        return not_found(&id);
    };
    let sketch = match parse_sketch(&body) {
        Ok(s) => s,
        Err(r) => return r,
    };
    let plan = match compile_for(&state, &sketch) {
        Ok(p) => p,
        Err(r) => return r,
    };
    let lock = slot.state();
    let mut session = lock.lock().await;
    session.sketch = sketch;
    session.plan = plan;
    state.store.commit(&slot, &mut session);
    plan_view(&session)
}

fn story_response(story: &Story, revision: u64) -> Response {
    let mut resp = Json(story).into_response();
    resp.headers_mut()
        .insert(REVISION_HEADER, HeaderValue::from(revision));
    resp
}

fn story_error_response(err: &StoryError, revision: u64) -> Response {
    let mut resp = (
        status_of(&err.error),
        Json(json!({ "error": err.error.to_string(), "partial": err.partial })),
    )
        .into_response();
    resp.headers_mut()
        .insert(REVISION_HEADER, HeaderValue::from(revision));
    resp
}

#[derive(Deserialize)]
struct GenerateQuery {
    #[serde(default)]
    stream: bool,
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum StreamEvent {
    Line {
        line: StoryLine,
    },
    Story {
        story: Story,
        revision: u64,
    },
    Error {
        error: String,
        partial: Story,
        revision: u64,
    },
}

fn ndjson(event: &StreamEvent) -> Bytes {
    let mut v = serde_json::to_vec(event)
        .unwrap_or_else(|e| format!("{{\"type\":\"error\",\"error\":\"{e}\"}}").into_bytes());
    v.push(b'\n');
    Bytes::from(v)
}

async fn generate(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<GenerateQuery>,
) -> Response {
    let Some(slot) = state.store.get(&id) else {
        return not_found(&id);
    };
    let stream = query.stream;
    let mut session = slot.state().lock_owned().await;
    slot.set_generating(true);

    let (tx, rx) = mpsc::channel::<Bytes>(64);
    let line_tx = stream.then(|| tx.clone());
    let plan = session.plan.clone();
    let params = session.params.clone();
    let providers = state.providers.clone();
    let worker = tokio::task::spawn_blocking(move || {
        generate_story_with(&plan, &providers, &params, |line| {
            if let Some(tx) = &line_tx {
                let _ = tx.blocking_send(ndjson(&StreamEvent::Line { line: line.clone() }));
            }
        })
    });

    let store = state.store.clone();
    let finish = async move {
        let outcome = match worker.await {
            Ok(r) => r,
            Err(e) => {
                slot.set_generating(false);
                return Err(error_response(
                    StatusCode::INTERNAL_SERVER_ERROR,
                    e.to_string(),
                ));
            }
        };
        session.story = Some(match &outcome {
            Ok(story) => story.clone(),
            Err(e) => e.partial.clone(),
        });
        store.commit(&slot, &mut session);
        slot.set_generating(false);
        Ok((outcome, session.revision))
    };

    // runs to completion even if the client goes away
    let done = tokio::spawn(finish);
    if !stream {
        return match done.await {
            Ok(Ok((Ok(story), rev))) => story_response(&story, rev),
            Ok(Ok((Err(e), rev))) => story_error_response(&e, rev),
            Ok(Err(r)) => r,
            Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        };
    }

    tokio::spawn(async move {
        let last = match done.await {
            Ok(Ok((Ok(story), revision))) => StreamEvent::Story { story, revision },
            Ok(Ok((Err(e), revision))) => StreamEvent::Error {
                error: e.error.to_string(),
                partial: e.partial,
                revision,
            },
            _ => return,
        };
        let _ = tx.send(ndjson(&last)).await;
    });
    let body = futures::stream::unfold(rx, |mut rx| async move {
        rx.recv()
            .await
            .map(|chunk| (Ok::<_, std::convert::Infallible>(chunk), rx))
    });
    Response::builder()
        .header(header::CONTENT_TYPE, "application/x-ndjson")
        .body(Body::from_stream(body))
        .unwrap_or_else(|e| error_response(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
}

async fn regenerate(
    State(state): State<AppState>,
    Path((id, n)): Path<(String, String)>,
) -> Response {
    let Some(slot) = state.store.get(&id) else {
        return not_found(&id);
    };
    let Ok(n) = n.parse::<usize>() else {
        return error_response(
            StatusCode::BAD_REQUEST,
            format!("line index `{n}` is not a number"),
        );
    };
    if slot.is_generating() {
        return error_response(StatusCode::CONFLICT, "a full generation is in progress");
    }
    let mut session = slot.state().lock_owned().await;
    if n >= session.plan.len() {
        return error_response(
            StatusCode::BAD_REQUEST,
            Error::InvalidLineIndex {
                index: n,
                len: session.plan.len(),
            }
            .to_string(),
        );
    }
    let Some(story) = session.story.clone() else {
        return error_response(StatusCode::CONFLICT, "no story generated yet");
    };
    let plan = session.plan.clone();
    let params = session.params.clone();
    let providers = state.providers.clone();
    let outcome =
        tokio::task::spawn_blocking(move || regenerate_line(&story, n, &plan, &providers, &params))
            .await;
    match outcome {
        Ok(Ok(story)) => {
            session.story = Some(story.clone());
            state.store.commit(&slot, &mut session);
            story_response(&story, session.revision)
        }
        Ok(Err(e)) => error_response(status_of(&e), e.to_string()),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn topics(State(state): State<AppState>) -> Response {
    let guide = state.providers.guide.clone();
    match tokio::task::spawn_blocking(move || guide.available_codes()).await {
        Ok(Ok(codes)) => Json(json!({ "codes": codes })).into_response(),
        Ok(Err(e)) => error_response(status_of(&e), e.to_string()),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}
