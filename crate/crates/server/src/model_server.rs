//! Serves local models over the provider protocol so that other processes
//! can attach to them with `RemoteLm` and `RemoteClassifier`.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use plugblend_core::eval::{Classifier, ClassifyRequest, ClassifyResponse};
use plugblend_core::provider::{
    DetokenizeRequest, DetokenizeResponse, LogitsRequest, LogitsResponse, MetaResponse,
    TokenizeRequest, TokenizeResponse,
};
use plugblend_core::{BaseLm, ControlCode, Error, GuideLm, TokenId};
use serde::de::DeserializeOwned;
use serde_json::json;

#[derive(Clone)]
pub struct ModelBackend {
    pub base: Arc<dyn BaseLm>,
    pub guide: Option<Arc<dyn GuideLm>>,
    pub classifier: Option<Arc<dyn Classifier>>,
}

pub fn model_router(backend: ModelBackend) -> Router {
    Router::new()
        .route("/v1/meta", get(meta))
        .route("/v1/logits", post(logits))
        .route("/v1/tokenize", post(tokenize))
        .route("/v1/detokenize", post(detokenize))
        .route("/v1/classify", post(classify))
        .with_state(backend)
}

fn fail(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn core_fail(e: Error) -> Response {
    let status = match e {
        Error::ProviderUnavailable(_) | Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    };
    fail(status, e.to_string())
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, Response> {
    serde_json::from_slice(body).map_err(|e| fail(StatusCode::BAD_REQUEST, e.to_string()))
}

async fn blocking<T, F>(f: F) -> Result<T, Response>
where
    T: Send + 'static,
    F: FnOnce() -> plugblend_core::Result<T> + Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(e)) => Err(core_fail(e)),
        Err(e) => Err(fail(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
    }
}

async fn meta(State(b): State<ModelBackend>) -> Response {
    let codes = b
        .guide
        .as_ref()
        .map(|g| g.codes().iter().map(|c| c.to_string()).collect())
        .unwrap_or_default();
    Json(MetaResponse {
        vocab_size: b.base.vocab_size(),
        codes,
        eos_token: b.base.eos_token().map(|t| t.0),
    })
    .into_response()
}

async fn logits(State(b): State<ModelBackend>, body: Bytes) -> Response {
    let req: LogitsRequest = match parse(&body) {
        Ok(r) => r,
        Err(r) => return r,
    };
    let context: Vec<TokenId> = req.context.into_iter().map(TokenId).collect();
    let result = blocking(move || match req.code {
        None => b.base.next_logits(&context),
        Some(label) => {
            let guide = b
                .guide
                .as_ref()
                .ok_or_else(|| Error::UnknownControlCode(label.clone()))?;
            guide.cc_next_logits(&context, &ControlCode::new(label)?)
        }
    })
    .await;
    match result {
        Ok(l) => Json(LogitsResponse {
            logits: l.into_inner(),
        })
        .into_response(),
        Err(r) => r,
    }
}

async fn tokenize(State(b): State<ModelBackend>, body: Bytes) -> Response {
    let req: TokenizeRequest = match parse(&body) {
        Ok(r) => r,
        Err(r) => return r,
    };
    match blocking(move || b.base.tokenize(&req.text)).await {
        Ok(t) => Json(TokenizeResponse {
            tokens: t.into_iter().map(|t| t.0).collect(),
        })
        .into_response(),
        Err(r) => r,
    }
}

async fn detokenize(State(b): State<ModelBackend>, body: Bytes) -> Response {
    let req: DetokenizeRequest = match parse(&body) {
        Ok(r) => r,
        Err(r) => return r,
    };
    let tokens: Vec<TokenId> = req.tokens.into_iter().map(TokenId).collect();
    match blocking(move || b.base.detokenize(&tokens)).await {
        Ok(text) => Json(DetokenizeResponse { text }).into_response(),
        Err(r) => r,
    }
}

async fn classify(State(b): State<ModelBackend>, body: Bytes) -> Response {
    let req: ClassifyRequest = match parse(&body) {
        Ok(r) => r,
        Err(r) => return r,
    };
    let Some(clf) = b.classifier.clone() else {
        return fail(StatusCode::NOT_FOUND, "no classifier attached");
    };
    match blocking(move || clf.classify(&req.text, &req.labels)).await {
        Ok(scores) => Json(ClassifyResponse { scores }).into_response(),
        Err(r) => r,
    }
}
