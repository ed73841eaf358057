//! JSON-over-HTTP service. Bodies are capped at 1 MiB.

use axum::extract::rejection::JsonRejection;
use axum::extract::DefaultBodyLimit;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use znq_core::perf::WhatIfScenario;

use crate::api::{self, ApiError, JobRequest};

pub const BODY_LIMIT: usize = 1 << 20;

#[derive(Debug, Deserialize)]
pub struct PrototxtBody {
    pub prototxt: String,
}

#[derive(Debug, Deserialize)]
pub struct EstimateBody {
    pub prototxt: String,
    #[serde(default)]
    pub scenario: WhatIfScenario,
}

fn json_response(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn ok<T: Serialize>(v: &T) -> Response {
    json_response(StatusCode::OK, api::to_json(v))
}

fn status_for(e: &ApiError) -> StatusCode {
    match e.code.as_str() {
        "PayloadTooLarge" => StatusCode::PAYLOAD_TOO_LARGE,
        "UnsupportedMediaType" => StatusCode::UNSUPPORTED_MEDIA_TYPE,
        "SimulationError" | "EngineError" => StatusCode::UNPROCESSABLE_ENTITY,
        _ => StatusCode::BAD_REQUEST,
    }
}

fn fail(e: ApiError) -> Response {
    json_response(status_for(&e), api::error_json(&e))
}

fn reply<T: Serialize>(r: Result<T, ApiError>) -> Response {
    match r {
        Ok(v) => ok(&v),
        Err(e) => fail(e),
    }
}

fn rejection(r: JsonRejection) -> ApiError {
    let code = match r.status() {
        StatusCode::PAYLOAD_TOO_LARGE => "PayloadTooLarge",
        StatusCode::UNSUPPORTED_MEDIA_TYPE => "UnsupportedMediaType",
        _ => "BadRequest",
    };
    ApiError::new(code, r.body_text())
}

macro_rules! body {
    ($b:expr) => {
        match $b {
            Ok(Json(b)) => b,
            Err(r) => return fail(rejection(r)),
        }
    };
}

async fn analyze(b: Result<Json<PrototxtBody>, JsonRejection>) -> Response {
    let b = body!(b);
    reply(api::analyze(&b.prototxt).map(|(r, _)| r))
}

async fn validate(b: Result<Json<PrototxtBody>, JsonRejection>) -> Response {
    let b = body!(b);
    reply(api::validate(&b.prototxt))
}

async fn estimate(b: Result<Json<EstimateBody>, JsonRejection>) -> Response {
    let b = body!(b);
    reply(api::estimate(&b.prototxt, &b.scenario))
}

async fn job(b: Result<Json<JobRequest>, JsonRejection>) -> Response {
    let b = body!(b);
    // blocking: simulation of a full network takes a while
    match tokio::task::spawn_blocking(move || api::execute(&b)).await {
        Ok(r) => reply(r),
        Err(e) => fail(ApiError::new("Internal", e)),
    }
}

async fn presets() -> Response {
    ok(&api::presets())
}

async fn not_found() -> Response {
    json_response(StatusCode::NOT_FOUND, api::error_json(&ApiError::new("NotFound", "no such endpoint")))
}

pub fn router() -> Router {
    Router::new()
        .route("/api/analyze", post(analyze))
        .route("/api/validate", post(validate))
        .route("/api/estimate", post(estimate))
        .route("/api/job", post(job))
        .route("/api/presets", get(presets))
        .fallback(not_found)
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
}

pub async fn serve(addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router()).await
}
