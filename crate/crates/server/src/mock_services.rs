//! `POST /v1/inpaint` and `POST /v1/detect` backed by any in-process backend.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use synoe_core::svc::wire::{self, DetectBody, DetectReply, ErrorReply, InpaintBody, InpaintReply};
use synoe_core::svc::{self, Detector, Inpainter, ServiceError};

#[derive(Clone)]
struct Backends {
    inpainter: Arc<dyn Inpainter>,
    detector: Arc<dyn Detector>,
}

fn error(status: StatusCode, request_id: Option<String>, message: String) -> Response {
    (status, Json(ErrorReply { request_id, error: message })).into_response()
}

fn service_error(request_id: &str, e: ServiceError) -> Response {
    let status = match e {
        ServiceError::InvalidRequest { .. } | ServiceError::Decode { .. } => StatusCode::BAD_REQUEST,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    };
    error(status, Some(request_id.to_string()), e.to_string())
}

async fn inpaint(State(b): State<Backends>, body: Result<Json<InpaintBody>, JsonRejection>) -> Response {
    let Json(body) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, None, e.body_text()),
    };
    let request_id = body.request_id.clone();
    let req = match body.into_request() {
        Ok(r) => r,
        Err(e) => return service_error(&request_id, e),
    };
    let result = tokio::task::spawn_blocking(move || svc::inpaint(b.inpainter.as_ref(), &req)).await;
    match result {
        Ok(Ok(bytes)) => Json(InpaintReply { request_id, image: wire::encode_image(&bytes) }).into_response(),
        Ok(Err(e)) => service_error(&request_id, e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, Some(request_id), e.to_string()),
    }
}

async fn detect(State(b): State<Backends>, body: Result<Json<DetectBody>, JsonRejection>) -> Response {
    let Json(body) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, None, e.body_text()),
    };
    let request_id = body.request_id.clone();
    let req = match body.into_request() {
        Ok(r) => r,
        Err(e) => return service_error(&request_id, e),
    };
    let result = tokio::task::spawn_blocking(move || svc::detect(b.detector.as_ref(), &req)).await;
    match result {
        Ok(Ok(detections)) => Json(DetectReply { request_id, detections }).into_response(),
        Ok(Err(e)) => service_error(&request_id, e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, Some(request_id), e.to_string()),
    }
}

pub fn router(inpainter: Arc<dyn Inpainter>, detector: Arc<dyn Detector>) -> Router {
    Router::new()
        .route(wire::INPAINT_PATH, post(inpaint))
        .route(wire::DETECT_PATH, post(detect))
        .with_state(Backends { inpainter, detector })
}
