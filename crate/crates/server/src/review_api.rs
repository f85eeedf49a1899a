//! Review HTTP API over a shared [`ReviewStore`].
//!
//! | method | path                     | body / query          |
//! |--------|--------------------------|-----------------------|
//! | GET    | `/review/flagged`        | `?page=0&size=20`     |
//! | GET    | `/review/item/{id}`      |                       |
//! | POST   | `/review/decision`       | `ReviewDecision` JSON |
//! | POST   | `/review/export`         |                       |

use std::fs;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;
use synoe_core::manifest_io::{manifest_to_string, resolve_path, save_manifest};
use synoe_core::model::AnnotationId;
use synoe_core::review::{AnnotationView, FlaggedItem, ReviewDecision, ReviewError, ReviewStore};

pub const DEFAULT_PAGE_SIZE: usize = 20;

#[derive(Clone)]
pub struct ReviewState {
    pub store: Arc<RwLock<ReviewStore>>,
    /// Where `POST /review/export` writes the manifest, if anywhere.
    pub export_path: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct PageQuery {
    page: Option<usize>,
    size: Option<usize>,
}

/// `GET /review/item/{id}` response: the item plus both images as base64 PNG/JPEG bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResponse {
    pub item: FlaggedItem,
    pub original_image_b64: Option<String>,
    pub edited_image_b64: Option<String>,
}

fn error(status: StatusCode, message: impl ToString) -> Response {
    (status, Json(json!({ "error": message.to_string() }))).into_response()
}

fn review_error(e: ReviewError) -> Response {
    let status = match e {
        ReviewError::UnknownAnnotation(_) => StatusCode::NOT_FOUND,
        ReviewError::InvalidClass(_) => StatusCode::UNPROCESSABLE_ENTITY,
        ReviewError::NotReviewable { .. } => StatusCode::CONFLICT,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    };
    error(status, e)
}

async fn flagged(State(s): State<ReviewState>, Query(q): Query<PageQuery>) -> Response {
    let store = s.store.read().unwrap_or_else(|e| e.into_inner());
    Json(store.list_flagged(q.page.unwrap_or(0), q.size.unwrap_or(DEFAULT_PAGE_SIZE))).into_response()
}

async fn item(State(s): State<ReviewState>, Path(id): Path<u64>) -> Response {
    let store = s.store.read().unwrap_or_else(|e| e.into_inner());
    let Some(item) = store.item(AnnotationId(id)) else {
        return review_error(ReviewError::UnknownAnnotation(AnnotationId(id)));
    };
    let read = |file: &Option<String>| {
        file.as_ref()
            .and_then(|f| fs::read(resolve_path(store.base_dir(), f)).ok())
            .map(|bytes| STANDARD.encode(bytes))
    };
    let resp = ItemResponse {
        original_image_b64: read(&item.original_image),
        edited_image_b64: read(&item.edited_image),
        item,
    };
    Json(resp).into_response()
}

async fn decision(State(s): State<ReviewState>, body: Result<Json<ReviewDecision>, JsonRejection>) -> Response {
    let Json(d) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.body_text()),
    };
    let mut store = s.store.write().unwrap_or_else(|e| e.into_inner());
    match store.submit(d) {
        Ok(a) => {
            let view = AnnotationView::new(&a, &store.current().registry);
            Json(json!({ "annotation": view })).into_response()
        }
        Err(e) => review_error(e),
    }
}

async fn export(State(s): State<ReviewState>) -> Response {
    let store = s.store.read().unwrap_or_else(|e| e.into_inner());
    let manifest = match store.export() {
        Ok(m) => m,
        Err(e) => return review_error(e),
    };
    if let Some(path) = &s.export_path {
        if let Err(e) = save_manifest(&manifest, path) {
            return error(StatusCode::INTERNAL_SERVER_ERROR, e);
        }
    }
    match manifest_to_string(&manifest) {
        Ok(text) => {
            let value: serde_json::Value = serde_json::from_str(&text).expect("manifest text is JSON");
            let written = s.export_path.as_ref().map(|p| p.display().to_string());
            Json(json!({ "written": written, "decisions": store.history().len(), "manifest": value })).into_response()
        }
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

pub fn router(state: ReviewState) -> Router {
    Router::new()
        .route("/review/flagged", get(flagged))
        .route("/review/item/{id}", get(item))
        .route("/review/decision", post(decision))
        .route("/review/export", post(export))
        .with_state(state)
}
