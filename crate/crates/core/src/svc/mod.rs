//! Clients for the two external model services: the inpainter (content
//! generation) and the open-vocabulary detector (label and box inference).
//!
//! Backends implement the raw [`Inpainter`] / [`Detector`] traits; the free
//! functions [`inpaint`] and [`detect`] wrap any backend with the response
//! checks every caller relies on.

pub mod http;
pub mod mock;
pub mod wire;

use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging;
use crate::model::BBox;

/// Detector box-score threshold used when none is configured.
pub const DEFAULT_BOX_THRESHOLD: f64 = 0.35;
/// Detector text-score threshold used when none is configured.
pub const DEFAULT_TEXT_THRESHOLD: f64 = 0.25;
/// Requests allowed in flight per endpoint.
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct InpaintRequest {
    pub request_id: String,
    /// Lossless PNG bytes of the crop.
    pub image_crop: Vec<u8>,
    pub prompt: String,
    pub crop_side: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectRequest {
    pub request_id: String,
    /// Stable identifier of the crop, used by scripted backends.
    pub crop_id: Option<String>,
    pub image_crop: Vec<u8>,
    /// One category, or several joined with `" . "`.
    pub prompt: String,
    pub box_threshold: f64,
    pub text_threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub box_threshold: f64,
    pub text_threshold: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { box_threshold: DEFAULT_BOX_THRESHOLD, text_threshold: DEFAULT_TEXT_THRESHOLD }
    }
}

/// A scored detection; `bbox` is in the coordinates of the image that was sent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub bbox: BBox,
    pub label: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ServiceError {
    #[error("transport failure talking to {endpoint} after {attempts} attempt(s): {message}")]
    Transport { endpoint: String, attempts: u32, message: String },
    #[error("service error for request {request_id} (status {status}): {message}")]
    Service { request_id: String, status: u16, message: String },
    #[error("response for request {request_id} is {got:?}, expected {expected:?}")]
    DimensionMismatch { request_id: String, expected: (u32, u32), got: (u32, u32) },
    #[error("invalid request {request_id}: {message}")]
    InvalidRequest { request_id: String, message: String },
    #[error("undecodable payload for request {request_id}: {message}")]
    Decode { request_id: String, message: String },
}

pub trait Inpainter: Send + Sync {
    /// Returns encoded image bytes for the edited crop.
    fn inpaint(&self, req: &InpaintRequest) -> Result<Vec<u8>, ServiceError>;
}

pub trait Detector: Send + Sync {
    fn detect(&self, req: &DetectRequest) -> Result<Vec<DetectionRecord>, ServiceError>;
}

/// Joins prompt parts the way the detector expects, e.g. `"penguin . car"`.
pub fn join_prompt<S: AsRef<str>>(parts: &[S]) -> String {
    parts.iter().map(|p| p.as_ref().trim()).collect::<Vec<_>>().join(" . ")
}

/// Splits a detector prompt into its category phrases.
pub fn prompt_tokens(prompt: &str) -> Vec<&str> {
    prompt.split('.').map(str::trim).filter(|t| !t.is_empty()).collect()
}

/// True when `label` is a sub-phrase of one of the prompt's categories.
pub fn label_in_vocabulary(label: &str, prompt: &str) -> bool {
    let label = label.trim().to_lowercase();
    !label.is_empty() && prompt_tokens(prompt).iter().any(|t| t.to_lowercase().contains(&label))
}

/// Calls an inpainting backend and rejects responses whose size differs from the crop.
pub fn inpaint(backend: &dyn Inpainter, req: &InpaintRequest) -> Result<Vec<u8>, ServiceError> {
    if req.prompt.trim().is_empty() {
        return Err(ServiceError::InvalidRequest { request_id: req.request_id.clone(), message: "empty prompt".into() });
    }
    let decode = |bytes: &[u8]| {
        imaging::png_dimensions(bytes)
            .map_err(|e| ServiceError::Decode { request_id: req.request_id.clone(), message: e.to_string() })
    };
    let expected = decode(&req.image_crop)?;
    let out = backend.inpaint(req)?;
    let got = decode(&out)?;
    if got != expected {
        return Err(ServiceError::DimensionMismatch { request_id: req.request_id.clone(), expected, got });
    }
    Ok(out)
}

/// Calls a detection backend; the result is thresholded, restricted to the
/// prompt vocabulary and sorted by descending score (stable on ties).
pub fn detect(backend: &dyn Detector, req: &DetectRequest) -> Result<Vec<DetectionRecord>, ServiceError> {
    let in_unit = |v: f64| (0.0..=1.0).contains(&v);
    if !in_unit(req.box_threshold) || !in_unit(req.text_threshold) {
        return Err(ServiceError::InvalidRequest {
            request_id: req.request_id.clone(),
            message: "thresholds must lie in [0, 1]".into(),
        });
    }
    let mut records = backend.detect(req)?;
    records.retain(|r| {
        let keep = r.score >= req.box_threshold && r.score <= 1.0 && label_in_vocabulary(&r.label, &req.prompt);
        if !keep {
            tracing::debug!(request_id = %req.request_id, label = %r.label, score = r.score, "detection dropped");
        }
        keep
    });
    records.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(records)
}

/// Counting semaphore bounding concurrent requests to one endpoint.
#[derive(Debug)]
pub struct InFlightLimit {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl InFlightLimit {
    pub fn new(max: usize) -> Self {
        Self { permits: Mutex::new(max.max(1)), freed: Condvar::new() }
    }

    pub fn acquire(&self) -> InFlightGuard<'_> {
        let mut n = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        InFlightGuard { limit: self }
    }
}

pub struct InFlightGuard<'a> {
    limit: &'a InFlightLimit,
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.limit.permits.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.limit.freed.notify_one();
    }
}
