//! JSON bodies for `POST /v1/inpaint` and `POST /v1/detect`.
//!
//! Images travel as standard base64 (RFC 4648, padded) PNG bytes.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{DetectRequest, DetectionRecord, InpaintRequest, ServiceError};

pub const INPAINT_PATH: &str = "/v1/inpaint";
pub const DETECT_PATH: &str = "/v1/detect";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InpaintBody {
    pub request_id: String,
    pub image: String,
    pub prompt: String,
    pub crop_side: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InpaintReply {
    pub request_id: String,
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectBody {
    pub request_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop_id: Option<String>,
    pub image: String,
    pub prompt: String,
    pub box_threshold: f64,
    pub text_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectReply {
    pub request_id: String,
    pub detections: Vec<DetectionRecord>,
}

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReply {
    #[serde(default)]
    pub request_id: Option<String>,
    pub error: String,
}

pub fn encode_image(bytes: &[u8]) -> String {
    STANDARD.encode(bytes)
}

pub fn decode_image(request_id: &str, text: &str) -> Result<Vec<u8>, ServiceError> {
    STANDARD
        .decode(text)
        .map_err(|e| ServiceError::Decode { request_id: request_id.into(), message: e.to_string() })
}

impl From<&InpaintRequest> for InpaintBody {
    fn from(r: &InpaintRequest) -> Self {
        Self {
            request_id: r.request_id.clone(),
            image: encode_image(&r.image_crop),
            prompt: r.prompt.clone(),
            crop_side: r.crop_side,
        }
    }
}

impl InpaintBody {
    pub fn into_request(self) -> Result<InpaintRequest, ServiceError> {
        let image_crop = decode_image(&self.request_id, &self.image)?;
        Ok(InpaintRequest { request_id: self.request_id, image_crop, prompt: self.prompt, crop_side: self.crop_side })
    }
}

impl From<&DetectRequest> for DetectBody {
    fn from(r: &DetectRequest) -> Self {
        Self {
            request_id: r.request_id.clone(),
            crop_id: r.crop_id.clone(),
            image: encode_image(&r.image_crop),
            prompt: r.prompt.clone(),
            box_threshold: r.box_threshold,
            text_threshold: r.text_threshold,
        }
    }
}

impl DetectBody {
    pub fn into_request(self) -> Result<DetectRequest, ServiceError> {
        let image_crop = decode_image(&self.request_id, &self.image)?;
        Ok(DetectRequest {
            request_id: self.request_id,
            crop_id: self.crop_id,
            image_crop,
            prompt: self.prompt,
            box_threshold: self.box_threshold,
            text_threshold: self.text_threshold,
        })
    }
}
