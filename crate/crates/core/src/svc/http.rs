//! Blocking HTTP clients for remote model services.

use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use ureq::Agent;

use super::wire::{self, DetectBody, DetectReply, ErrorReply, InpaintBody, InpaintReply};
use super::{DetectRequest, DetectionRecord, Detector, InFlightLimit, InpaintRequest, Inpainter, ServiceError};

/// Transport failures are retried with exponential backoff; service errors never are.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, base_delay: Duration::from_millis(200) }
    }
}

#[derive(Debug)]
struct JsonEndpoint {
    base_url: String,
    agent: Agent,
    retry: RetryPolicy,
    limit: InFlightLimit,
}

impl JsonEndpoint {
    fn new(base_url: &str, retry: RetryPolicy, max_in_flight: usize, timeout: Duration) -> Self {
        let agent: Agent = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            agent,
            retry,
            limit: InFlightLimit::new(max_in_flight),
        }
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, request_id: &str, body: &B) -> Result<R, ServiceError> {
        let url = format!("{}{}", self.base_url, path);
        let _permit = self.limit.acquire();
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            match self.agent.post(&url).send_json(body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if (200..300).contains(&status) {
                        return resp.body_mut().read_json::<R>().map_err(|e| ServiceError::Decode {
                            request_id: request_id.into(),
                            message: e.to_string(),
                        });
                    }
                    let text = resp.body_mut().read_to_string().unwrap_or_default();
                    let message = serde_json::from_str::<ErrorReply>(&text).map(|e| e.error).unwrap_or(text);
                    return Err(ServiceError::Service { request_id: request_id.into(), status, message });
                }
                Err(e) if attempt <= self.retry.max_retries => {
                    let delay = self.retry.base_delay * 2u32.pow(attempt - 1);
                    tracing::warn!(%url, request_id, attempt, error = %e, ?delay, "transport error, retrying");
                    thread::sleep(delay);
                }
                Err(e) => {
                    return Err(ServiceError::Transport { endpoint: url, attempts: attempt, message: e.to_string() });
                }
            }
        }
    }
}

/// Client for a remote `POST /v1/inpaint` endpoint.
#[derive(Debug)]
pub struct HttpInpainter {
    endpoint: JsonEndpoint,
}

impl HttpInpainter {
    pub fn new(base_url: &str) -> Self {
        Self::with_options(base_url, RetryPolicy::default(), super::DEFAULT_MAX_IN_FLIGHT)
    }

    pub fn with_options(base_url: &str, retry: RetryPolicy, max_in_flight: usize) -> Self {
        Self { endpoint: JsonEndpoint::new(base_url, retry, max_in_flight, Duration::from_secs(300)) }
    }
}

impl Inpainter for HttpInpainter {
    fn inpaint(&self, req: &InpaintRequest) -> Result<Vec<u8>, ServiceError> {
        let reply: InpaintReply = self.endpoint.post(wire::INPAINT_PATH, &req.request_id, &InpaintBody::from(req))?;
        wire::decode_image(&req.request_id, &reply.image)
    }
}

/// Client for a remote `POST /v1/detect` endpoint.
#[derive(Debug)]
pub struct HttpDetector {
    endpoint: JsonEndpoint,
}

impl HttpDetector {
    pub fn new(base_url: &str) -> Self {
        Self::with_options(base_url, RetryPolicy::default(), super::DEFAULT_MAX_IN_FLIGHT)
    }

    pub fn with_options(base_url: &str, retry: RetryPolicy, max_in_flight: usize) -> Self {
        Self { endpoint: JsonEndpoint::new(base_url, retry, max_in_flight, Duration::from_secs(120)) }
    }
}

impl Detector for HttpDetector {
    fn detect(&self, req: &DetectRequest) -> Result<Vec<DetectionRecord>, ServiceError> {
        let reply: DetectReply = self.endpoint.post(wire::DETECT_PATH, &req.request_id, &DetectBody::from(req))?;
        Ok(reply.detections)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unreachable_endpoint_gives_transport_after_retries() {
        // Port 9 (discard) on localhost is closed in the test environment.
        let retry = RetryPolicy { max_retries: 3, base_delay: Duration::from_millis(1) };
        let client = HttpInpainter::with_options("http://127.0.0.1:9", retry, 1);
        let req = InpaintRequest { request_id: "r1".into(), image_crop: vec![1], prompt: "cat".into(), crop_side: 128 };
        match client.inpaint(&req) {
            Err(ServiceError::Transport { attempts, .. }) => assert_eq!(attempts, 4),
            other => panic!("expected transport error, got {other:?}"),
        }
    }
}
