//! Deterministic offline stand-ins for the model services.
//!
//! The mock inpainter stamps a solid rectangle at the crop center whose color
//! is derived from the prompt; the mock detector either plays back scripted
//! fixtures keyed by `(crop_id, prompt)` or finds those rectangles again by
//! color. Together they exercise every labeling scenario without a GPU:
//!
//! * an OOD stamp (prompt color) is found under the prompt's label,
//! * an "ID variant" stamp is reported under the ID class of a combined
//!   prompt such as `"penguin . car"`,
//! * an empty inpainting leaves nothing to find.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::{prompt_tokens, DetectRequest, DetectionRecord, Detector, InpaintRequest, Inpainter, ServiceError};
use crate::imaging;
use crate::model::BBox;
use crate::stable_hash;

/// Fill of a stamp representing a failed inpainting that redrew the ID object.
pub const ID_VARIANT_COLOR: [u8; 3] = [255, 0, 255];

/// Score the analyzing detector assigns to a stamp matching a prompt phrase.
pub const OOD_MATCH_SCORE: f64 = 0.9;
/// Score for an ID-variant stamp reported under the ID class.
pub const ID_VARIANT_SCORE: f64 = 0.8;
/// Score for an ID-variant stamp when the prompt names only the unusual object.
pub const WEAK_MATCH_SCORE: f64 = 0.4;

/// Fill color for a prompt. Never gray and never [`ID_VARIANT_COLOR`].
pub fn prompt_color(prompt: &str) -> [u8; 3] {
    let h = stable_hash(&[b"prompt-color", prompt.trim().to_lowercase().as_bytes()]).to_le_bytes();
    let r = h[0];
    let g = h[1] ^ 0x80;
    let mut b = h[2];
    if r == g {
        b = b.wrapping_add(1);
    }
    let c = [r, g.wrapping_add(u8::from(r == g)), b];
    if c == ID_VARIANT_COLOR {
        [254, 0, 255]
    } else {
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockOutcome {
    Ood,
    IdVariant,
    Empty,
}

/// Fractions of inpaintings that go wrong; the rest are faithful.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MockRates {
    pub id_variant: f64,
    pub empty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockInpainter {
    pub seed: u64,
    pub rates: MockRates,
}

impl MockInpainter {
    /// Always stamps the prompt color.
    pub fn new(seed: u64) -> Self {
        Self { seed, rates: MockRates::default() }
    }

    pub fn with_rates(seed: u64, rates: MockRates) -> Self {
        Self { seed, rates }
    }

    fn unit(&self, tag: &[u8], req: &InpaintRequest) -> f64 {
        let h = stable_hash(&[tag, &self.seed.to_le_bytes(), req.prompt.as_bytes(), &req.image_crop]);
        (h >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn outcome(&self, req: &InpaintRequest) -> MockOutcome {
        let u = self.unit(b"outcome", req);
        if u < self.rates.empty {
            MockOutcome::Empty
        } else if u < self.rates.empty + self.rates.id_variant {
            MockOutcome::IdVariant
        } else {
            MockOutcome::Ood
        }
    }

    /// Stamp rectangle `(x, y, w, h)` for a crop of the given size.
    pub fn stamp_rect(&self, req: &InpaintRequest, width: u32, height: u32) -> (u32, u32, u32, u32) {
        let fw = 0.3 + 0.3 * self.unit(b"stamp-w", req);
        let fh = 0.3 + 0.3 * self.unit(b"stamp-h", req);
        let w = ((width as f64 * fw).round() as u32).clamp(1, width);
        let h = ((height as f64 * fh).round() as u32).clamp(1, height);
        ((width - w) / 2, (height - h) / 2, w, h)
    }
}

impl Inpainter for MockInpainter {
    fn inpaint(&self, req: &InpaintRequest) -> Result<Vec<u8>, ServiceError> {
        let decode_err = |e: image::ImageError| ServiceError::Decode { request_id: req.request_id.clone(), message: e.to_string() };
        let mut img = imaging::decode_png(&req.image_crop).map_err(decode_err)?;
        let color = match self.outcome(req) {
            MockOutcome::Empty => None,
            MockOutcome::IdVariant => Some(ID_VARIANT_COLOR),
            MockOutcome::Ood => Some(prompt_color(&req.prompt)),
        };
        if let Some(color) = color {
            let (x0, y0, w, h) = self.stamp_rect(req, img.width(), img.height());
            for y in y0..y0 + h {
                for x in x0..x0 + w {
                    img.put_pixel(x, y, Rgb(color));
                }
            }
        }
        imaging::encode_png(&img).map_err(decode_err)
    }
}

/// Scripted response for one `(crop_id, prompt)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectFixture {
    pub crop_id: String,
    pub prompt: String,
    pub detections: Vec<DetectionRecord>,
}

#[derive(Debug, Clone, Default)]
pub struct MockDetector {
    fixtures: HashMap<(String, String), Vec<DetectionRecord>>,
    analyze: bool,
}

impl MockDetector {
    /// Plays back fixtures only; unknown requests yield no detections.
    pub fn scripted(fixtures: impl IntoIterator<Item = DetectFixture>) -> Self {
        let fixtures = fixtures.into_iter().map(|f| ((f.crop_id, f.prompt), f.detections)).collect();
        Self { fixtures, analyze: false }
    }

    /// Locates [`MockInpainter`] stamps by color.
    pub fn analyzing() -> Self {
        Self { fixtures: HashMap::new(), analyze: true }
    }

    /// Fixtures first, color analysis as the fallback.
    pub fn with_fallback(mut self) -> Self {
        self.analyze = true;
        self
    }

    pub fn load_fixtures(path: &Path) -> Result<Vec<DetectFixture>, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    fn analyze_crop(&self, req: &DetectRequest) -> Result<Vec<DetectionRecord>, ServiceError> {
        let img = imaging::decode_png(&req.image_crop)
            .map_err(|e| ServiceError::Decode { request_id: req.request_id.clone(), message: e.to_string() })?;
        let tokens = prompt_tokens(&req.prompt);
        let mut out = Vec::new();
        for token in &tokens {
            if let Some(bbox) = color_extent(&img, prompt_color(token)) {
                out.push(DetectionRecord { bbox, label: token.to_string(), score: OOD_MATCH_SCORE });
            }
        }
        if let Some(bbox) = color_extent(&img, ID_VARIANT_COLOR) {
            match tokens.as_slice() {
                [] => {}
                [only] => out.push(DetectionRecord { bbox, label: only.to_string(), score: WEAK_MATCH_SCORE }),
                [.., last] => out.push(DetectionRecord { bbox, label: last.to_string(), score: ID_VARIANT_SCORE }),
            }
        }
        Ok(out)
    }
}

impl Detector for MockDetector {
    fn detect(&self, req: &DetectRequest) -> Result<Vec<DetectionRecord>, ServiceError> {
        if let Some(crop_id) = &req.crop_id {
            if let Some(records) = self.fixtures.get(&(crop_id.clone(), req.prompt.clone())) {
                let mut records = records.clone();
                records.sort_by(|a, b| b.score.total_cmp(&a.score));
                return Ok(records);
            }
        }
        if self.analyze {
            let mut records = self.analyze_crop(req)?;
            records.sort_by(|a, b| b.score.total_cmp(&a.score));
            Ok(records)
        } else {
            Ok(Vec::new())
        }
    }
}

/// Bounding box of all pixels with exactly `color`.
fn color_extent(img: &RgbImage, color: [u8; 3]) -> Option<BBox> {
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
    for (x, y, px) in img.enumerate_pixels() {
        if px.0 == color {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x + 1);
            y1 = y1.max(y + 1);
        }
    }
    (x0 != u32::MAX).then(|| BBox { x: x0 as f64, y: y0 as f64, w: (x1 - x0) as f64, h: (y1 - y0) as f64 })
}
