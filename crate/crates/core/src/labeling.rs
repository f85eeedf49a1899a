//! Label decisions for inpainted regions.
//!
//! An inpainted crop ends in exactly one of three outcomes: a new OOD box
//! refined by the detector, the original ID label kept because the generator
//! redrew an ID object, or the target annotation dropped for lack of evidence.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, CropAnchor, CropRegion};
use crate::model::{Annotation, BBox, CategoryRegistry};
use crate::svc::{self, join_prompt, DetectRequest, DetectionRecord, Detector, ServiceError, Thresholds};

/// Mapped boxes smaller than this (px²) are treated as detector noise.
pub const MIN_BOX_AREA: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    RefinedOod,
    IdRetained,
    Removed,
}

impl Scenario {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::RefinedOod => "refined_ood",
            Scenario::IdRetained => "id_retained",
            Scenario::Removed => "removed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDecision {
    pub scenario: Scenario,
    /// Image coordinates.
    pub final_bbox: Option<BBox>,
    pub final_category: Option<u32>,
    pub evidence: Vec<DetectionRecord>,
    pub prompt: String,
}

impl LabelDecision {
    fn removed(prompt: &str, evidence: Vec<DetectionRecord>) -> Self {
        Self { scenario: Scenario::Removed, final_bbox: None, final_category: None, evidence, prompt: prompt.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("labeling crop {crop_id}: {source}")]
pub struct LabelError {
    pub crop_id: String,
    #[source]
    pub source: ServiceError,
}

/// Result of the box-refinement query.
#[derive(Debug, Clone, PartialEq)]
pub enum Refinement {
    Ood(LabelDecision),
    NoDetection { evidence: Vec<DetectionRecord> },
}

/// Result of the combined-prompt retention query.
#[derive(Debug, Clone, PartialEq)]
pub enum Retention {
    Retained(LabelDecision),
    Inconclusive { evidence: Vec<DetectionRecord> },
}

/// One inpainted crop as seen by the labeler.
#[derive(Debug, Clone, Copy)]
pub struct CropContext<'a> {
    pub region: &'a CropRegion,
    pub image_width: u32,
    pub image_height: u32,
    pub crop_id: &'a str,
    /// PNG bytes of the inpainted crop.
    pub inpainted: &'a [u8],
}

pub struct Labeler<'a> {
    detector: &'a dyn Detector,
    registry: &'a CategoryRegistry,
    thresholds: Thresholds,
}

impl<'a> Labeler<'a> {
    pub fn new(detector: &'a dyn Detector, registry: &'a CategoryRegistry, thresholds: Thresholds) -> Self {
        Self { detector, registry, thresholds }
    }

    fn query(&self, ctx: &CropContext<'_>, prompt: &str, tag: &str) -> Result<Vec<DetectionRecord>, LabelError> {
        let req = DetectRequest {
            request_id: format!("{}/{tag}", ctx.crop_id),
            crop_id: Some(ctx.crop_id.to_string()),
            image_crop: ctx.inpainted.to_vec(),
            prompt: prompt.to_string(),
            box_threshold: self.thresholds.box_threshold,
            text_threshold: self.thresholds.text_threshold,
        };
        svc::detect(self.detector, &req).map_err(|source| LabelError { crop_id: ctx.crop_id.to_string(), source })
    }

    /// Asks the detector for `prompt` in the crop and turns the best box into an OOD label.
    ///
    /// Score ties prefer the larger overlap with `original_bbox`, or the
    /// larger box when there is no original.
    pub fn refine_ood_box(
        &self,
        ctx: &CropContext<'_>,
        prompt: &str,
        original_bbox: Option<&BBox>,
    ) -> Result<Refinement, LabelError> {
        let evidence = self.query(ctx, prompt, "refine")?;
        let (ox, oy) = (ctx.region.bbox.x, ctx.region.bbox.y);
        let tie_key = |r: &DetectionRecord| {
            let mapped = r.bbox.translate(ox, oy);
            match original_bbox {
                Some(b) => iou(&mapped, b),
                None => r.bbox.area(),
            }
        };
        let mut best: Option<&DetectionRecord> = None;
        for r in &evidence {
            best = match best {
                None => Some(r),
                Some(b) if r.score > b.score || (r.score == b.score && tie_key(r) > tie_key(b)) => Some(r),
                keep => keep,
            };
        }
        let Some(best) = best else {
            return Ok(Refinement::NoDetection { evidence });
        };
        let frame = ctx.region.bbox.clamp_to(ctx.image_width as f64, ctx.image_height as f64);
        let mapped = best.bbox.translate(ox, oy);
        let final_bbox = frame
            .and_then(|f| mapped.intersection(&f))
            .and_then(|b| b.quantized().ok())
            .filter(|b| b.area() >= MIN_BOX_AREA);
        match final_bbox {
            Some(b) => Ok(Refinement::Ood(LabelDecision {
                scenario: Scenario::RefinedOod,
                final_bbox: Some(b),
                final_category: Some(self.registry.ood_index()),
                evidence,
                prompt: prompt.into(),
            })),
            None => {
                tracing::debug!(crop_id = ctx.crop_id, "best detection degenerate after mapping");
                Ok(Refinement::NoDetection { evidence })
            }
        }
    }

    /// Queries `"<prompt> . <id label>"`; an ID class on top means the
    /// generator redrew an ID object and the original label stands.
    pub fn check_id_retention(
        &self,
        ctx: &CropContext<'_>,
        original: &Annotation,
        prompt: &str,
    ) -> Result<Retention, LabelError> {
        let id_label = self.registry.name(original.category_index).unwrap_or_default().to_string();
        let evidence = self.query(ctx, &join_prompt(&[prompt, id_label.as_str()]), "retain")?;
        let top_is_id = evidence.first().is_some_and(|top| {
            !top.label.trim().eq_ignore_ascii_case(prompt.trim()) && self.registry.id_index_of(&top.label).is_some()
        });
        if top_is_id {
            Ok(Retention::Retained(LabelDecision {
                scenario: Scenario::IdRetained,
                final_bbox: Some(original.bbox),
                final_category: Some(original.category_index),
                evidence,
                prompt: prompt.into(),
            }))
        } else {
            Ok(Retention::Inconclusive { evidence })
        }
    }

    /// Full decision for one crop. `original` is the replaced annotation and
    /// must be present exactly when the crop is anchored on an ID object.
    pub fn decide(
        &self,
        ctx: &CropContext<'_>,
        original: Option<&Annotation>,
        prompt: &str,
        keep_partial_id: bool,
    ) -> Result<LabelDecision, LabelError> {
        debug_assert_eq!(original.is_some(), ctx.region.anchor == CropAnchor::ReplacedIdObject);
        let mut evidence = Vec::new();
        if let Some(orig) = original {
            match self.check_id_retention(ctx, orig, prompt)? {
                Retention::Retained(d) if keep_partial_id => return Ok(d),
                Retention::Retained(d) => return Ok(LabelDecision::removed(prompt, d.evidence)),
                Retention::Inconclusive { evidence: e } => evidence = e,
            }
        }
        match self.refine_ood_box(ctx, prompt, original.map(|a| &a.bbox))? {
            Refinement::Ood(mut d) => {
                evidence.append(&mut d.evidence);
                d.evidence = evidence;
                Ok(d)
            }
            Refinement::NoDetection { evidence: mut e } => {
                evidence.append(&mut e);
                Ok(LabelDecision::removed(prompt, evidence))
            }
        }
    }
}
