//! Per-decision detector evidence written next to a generated manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::{CropAnchor, CropRegion};
use crate::labeling::{LabelDecision, Scenario};
use crate::manifest_io::{decode_json, write_atomic, ManifestError};
use crate::model::{AnnotationId, BBox, ImageId};
use crate::svc::DetectionRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceImage {
    pub image_id: ImageId,
    pub original_file: String,
    pub edited_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    /// The annotation the decision produced or changed; absent for discarded road placements.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation_id: Option<AnnotationId>,
    pub image_id: ImageId,
    pub scenario: Scenario,
    pub prompt: String,
    pub crop: BBox,
    pub anchor: CropAnchor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_annotation_id: Option<AnnotationId>,
    /// Name of the replaced ID class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_category: Option<String>,
    pub evidence: Vec<DetectionRecord>,
}

impl DecisionRecord {
    pub fn new(image_id: ImageId, region: &CropRegion, decision: &LabelDecision, original_category: Option<String>) -> Self {
        Self {
            annotation_id: None,
            image_id,
            scenario: decision.scenario,
            prompt: decision.prompt.clone(),
            crop: region.bbox,
            anchor: region.anchor,
            source_annotation_id: region.source_annotation_id,
            original_category,
            evidence: decision.evidence.clone(),
        }
    }

    /// Label of the highest-scoring record; the earliest wins ties.
    pub fn top_label(&self) -> Option<&str> {
        let mut best: Option<&DetectionRecord> = None;
        for r in &self.evidence {
            if best.is_none_or(|b| r.score > b.score) {
                best = Some(r);
            }
        }
        best.map(|r| r.label.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvidenceFile {
    pub images: Vec<EvidenceImage>,
    pub decisions: Vec<DecisionRecord>,
}

impl EvidenceFile {
    /// Decisions keyed by the annotation they produced. Later records win.
    pub fn by_annotation(&self) -> BTreeMap<AnnotationId, &DecisionRecord> {
        self.decisions.iter().filter_map(|d| d.annotation_id.map(|id| (id, d))).collect()
    }

    pub fn image(&self, id: ImageId) -> Option<&EvidenceImage> {
        self.images.iter().find(|i| i.image_id == id)
    }
}

pub fn load_evidence(path: impl AsRef<Path>) -> Result<EvidenceFile, ManifestError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io { path: path.into(), source })?;
    decode_json(&text, path)
}

pub fn save_evidence(evidence: &EvidenceFile, path: impl AsRef<Path>) -> Result<(), ManifestError> {
    let path = path.as_ref();
    save_json(evidence, path)
}

/// Pretty JSON with a trailing newline, written atomically.
pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<(), ManifestError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    write_atomic(path, text.as_bytes()).map_err(|source| ManifestError::Io { path: path.into(), source })
}
