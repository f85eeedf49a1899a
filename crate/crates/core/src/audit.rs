//! Prompt-versus-prediction audit of inpainted OOD annotations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::evidence::EvidenceFile;
use crate::model::{AuditState, DatasetManifest, Provenance};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AuditReport {
    /// Inpainted OOD annotations that were compared against their evidence.
    pub total_inpaintings: usize,
    pub matched: usize,
    pub ambiguous: usize,
    /// Ambiguous annotations whose predicted label is an ID class.
    pub mislabeled_as_id: usize,
    pub mislabel_histogram: BTreeMap<String, usize>,
    /// Annotations with no stored detections; left unchanged.
    pub missing_evidence: usize,
    /// Annotations already settled by a reviewer; left unchanged.
    pub human_resolved: usize,
}

fn tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

/// True when every word of the prompt appears among the prediction's words.
pub fn label_matches(prompt: &str, predicted: &str) -> bool {
    let predicted = tokens(predicted);
    let prompt = tokens(prompt);
    !prompt.is_empty() && prompt.iter().all(|t| predicted.contains(t))
}

/// Compares each inpainted OOD annotation's top evidence label with its prompt.
/// Returns the manifest with updated audit states and the tally.
pub fn audit_manifest(manifest: &DatasetManifest, evidence: &EvidenceFile) -> (DatasetManifest, AuditReport) {
    let by_ann = evidence.by_annotation();
    let mut out = manifest.clone();
    let mut report = AuditReport::default();
    for a in out.annotations.iter_mut().filter(|a| a.provenance == Provenance::InpaintedOod) {
        if a.audit_state == AuditState::HumanResolved {
            report.human_resolved += 1;
            continue;
        }
        let predicted = by_ann.get(&a.id).and_then(|d| d.top_label());
        let (Some(predicted), Some(prompt)) = (predicted, a.prompt_used.as_deref()) else {
            tracing::warn!(annotation_id = %a.id, "no stored evidence");
            report.missing_evidence += 1;
            continue;
        };
        report.total_inpaintings += 1;
        if label_matches(prompt, predicted) {
            report.matched += 1;
            a.audit_state = AuditState::Confirmed;
        } else {
            report.ambiguous += 1;
            a.audit_state = AuditState::Ambiguous;
            if let Some(idx) = manifest.registry.id_index_of(predicted) {
                report.mislabeled_as_id += 1;
                let name = manifest.registry.name(idx).unwrap_or(predicted).to_string();
                *report.mislabel_histogram.entry(name).or_default() += 1;
            }
        }
    }
    (out, report)
}
