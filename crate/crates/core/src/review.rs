//! Human triage of audit-flagged annotations, backed by an append-only journal.
//!
//! Every decision is applied to the annotation as it stood in the audited
//! manifest, so the latest decision for an annotation fully determines its
//! final state and replaying the journal reproduces the export exactly.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evidence::EvidenceFile;
use crate::model::{Annotation, AnnotationId, AuditState, CategoryRegistry, DatasetManifest, ImageId, Provenance};
use crate::svc::DetectionRecord;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Verdict {
    AcceptOod,
    ReassignId { class: String },
    Discard,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub annotation_id: AnnotationId,
    pub verdict: Verdict,
    #[serde(default)]
    pub reviewer: String,
    /// Milliseconds since the Unix epoch; filled in on submission when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
}

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("unknown annotation {0}")]
    UnknownAnnotation(AnnotationId),
    #[error("annotation {id} is {state:?}; only ambiguous or reviewed annotations accept decisions")]
    NotReviewable { id: AnnotationId, state: AuditState },
    #[error("{0:?} is not an ID class")]
    InvalidClass(String),
    #[error("journal {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("journal {path} line {line}: {message}")]
    Journal { path: PathBuf, line: usize, message: String },
    #[error("exported manifest is invalid: {0}")]
    Invalid(String),
}

/// Annotation as served to reviewers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationView {
    pub id: AnnotationId,
    pub image_id: ImageId,
    pub bbox: [f64; 4],
    pub category_id: u32,
    pub category_name: String,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    pub audit_state: AuditState,
}

impl AnnotationView {
    pub fn new(a: &Annotation, registry: &CategoryRegistry) -> Self {
        Self {
            id: a.id,
            image_id: a.image_id,
            bbox: a.bbox.to_array(),
            category_id: a.category_index,
            category_name: registry.name(a.category_index).unwrap_or_default().to_string(),
            provenance: a.provenance,
            prompt: a.prompt_used.clone(),
            audit_state: a.audit_state,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedItem {
    pub annotation: AnnotationView,
    /// Manifest-relative path of the unedited image, when known.
    pub original_image: Option<String>,
    pub edited_image: Option<String>,
    pub prompt: Option<String>,
    pub evidence: Vec<DetectionRecord>,
    /// Class of the ID object the inpainting replaced, if any.
    pub original_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedPage {
    pub items: Vec<FlaggedItem>,
    pub page: usize,
    pub size: usize,
    pub total: usize,
}

/// Outcome of `decision` applied to the audited annotation `base`.
pub fn resolve(base: &Annotation, registry: &CategoryRegistry, verdict: &Verdict) -> Result<Annotation, ReviewError> {
    let mut a = base.clone();
    a.audit_state = AuditState::HumanResolved;
    match verdict {
        Verdict::AcceptOod => {
            a.category_index = registry.ood_index();
            a.provenance = Provenance::InpaintedOod;
        }
        Verdict::ReassignId { class } => {
            a.category_index = registry.id_index_of(class).ok_or_else(|| ReviewError::InvalidClass(class.clone()))?;
            a.provenance = Provenance::InpaintedIdRetained;
        }
        Verdict::Discard => a.provenance = Provenance::Removed,
    }
    Ok(a)
}

fn reviewable(current: &Annotation) -> Result<(), ReviewError> {
    match current.audit_state {
        AuditState::Ambiguous | AuditState::HumanResolved => Ok(()),
        state => Err(ReviewError::NotReviewable { id: current.id, state }),
    }
}

fn apply(base: &DatasetManifest, current: &mut DatasetManifest, d: &ReviewDecision) -> Result<(), ReviewError> {
    let idx = current
        .annotations
        .iter()
        .position(|a| a.id == d.annotation_id)
        .ok_or(ReviewError::UnknownAnnotation(d.annotation_id))?;
    reviewable(&current.annotations[idx])?;
    let orig = base.annotation(d.annotation_id).ok_or(ReviewError::UnknownAnnotation(d.annotation_id))?;
    current.annotations[idx] = resolve(orig, &base.registry, &d.verdict)?;
    Ok(())
}

/// Applies `decisions` in order to the audited manifest.
pub fn replay(base: &DatasetManifest, decisions: &[ReviewDecision]) -> Result<DatasetManifest, ReviewError> {
    let mut current = base.clone();
    for d in decisions {
        apply(base, &mut current, d)?;
    }
    Ok(current)
}

/// Reads a journal. A torn final line (no trailing newline, unparsable) is
/// ignored; its byte offset is returned so the file can be truncated.
pub fn read_journal(path: &Path) -> Result<(Vec<ReviewDecision>, Option<u64>), ReviewError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), None)),
        Err(source) => return Err(ReviewError::Io { path: path.into(), source }),
    };
    let mut out = Vec::new();
    let mut offset = 0usize;
    let mut torn = None;
    for (n, line) in text.split_inclusive('\n').enumerate() {
        let complete = line.ends_with('\n');
        let body = line.trim();
        if !body.is_empty() {
            match serde_json::from_str::<ReviewDecision>(body) {
                Ok(d) => out.push(d),
                Err(_) if !complete => {
                    tracing::warn!(path = %path.display(), line = n + 1, "ignoring torn journal tail");
                    torn = Some(offset as u64);
                }
                Err(e) => {
                    return Err(ReviewError::Journal { path: path.into(), line: n + 1, message: e.to_string() });
                }
            }
        }
        offset += line.len();
    }
    Ok((out, torn))
}

fn now_millis() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// In-memory review state plus its journal. Callers serialize writes.
#[derive(Debug)]
pub struct ReviewStore {
    base: DatasetManifest,
    current: DatasetManifest,
    evidence: EvidenceFile,
    history: Vec<ReviewDecision>,
    journal: Option<PathBuf>,
    base_dir: PathBuf,
}

impl ReviewStore {
    /// Opens a store over an audited manifest, replaying any existing journal.
    pub fn open(
        base: DatasetManifest,
        evidence: EvidenceFile,
        journal: Option<PathBuf>,
        base_dir: PathBuf,
    ) -> Result<Self, ReviewError> {
        let mut history = Vec::new();
        if let Some(path) = &journal {
            let (decisions, torn) = read_journal(path)?;
            if let Some(len) = torn {
                let f = OpenOptions::new().write(true).open(path).map_err(|source| ReviewError::Io { path: path.clone(), source })?;
                f.set_len(len).map_err(|source| ReviewError::Io { path: path.clone(), source })?;
            }
            history = decisions;
        }
        let current = replay(&base, &history)?;
        Ok(Self { base, current, evidence, history, journal, base_dir })
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn current(&self) -> &DatasetManifest {
        &self.current
    }

    pub fn history(&self) -> &[ReviewDecision] {
        &self.history
    }

    fn item_for(&self, a: &Annotation) -> FlaggedItem {
        let decision = self.evidence.by_annotation().get(&a.id).map(|d| (*d).clone());
        let files = self.evidence.image(a.image_id);
        let manifest_file = self.current.image(a.image_id).map(|im| im.file_name.clone());
        FlaggedItem {
            annotation: AnnotationView::new(a, &self.current.registry),
            original_image: files.map(|f| f.original_file.clone()).or_else(|| manifest_file.clone()),
            edited_image: files.map(|f| f.edited_file.clone()).or(manifest_file),
            prompt: a.prompt_used.clone(),
            evidence: decision.as_ref().map(|d| d.evidence.clone()).unwrap_or_default(),
            original_label: decision.and_then(|d| d.original_category),
        }
    }

    /// Ambiguous annotations ordered by id; `page` is zero-based.
    pub fn list_flagged(&self, page: usize, size: usize) -> FlaggedPage {
        let mut flagged: Vec<&Annotation> =
            self.current.annotations.iter().filter(|a| a.audit_state == AuditState::Ambiguous).collect();
        flagged.sort_by_key(|a| a.id);
        let size = size.max(1);
        let items = flagged.iter().skip(page.saturating_mul(size)).take(size).map(|a| self.item_for(a)).collect();
        FlaggedPage { items, page, size, total: flagged.len() }
    }

    pub fn item(&self, id: AnnotationId) -> Option<FlaggedItem> {
        self.current.annotation(id).map(|a| self.item_for(a))
    }

    /// Validates, journals, then applies one decision.
    pub fn submit(&mut self, mut d: ReviewDecision) -> Result<Annotation, ReviewError> {
        let mut next = self.current.clone();
        apply(&self.base, &mut next, &d)?;
        d.timestamp.get_or_insert_with(now_millis);
        if let Some(path) = &self.journal {
            let mut line = serde_json::to_string(&d).expect("serializable decision");
            line.push('\n');
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|source| ReviewError::Io { path: path.clone(), source })?;
            f.write_all(line.as_bytes())
                .and_then(|_| f.sync_data())
                .map_err(|source| ReviewError::Io { path: path.clone(), source })?;
        }
        self.current = next;
        self.history.push(d.clone());
        Ok(self.current.annotation(d.annotation_id).expect("just applied").clone())
    }

    /// The manifest reflecting every final decision.
    pub fn export(&self) -> Result<DatasetManifest, ReviewError> {
        self.current.validate().map_err(|v| {
            ReviewError::Invalid(v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))
        })?;
        Ok(self.current.clone())
    }
}
