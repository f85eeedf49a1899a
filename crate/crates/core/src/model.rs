//! Dataset domain types: boxes, the ID/OOD category registry, annotations and
//! the manifest that ties them together.
//!
//! The label algebra is simple: a registry of `n` in-distribution classes
//! occupies category indices `1..=n`, and the out-of-distribution bucket is
//! always index `n + 1`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of the out-of-distribution bucket in every registry.
pub const OOD_CLASS_NAME: &str = "OOD";

/// ID classes used when a manifest carries no category list.
pub const DEFAULT_ID_CLASSES: [&str; 8] = [
    "bicycle",
    "bus",
    "car",
    "construction",
    "motorcycle",
    "trailer",
    "truck",
    "pedestrian",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnnotationId(pub u64);

impl fmt::Display for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl fmt::Display for AnnotationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoxError {
    #[error("box has non-finite coordinates {0:?}")]
    NonFinite([f64; 4]),
    #[error("box must have positive width and height, got w={w} h={h}")]
    Empty { w: f64, h: f64 },
}

/// Axis-aligned box in absolute pixels, `[x, y, w, h]` with `(x, y)` the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, BoxError> {
        let raw = [x, y, w, h];
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(BoxError::NonFinite(raw));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(BoxError::Empty { w, h });
        }
        Ok(Self { x, y, w, h })
    }

    /// Builds a box from corner coordinates `(x0, y0)`–`(x1, y1)`.
    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, BoxError> {
        Self::new(x0, y0, x1 - x0, y1 - y0)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Overlap with `other`, or `None` when the boxes share no positive area.
    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        BBox::from_corners(x0, y0, x1, y1).ok()
    }

    /// Clips the box to `[0, width] x [0, height]`.
    pub fn clamp_to(&self, width: f64, height: f64) -> Option<BBox> {
        let frame = BBox { x: 0.0, y: 0.0, w: width, h: height };
        self.intersection(&frame)
    }

    /// True when `other` lies inside `self`, allowing `tol` pixels of slack.
    pub fn contains(&self, other: &BBox, tol: f64) -> bool {
        other.x >= self.x - tol
            && other.y >= self.y - tol
            && other.right() <= self.right() + tol
            && other.bottom() <= self.bottom() + tol
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox { x: self.x + dx, y: self.y + dy, ..*self }
    }

    /// Snaps the corners to the 0.01 px grid used by the manifest format.
    pub fn quantized(&self) -> Result<BBox, BoxError> {
        let x0 = quantize(self.x);
        let y0 = quantize(self.y);
        let x1 = quantize(self.right());
        let y1 = quantize(self.bottom());
        BBox::new(x0, y0, quantize(x1 - x0), quantize(y1 - y0))
    }
}

/// Rounds to two decimals, the precision coordinates are stored at.
pub fn quantize(v: f64) -> f64 {
    let q = (v * 100.0).round() / 100.0;
    if q == 0.0 {
        0.0
    } else {
        q
    }
}

impl Serialize for BBox {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [x, y, w, h] = <[f64; 4]>::deserialize(d)?;
        BBox::new(x, y, w, h).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegistryError {
    #[error("class name at position {0} is empty")]
    EmptyName(usize),
    #[error("duplicate class name {0:?}")]
    Duplicate(String),
    #[error("an ID class may not be named {OOD_CLASS_NAME:?}")]
    ReservedName,
}

/// Ordered ID classes plus the implicit OOD bucket at index `n + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryRegistry {
    id_classes: Vec<String>,
}

impl CategoryRegistry {
    pub fn new<I, S>(classes: I) -> Result<Self, RegistryError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let id_classes: Vec<String> = classes.into_iter().map(Into::into).collect();
        let mut seen = HashSet::new();
        for (i, name) in id_classes.iter().enumerate() {
            let key = name.trim().to_lowercase();
            if key.is_empty() {
                return Err(RegistryError::EmptyName(i));
            }
            if key == OOD_CLASS_NAME.to_lowercase() {
                return Err(RegistryError::ReservedName);
            }
            if !seen.insert(key) {
                return Err(RegistryError::Duplicate(name.clone()));
            }
        }
        Ok(Self { id_classes })
    }

    /// Number of ID classes, `n`.
    pub fn n(&self) -> u32 {
        self.id_classes.len() as u32
    }

    pub fn ood_index(&self) -> u32 {
        self.n() + 1
    }

    pub fn id_classes(&self) -> &[String] {
        &self.id_classes
    }

    pub fn is_valid_index(&self, index: u32) -> bool {
        (1..=self.ood_index()).contains(&index)
    }

    pub fn is_id_index(&self, index: u32) -> bool {
        (1..=self.n()).contains(&index)
    }

    pub fn name(&self, index: u32) -> Option<&str> {
        if index == self.ood_index() {
            Some(OOD_CLASS_NAME)
        } else if self.is_id_index(index) {
            Some(&self.id_classes[index as usize - 1])
        } else {
            None
        }
    }

    /// Case-insensitive lookup of an ID class by name.
    pub fn id_index_of(&self, name: &str) -> Option<u32> {
        let key = name.trim().to_lowercase();
        self.id_classes
            .iter()
            .position(|c| c.trim().to_lowercase() == key)
            .map(|p| p as u32 + 1)
    }

    /// Every category as `(index, name)`, OOD last.
    pub fn categories(&self) -> impl Iterator<Item = (u32, &str)> {
        self.id_classes
            .iter()
            .enumerate()
            .map(|(i, c)| (i as u32 + 1, c.as_str()))
            .chain(std::iter::once((self.ood_index(), OOD_CLASS_NAME)))
    }
}

impl Default for CategoryRegistry {
    fn default() -> Self {
        Self { id_classes: DEFAULT_ID_CLASSES.iter().map(|s| s.to_string()).collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Original,
    InpaintedOod,
    InpaintedIdRetained,
    Removed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditState {
    Unchecked,
    Confirmed,
    Ambiguous,
    HumanResolved,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub id: AnnotationId,
    pub image_id: ImageId,
    pub bbox: BBox,
    pub category_index: u32,
    pub provenance: Provenance,
    pub prompt_used: Option<String>,
    pub audit_state: AuditState,
}

impl Annotation {
    /// Plain ground-truth annotation as found in an unmodified dataset.
    pub fn original(id: u64, image_id: u64, bbox: BBox, category_index: u32) -> Self {
        Self {
            id: AnnotationId(id),
            image_id: ImageId(image_id),
            bbox,
            category_index,
            provenance: Provenance::Original,
            prompt_used: None,
            audit_state: AuditState::Unchecked,
        }
    }

    pub fn is_removed(&self) -> bool {
        self.provenance == Provenance::Removed
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub id: ImageId,
    pub width: u32,
    pub height: u32,
    pub file_name: String,
    pub road_mask: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Original,
    V1,
    V2,
    V3,
    V4,
    V5,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown dataset variant {0:?} (expected one of V1..V5 or original)")]
pub struct UnknownVariant(pub String);

impl Variant {
    pub const GENERATED: [Variant; 5] = [Variant::V1, Variant::V2, Variant::V3, Variant::V4, Variant::V5];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Original => "original",
            Variant::V1 => "V1",
            Variant::V2 => "V2",
            Variant::V3 => "V3",
            Variant::V4 => "V4",
            Variant::V5 => "V5",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = UnknownVariant;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "original" | "Original" => Ok(Variant::Original),
            "V1" | "v1" => Ok(Variant::V1),
            "V2" | "v2" => Ok(Variant::V2),
            "V3" | "v3" => Ok(Variant::V3),
            "V4" | "v4" => Ok(Variant::V4),
            "V5" | "v5" => Ok(Variant::V5),
            other => Err(UnknownVariant(other.to_string())),
        }
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Manifest-level metadata. `extra` carries the resolved run configuration and
/// any load-time notes; it is written with sorted keys.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestMeta {
    pub variant: Variant,
    pub seed: u64,
    pub tool_version: String,
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl Default for ManifestMeta {
    fn default() -> Self {
        Self {
            variant: Variant::Original,
            seed: 0,
            tool_version: crate::TOOL_VERSION.to_string(),
            extra: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub images: Vec<ImageRecord>,
    pub annotations: Vec<Annotation>,
    pub registry: CategoryRegistry,
    pub meta: ManifestMeta,
}

/// One broken invariant, naming the record it was found on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub record: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.record, self.message)
    }
}

const BOUNDS_TOLERANCE: f64 = 1e-6;

impl DatasetManifest {
    pub fn new(images: Vec<ImageRecord>, annotations: Vec<Annotation>, registry: CategoryRegistry) -> Self {
        Self { images, annotations, registry, meta: ManifestMeta::default() }
    }

    pub fn image(&self, id: ImageId) -> Option<&ImageRecord> {
        self.images.iter().find(|im| im.id == id)
    }

    pub fn annotation(&self, id: AnnotationId) -> Option<&Annotation> {
        self.annotations.iter().find(|a| a.id == id)
    }

    pub fn annotation_mut(&mut self, id: AnnotationId) -> Option<&mut Annotation> {
        self.annotations.iter_mut().find(|a| a.id == id)
    }

    /// Non-removed annotations carrying an ID class.
    pub fn id_annotations(&self) -> impl Iterator<Item = &Annotation> {
        self.annotations
            .iter()
            .filter(|a| !a.is_removed() && self.registry.is_id_index(a.category_index))
    }

    /// Non-removed annotations in the OOD bucket.
    pub fn ood_annotations(&self) -> impl Iterator<Item = &Annotation> {
        let ood = self.registry.ood_index();
        self.annotations.iter().filter(move |a| !a.is_removed() && a.category_index == ood)
    }

    pub fn next_annotation_id(&self) -> u64 {
        self.annotations.iter().map(|a| a.id.0).max().map_or(1, |m| m + 1)
    }

    /// Checks every type invariant and returns all violations found.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut image_ids = BTreeMap::new();
        for im in &self.images {
            let record = format!("image {}", im.id);
            if im.width < 1 || im.height < 1 {
                out.push(Violation { record: record.clone(), message: "width and height must be >= 1".into() });
            }
            if im.file_name.is_empty() {
                out.push(Violation { record: record.clone(), message: "file_name is empty".into() });
            }
            if image_ids.insert(im.id, im).is_some() {
                out.push(Violation { record, message: "duplicate image id".into() });
            }
        }
        let ood = self.registry.ood_index();
        let mut ann_ids = HashSet::new();
        for a in &self.annotations {
            let record = format!("annotation {}", a.id);
            let mut push = |message: String| out.push(Violation { record: record.clone(), message });
            if !ann_ids.insert(a.id) {
                push("duplicate annotation id".into());
            }
            if let Err(e) = BBox::new(a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h) {
                push(e.to_string());
            }
            match image_ids.get(&a.image_id) {
                None => push(format!("references unknown image_id {}", a.image_id)),
                Some(im) => {
                    let frame = BBox { x: 0.0, y: 0.0, w: im.width as f64, h: im.height as f64 };
                    if !frame.contains(&a.bbox, BOUNDS_TOLERANCE) {
                        push(format!(
                            "bbox {:?} exceeds image bounds {}x{}",
                            a.bbox.to_array(),
                            im.width,
                            im.height
                        ));
                    }
                }
            }
            if !self.registry.is_valid_index(a.category_index) {
                push(format!("category_id {} outside [1, {}]", a.category_index, ood));
            }
            if a.provenance == Provenance::InpaintedOod {
                if a.category_index != ood {
                    push(format!("inpainted_ood annotation must have category_id {ood}"));
                }
                if a.prompt_used.as_deref().is_none_or(|p| p.trim().is_empty()) {
                    push("inpainted_ood annotation lacks a prompt".into());
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }
}
