//! Reading and writing the manifest JSON format.
//!
//! Input is either a manifest produced by this toolkit or a plain COCO
//! detection file; missing provenance/audit fields are filled with
//! `original`/`unchecked`. Output is byte-stable: keys are sorted and box
//! coordinates are always written with two decimals.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use thiserror::Error;

use crate::model::{
    quantize, Annotation, AnnotationId, AuditState, BBox, CategoryRegistry, DatasetManifest, ImageId,
    ImageRecord, ManifestMeta, Provenance, Variant, Violation, OOD_CLASS_NAME,
};

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON in {path} at line {line}, column {column}: {message}")]
    Parse { path: PathBuf, line: usize, column: usize, message: String },
    #[error("schema error in {path} at `{field}`: {message}")]
    Schema { path: PathBuf, field: String, message: String },
    #[error("{} invariant violation(s): {}", .0.len(), render_violations(.0))]
    Invariant(Vec<Violation>),
}

fn render_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl ManifestError {
    /// Failures caused by the content of the input rather than the environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, ManifestError::Io { .. })
    }
}

/// Load-time options for upgrading foreign datasets.
#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Category names (case-insensitive) whose annotations are dropped at load,
    /// e.g. `["barrier", "traffic_cone"]` for NuImages sources.
    pub drop_classes: Vec<String>,
}

#[derive(Deserialize)]
struct ManifestIn {
    images: Vec<ImageIn>,
    annotations: Vec<AnnotationIn>,
    #[serde(default)]
    categories: Vec<CategoryIn>,
    #[serde(default)]
    meta: Option<MetaIn>,
}

#[derive(Deserialize)]
struct ImageIn {
    id: u64,
    width: u32,
    height: u32,
    file_name: String,
    #[serde(default)]
    road_mask: Option<String>,
}

#[derive(Deserialize)]
struct AnnotationIn {
    id: u64,
    image_id: u64,
    bbox: [f64; 4],
    category_id: u64,
    #[serde(default)]
    provenance: Option<Provenance>,
    #[serde(default)]
    prompt: Option<String>,
    #[serde(default)]
    audit_state: Option<AuditState>,
    #[serde(default)]
    iscrowd: u8,
}

#[derive(Deserialize)]
struct CategoryIn {
    id: u64,
    name: String,
}

#[derive(Deserialize)]
struct MetaIn {
    #[serde(default)]
    variant: Option<Variant>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    tool_version: Option<String>,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, ManifestError> {
    load_manifest_with(path, &LoadOptions::default())
}

pub fn load_manifest_with(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<DatasetManifest, ManifestError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io { path: path.into(), source })?;
    parse_manifest(&text, path, opts)
}

pub fn parse_manifest(text: &str, path: &Path, opts: &LoadOptions) -> Result<DatasetManifest, ManifestError> {
    let raw: ManifestIn = decode_json(text, path)?;
    upgrade(raw, opts)
}

pub(crate) fn decode_json<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> Result<T, ManifestError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|err| {
        let field = err.path().to_string();
        let inner = err.into_inner();
        match inner.classify() {
            serde_json::error::Category::Data => {
                ManifestError::Schema { path: path.into(), field, message: inner.to_string() }
            }
            _ => ManifestError::Parse {
                path: path.into(),
                line: inner.line(),
                column: inner.column(),
                message: inner.to_string(),
            },
        }
    })
}

fn upgrade(raw: ManifestIn, opts: &LoadOptions) -> Result<DatasetManifest, ManifestError> {
    let mut violations = Vec::new();
    let dropped: Vec<String> = opts.drop_classes.iter().map(|c| c.trim().to_lowercase()).collect();

    // Registry: ID classes in category-id order, OOD (if listed) must come last.
    let mut cats = raw.categories;
    cats.sort_by_key(|c| c.id);
    let mut id_map: HashMap<u64, Option<u32>> = HashMap::new();
    let mut kept_names = Vec::new();
    let mut dropped_names = Vec::new();
    let mut ood_source_id = None;
    for c in &cats {
        if c.name.trim().eq_ignore_ascii_case(OOD_CLASS_NAME) {
            ood_source_id = Some(c.id);
        } else if dropped.contains(&c.name.trim().to_lowercase()) {
            id_map.insert(c.id, None);
            dropped_names.push(c.name.clone());
        } else {
            if ood_source_id.is_some() {
                violations.push(Violation {
                    record: format!("category {}", c.id),
                    message: format!("{OOD_CLASS_NAME} must carry the largest category id"),
                });
            }
            kept_names.push(c.name.clone());
            id_map.insert(c.id, Some(kept_names.len() as u32));
        }
    }
    let registry = if cats.is_empty() {
        CategoryRegistry::default()
    } else {
        CategoryRegistry::new(kept_names.clone()).map_err(|e| {
            ManifestError::Invariant(vec![Violation { record: "categories".into(), message: e.to_string() }])
        })?
    };
    if cats.is_empty() {
        for (idx, _) in registry.categories() {
            id_map.insert(idx as u64, Some(idx));
        }
    } else if let Some(src) = ood_source_id {
        id_map.insert(src, Some(registry.ood_index()));
    }
    let remapped: BTreeMap<String, serde_json::Value> = id_map
        .iter()
        .filter_map(|(old, new)| new.filter(|n| *n as u64 != *old).map(|n| (old.to_string(), n.into())))
        .collect();

    let images: Vec<ImageRecord> = raw
        .images
        .into_iter()
        .map(|im| ImageRecord {
            id: ImageId(im.id),
            width: im.width,
            height: im.height,
            file_name: im.file_name,
            road_mask: im.road_mask,
        })
        .collect();
    let dims: HashMap<ImageId, (u32, u32)> = images.iter().map(|im| (im.id, (im.width, im.height))).collect();

    let mut annotations = Vec::with_capacity(raw.annotations.len());
    let mut dropped_count = 0usize;
    let mut crowd_count = 0usize;
    for a in raw.annotations {
        let record = format!("annotation {}", a.id);
        if a.iscrowd != 0 {
            crowd_count += 1;
            continue;
        }
        let category_index = match id_map.get(&a.category_id) {
            Some(Some(idx)) => *idx,
            Some(None) => {
                dropped_count += 1;
                continue;
            }
            None => {
                violations.push(Violation { record, message: format!("unknown category_id {}", a.category_id) });
                continue;
            }
        };
        let [x, y, w, h] = a.bbox;
        let bbox = match BBox::new(x, y, w, h) {
            Ok(b) => b,
            Err(e) => {
                violations.push(Violation { record, message: e.to_string() });
                continue;
            }
        };
        let Some(&(iw, ih)) = dims.get(&ImageId(a.image_id)) else {
            violations.push(Violation { record, message: format!("references unknown image_id {}", a.image_id) });
            continue;
        };
        let clamped = bbox
            .clamp_to(iw as f64, ih as f64)
            .and_then(|b| b.quantized().ok())
            .filter(|b| b.w > 0.0 && b.h > 0.0);
        let Some(bbox) = clamped else {
            violations.push(Violation { record, message: "bbox has no area inside the image".into() });
            continue;
        };
        annotations.push(Annotation {
            id: AnnotationId(a.id),
            image_id: ImageId(a.image_id),
            bbox,
            category_index,
            provenance: a.provenance.unwrap_or(Provenance::Original),
            prompt_used: a.prompt,
            audit_state: a.audit_state.unwrap_or(AuditState::Unchecked),
        });
    }

    let mut meta = match raw.meta {
        Some(m) => ManifestMeta {
            variant: m.variant.unwrap_or(Variant::Original),
            seed: m.seed.unwrap_or(0),
            tool_version: m.tool_version.unwrap_or_else(|| crate::TOOL_VERSION.to_string()),
            extra: m.extra,
        },
        None => ManifestMeta::default(),
    };
    if !dropped_names.is_empty() {
        meta.extra.insert(
            "dropped_categories".into(),
            serde_json::json!({ "classes": dropped_names, "annotations": dropped_count }),
        );
    }
    if crowd_count > 0 {
        meta.extra.insert("dropped_crowd_annotations".into(), crowd_count.into());
    }
    if !remapped.is_empty() {
        meta.extra.insert("category_id_remap".into(), serde_json::Value::Object(remapped.into_iter().collect()));
    }

    let manifest = DatasetManifest { images, annotations, registry, meta };
    violations.extend(manifest.violations());
    if violations.is_empty() {
        Ok(manifest)
    } else {
        Err(ManifestError::Invariant(violations))
    }
}

/// Coordinate written with exactly two decimals.
struct Fixed2(f64);

impl Serialize for Fixed2 {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let raw = RawValue::from_string(format!("{:.2}", quantize(self.0))).map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

// Field order below is alphabetical so derived output has sorted keys.
#[derive(Serialize)]
struct ManifestOut<'a> {
    annotations: Vec<AnnotationOut<'a>>,
    categories: Vec<CategoryOut<'a>>,
    images: Vec<ImageOut<'a>>,
    meta: BTreeMap<&'a str, serde_json::Value>,
}

#[derive(Serialize)]
struct AnnotationOut<'a> {
    area: Fixed2,
    audit_state: AuditState,
    bbox: [Fixed2; 4],
    category_id: u32,
    id: u64,
    image_id: u64,
    iscrowd: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    prompt: Option<&'a str>,
    provenance: Provenance,
}

#[derive(Serialize)]
struct CategoryOut<'a> {
    id: u32,
    name: &'a str,
}

#[derive(Serialize)]
struct ImageOut<'a> {
    file_name: &'a str,
    height: u32,
    id: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    road_mask: Option<&'a str>,
    width: u32,
}

/// Serializes a manifest to its canonical byte form.
pub fn manifest_to_string(manifest: &DatasetManifest) -> Result<String, ManifestError> {
    manifest.validate().map_err(ManifestError::Invariant)?;
    let mut meta: BTreeMap<&str, serde_json::Value> =
        manifest.meta.extra.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
    meta.insert("variant", manifest.meta.variant.as_str().into());
    meta.insert("seed", manifest.meta.seed.into());
    meta.insert("tool_version", manifest.meta.tool_version.clone().into());
    let out = ManifestOut {
        annotations: manifest
            .annotations
            .iter()
            .map(|a| AnnotationOut {
                area: Fixed2(a.bbox.area()),
                audit_state: a.audit_state,
                bbox: a.bbox.to_array().map(Fixed2),
                category_id: a.category_index,
                id: a.id.0,
                image_id: a.image_id.0,
                iscrowd: 0,
                prompt: a.prompt_used.as_deref(),
                provenance: a.provenance,
            })
            .collect(),
        categories: manifest.registry.categories().map(|(id, name)| CategoryOut { id, name }).collect(),
        images: manifest
            .images
            .iter()
            .map(|im| ImageOut {
                file_name: &im.file_name,
                height: im.height,
                id: im.id.0,
                road_mask: im.road_mask.as_deref(),
                width: im.width,
            })
            .collect(),
        meta,
    };
    let mut text = serde_json::to_string_pretty(&out).expect("manifest serialization is infallible");
    text.push('\n');
    Ok(text)
}

pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<(), ManifestError> {
    let text = manifest_to_string(manifest)?;
    write_atomic(path.as_ref(), text.as_bytes()).map_err(|source| ManifestError::Io { path: path.as_ref().into(), source })
}

/// Writes through a sibling temp file and renames, so readers never see a torn file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp~");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Resolves a manifest-relative path against the manifest's directory.
pub fn resolve_path(base_dir: &Path, file: &str) -> PathBuf {
    let p = Path::new(file);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_dir.join(p)
    }
}
