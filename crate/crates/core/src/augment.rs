//! Dataset augmentation: choose images, plan regions, inpaint, label, and
//! assemble the output manifest.
//!
//! Each image gets its own RNG stream derived from `(seed, image_id)`, so the
//! worker count and scheduling order never change the result. Output
//! annotation ids and file contents are assigned in a single-threaded
//! reduction over images in manifest order.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::evidence::{save_evidence, save_json, DecisionRecord, EvidenceFile, EvidenceImage};
use crate::geometry::{crop_for_target, min_distance_ok, sample_road_region, CropRegion, GeometryError, RoadMask};
use crate::imaging;
use crate::labeling::{CropContext, Labeler, Scenario};
use crate::manifest_io::{resolve_path, save_manifest, write_atomic, ManifestError};
use crate::model::{
    Annotation, AnnotationId, AuditState, BBox, CategoryRegistry, DatasetManifest, ImageId, ImageRecord, Provenance,
};
use crate::policy::{PolicyError, VariantPolicy};
use crate::prompts::PromptCatalog;
use crate::svc::{self, Detector, InpaintRequest, Inpainter, Thresholds};
use crate::{stable_hash, TOOL_VERSION};

/// Directory under the output root that receives edited images.
pub const EDITED_DIR: &str = "images";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("invalid policy: {0}")]
    Policy(#[from] PolicyError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Clone, Copy)]
pub struct Services<'a> {
    pub inpainter: &'a dyn Inpainter,
    pub detector: &'a dyn Detector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ScenarioCounts {
    pub refined_ood: usize,
    pub id_retained: usize,
    pub removed: usize,
}

impl ScenarioCounts {
    pub fn add(&mut self, s: Scenario) {
        match s {
            Scenario::RefinedOod => self.refined_ood += 1,
            Scenario::IdRetained => self.id_retained += 1,
            Scenario::Removed => self.removed += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.refined_ood + self.id_retained + self.removed
    }

    fn merge(&mut self, o: &ScenarioCounts) {
        self.refined_ood += o.refined_ood;
        self.id_retained += o.id_retained;
        self.removed += o.removed;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AugmentationReport {
    pub images_processed: usize,
    /// Images drawn for augmentation.
    pub images_selected: usize,
    /// Images whose annotations changed.
    pub images_augmented: usize,
    pub decisions: usize,
    pub scenarios: ScenarioCounts,
    /// Selected images left unchanged, plus draws lost to a lack of eligible images.
    pub placement_failures: usize,
    /// Road placements that found no feasible region.
    pub no_placement_regions: usize,
    /// Road inpaintings with no detection, discarded without editing the image.
    pub discarded_road_inpaintings: usize,
    pub service_errors: usize,
    /// Selected images that could not be read or written.
    pub image_errors: usize,
    /// How far the eligible pool fell short of the requested count.
    pub eligible_shortfall: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageStats {
    pub scenarios: ScenarioCounts,
    pub no_placement_regions: usize,
    pub discarded_road_inpaintings: usize,
    pub service_errors: usize,
}

/// Result of augmenting one image.
#[derive(Debug, Clone, Default)]
pub struct ImageOutcome {
    /// The image's input annotations, in input order, with updated provenance.
    pub annotations: Vec<Annotation>,
    /// New OOD annotations; ids are assigned during assembly.
    pub new_annotations: Vec<Annotation>,
    /// Decisions in region order, with the index of the new annotation they created.
    pub decisions: Vec<(DecisionRecord, Option<usize>)>,
    /// The edited image, when any region was pasted back.
    pub edited: Option<RgbImage>,
    pub stats: ImageStats,
}

impl ImageOutcome {
    fn passthrough(annotations: Vec<Annotation>) -> Self {
        Self { annotations, ..Default::default() }
    }

    pub fn is_augmented(&self) -> bool {
        !self.new_annotations.is_empty() || self.annotations.iter().any(|a| a.provenance != Provenance::Original)
    }
}

/// Everything an image worker needs besides the image itself.
pub struct AugmentContext<'a> {
    pub policy: &'a VariantPolicy,
    pub registry: &'a CategoryRegistry,
    pub catalog: &'a PromptCatalog,
    pub services: Services<'a>,
    pub thresholds: Thresholds,
}

/// Plans up to `k` regions for an image, `k` drawn from the policy's count distribution.
///
/// Each slot tries one kind of target (a coin flip when both are enabled)
/// and falls back to the other. Replacement targets are visited in a random
/// order without replacement; road placement stops after its first failure.
fn plan_regions<R: Rng + ?Sized>(
    ctx: &AugmentContext<'_>,
    image: &ImageRecord,
    annotations: &[Annotation],
    mask: Option<&RoadMask>,
    stats: &mut ImageStats,
    rng: &mut R,
) -> Vec<(CropRegion, Option<usize>)> {
    let policy = ctx.policy;
    let k = policy.per_image_count_dist.sample(rng);
    let replaceable = policy.replaceable_indices(ctx.registry);
    let mut candidates: Vec<usize> = if policy.replace_id_instances {
        (0..annotations.len())
            .filter(|&i| {
                annotations[i].provenance == Provenance::Original && replaceable.contains(&annotations[i].category_index)
            })
            .collect()
    } else {
        Vec::new()
    };
    candidates.shuffle(rng);
    let mut candidates = candidates.into_iter();
    let existing: Vec<BBox> = annotations.iter().filter(|a| !a.is_removed()).map(|a| a.bbox).collect();
    let mut road_open = policy.road_region_inpaintings && mask.is_some();

    let mut planned: Vec<(CropRegion, Option<usize>)> = Vec::new();
    let mut accepted: Vec<CropRegion> = Vec::new();
    for _ in 0..k {
        let road_first = if policy.replace_id_instances && road_open { rng.random_bool(0.5) } else { road_open };
        let mut placed = false;
        for road in [road_first, !road_first] {
            if road {
                if !road_open {
                    continue;
                }
                let mask = mask.expect("road placement requires a mask");
                match sample_road_region(image, mask, &existing, &accepted, policy.road_crop_side, rng) {
                    Ok(region) => {
                        accepted.push(region.clone());
                        planned.push((region, None));
                        placed = true;
                    }
                    Err(e) => {
                        if matches!(e, GeometryError::NoPlacement) {
                            stats.no_placement_regions += 1;
                        } else {
                            tracing::warn!(image_id = %image.id, error = %e, "road placement unavailable");
                        }
                        road_open = false;
                    }
                }
            } else {
                for i in candidates.by_ref() {
                    let Ok(mut region) = crop_for_target(&annotations[i].bbox, image) else {
                        continue;
                    };
                    region.source_annotation_id = Some(annotations[i].id);
                    if min_distance_ok(&accepted, &region) {
                        accepted.push(region.clone());
                        planned.push((region, Some(i)));
                        placed = true;
                        break;
                    }
                }
            }
            if placed {
                break;
            }
        }
        if !placed {
            break;
        }
    }
    planned
}

/// Augments one image in memory. `rng` must be the image's own stream.
pub fn augment_image<R: Rng + ?Sized>(
    ctx: &AugmentContext<'_>,
    image: &ImageRecord,
    annotations: &[Annotation],
    pixels: RgbImage,
    mask: Option<&RoadMask>,
    rng: &mut R,
) -> ImageOutcome {
    let mut out = ImageOutcome::passthrough(annotations.to_vec());
    let planned = plan_regions(ctx, image, annotations, mask, &mut out.stats, rng);
    let labeler = Labeler::new(ctx.services.detector, ctx.registry, ctx.thresholds);
    let mut working = pixels;
    let mut pasted = false;

    for (n, (region, original_idx)) in planned.iter().enumerate() {
        let crop_id = format!("{}-{}", image.id, n);
        let (x, y, w, h) = region.pixel_rect();
        let prompt = ctx.catalog.sample(rng).expect("catalog is non-empty").to_string();
        let crop_bytes = match imaging::encode_png(&imaging::crop(&working, x, y, w, h)) {
            Ok(b) => b,
            Err(e) => {
                tracing::warn!(crop_id, error = %e, "crop encoding failed");
                out.stats.service_errors += 1;
                continue;
            }
        };
        let req = InpaintRequest { request_id: crop_id.clone(), image_crop: crop_bytes, prompt: prompt.clone(), crop_side: w.max(h) };
        let inpainted = match svc::inpaint(ctx.services.inpainter, &req) {
            Ok(b) => b,
            Err(e) => {
                tracing::warn!(crop_id, error = %e, "inpainting failed, region skipped");
                out.stats.service_errors += 1;
                continue;
            }
        };
        let patch = match imaging::decode_png(&inpainted) {
            Ok(p) => p,
            Err(e) => {
                tracing::warn!(crop_id, error = %e, "undecodable inpainting, region skipped");
                out.stats.service_errors += 1;
                continue;
            }
        };
        let crop_ctx = CropContext {
            region,
            image_width: image.width,
            image_height: image.height,
            crop_id: &crop_id,
            inpainted: &inpainted,
        };
        let original = original_idx.map(|i| &out.annotations[i]);
        let decision = match labeler.decide(&crop_ctx, original, &prompt, ctx.policy.keep_partial_id) {
            Ok(d) => d,
            Err(e) => {
                tracing::warn!(crop_id, error = %e, "labeling failed, region skipped");
                out.stats.service_errors += 1;
                continue;
            }
        };
        let original_category = original.and_then(|a| ctx.registry.name(a.category_index)).map(str::to_string);
        let mut record = DecisionRecord::new(image.id, region, &decision, original_category);
        let mut new_index = None;
        let mut paste = true;
        match (decision.scenario, *original_idx) {
            (Scenario::RefinedOod, orig) => {
                if let Some(i) = orig {
                    out.annotations[i].provenance = Provenance::Removed;
                }
                out.new_annotations.push(Annotation {
                    id: AnnotationId(0),
                    image_id: image.id,
                    bbox: decision.final_bbox.expect("refined decision has a box"),
                    category_index: ctx.registry.ood_index(),
                    provenance: Provenance::InpaintedOod,
                    prompt_used: Some(prompt.clone()),
                    audit_state: AuditState::Unchecked,
                });
                new_index = Some(out.new_annotations.len() - 1);
            }
            (Scenario::IdRetained, Some(i)) => {
                let a = &mut out.annotations[i];
                a.provenance = Provenance::InpaintedIdRetained;
                a.prompt_used = Some(prompt.clone());
                record.annotation_id = Some(a.id);
            }
            (Scenario::Removed, Some(i)) => {
                out.annotations[i].provenance = Provenance::Removed;
                record.annotation_id = Some(out.annotations[i].id);
            }
            (Scenario::Removed, None) => {
                out.stats.discarded_road_inpaintings += 1;
                paste = false;
            }
            (Scenario::IdRetained, None) => unreachable!("retention requires a replaced object"),
        }
        if paste {
            imaging::paste(&mut working, &patch, x, y);
            pasted = true;
        }
        tracing::debug!(crop_id, scenario = decision.scenario.as_str(), prompt, "region decided");
        out.stats.scenarios.add(decision.scenario);
        out.decisions.push((record, new_index));
    }
    if pasted {
        out.edited = Some(working);
    }
    out
}

/// Uniform sample of `round(p * N)` images without replacement.
pub fn choose_augmented_subset<R: Rng + ?Sized>(manifest: &DatasetManifest, p: f64, rng: &mut R) -> BTreeSet<ImageId> {
    choose_eligible_subset(manifest, p, rng, |_| true).0
}

/// Walks a random permutation of the images and keeps the first
/// `round(p * N)` eligible ones; ineligible draws go back to the pool.
/// Also returns how many draws could not be filled.
pub fn choose_eligible_subset<R: Rng + ?Sized>(
    manifest: &DatasetManifest,
    p: f64,
    rng: &mut R,
    eligible: impl Fn(&ImageRecord) -> bool,
) -> (BTreeSet<ImageId>, usize) {
    let target = target_count(p, manifest.images.len());
    let mut order: Vec<usize> = (0..manifest.images.len()).collect();
    order.shuffle(rng);
    let chosen: BTreeSet<ImageId> = order
        .into_iter()
        .map(|i| &manifest.images[i])
        .filter(|img| eligible(img))
        .take(target)
        .map(|img| img.id)
        .collect();
    let shortfall = target - chosen.len();
    (chosen, shortfall)
}

pub fn target_count(p: f64, n: usize) -> usize {
    (p.clamp(0.0, 1.0) * n as f64).round() as usize
}

pub struct PipelineConfig {
    pub policy: VariantPolicy,
    pub seed: u64,
    pub thresholds: Thresholds,
    /// Worker threads; `None` uses the available parallelism.
    pub workers: Option<usize>,
    /// Directory that relative image and mask paths are resolved against.
    pub input_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Resolved run configuration copied into the output meta block.
    pub config_echo: BTreeMap<String, Value>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub manifest: DatasetManifest,
    pub report: AugmentationReport,
    pub evidence: EvidenceFile,
}

fn image_rng(seed: u64, id: ImageId) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stable_hash(&[b"augment-image", &seed.to_le_bytes(), &id.0.to_le_bytes()]))
}

fn subset_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stable_hash(&[b"augment-subset", &seed.to_le_bytes()]))
}

fn edited_file_name(image: &ImageRecord) -> String {
    let stem = Path::new(&image.file_name).file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    format!("{EDITED_DIR}/{}_{}_syn.png", image.id, stem)
}

/// `file` (relative to `from_dir`) re-expressed relative to `to_dir`, with `/` separators.
fn relocate(from_dir: &Path, to_dir: &Path, file: &str) -> String {
    let target = resolve_path(from_dir, file);
    pathdiff::diff_paths(&target, to_dir)
        .unwrap_or(target)
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn canonical_dir(dir: &Path) -> Result<PathBuf, PipelineError> {
    let dir = if dir.as_os_str().is_empty() { Path::new(".") } else { dir };
    dir.canonicalize().map_err(|source| PipelineError::Io { path: dir.into(), source })
}

struct Worker<'a> {
    ctx: AugmentContext<'a>,
    seed: u64,
    input_dir: &'a Path,
    out_dir: &'a Path,
}

impl Worker<'_> {
    fn run(&self, image: &ImageRecord, annotations: Vec<Annotation>) -> Result<ImageOutcome, String> {
        let path = resolve_path(self.input_dir, &image.file_name);
        let pixels = imaging::open_rgb(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        if pixels.dimensions() != (image.width, image.height) {
            return Err(format!(
                "{} is {:?}, manifest says {}x{}",
                path.display(),
                pixels.dimensions(),
                image.width,
                image.height
            ));
        }
        let mask = match (&image.road_mask, self.ctx.policy.road_region_inpaintings) {
            (Some(m), true) => {
                let mask = RoadMask::load(&resolve_path(self.input_dir, m)).map_err(|e| e.to_string())?;
                mask.check_dims(image).map_err(|e| e.to_string())?;
                Some(mask)
            }
            _ => None,
        };
        let mut rng = image_rng(self.seed, image.id);
        let outcome = augment_image(&self.ctx, image, &annotations, pixels, mask.as_ref(), &mut rng);
        if let Some(edited) = &outcome.edited {
            let dest = self.out_dir.join(edited_file_name(image));
            let bytes = imaging::encode_png(edited).map_err(|e| e.to_string())?;
            write_atomic(&dest, &bytes).map_err(|e| format!("{}: {e}", dest.display()))?;
        }
        Ok(outcome)
    }
}

/// Runs the whole augmentation and writes `manifest.json`, `report.json`,
/// `evidence.json` and edited images under `cfg.out_dir`.
pub fn run_pipeline(
    manifest: &DatasetManifest,
    cfg: &PipelineConfig,
    catalog: &PromptCatalog,
    services: Services<'_>,
) -> Result<PipelineOutput, PipelineError> {
    let policy = &cfg.policy;
    policy.validate(&manifest.registry)?;
    manifest.validate().map_err(ManifestError::Invariant)?;
    let edited_dir = cfg.out_dir.join(EDITED_DIR);
    fs::create_dir_all(&edited_dir).map_err(|source| PipelineError::Io { path: edited_dir.clone(), source })?;
    let input_dir = canonical_dir(&cfg.input_dir)?;
    let out_dir = canonical_dir(&cfg.out_dir)?;

    let replaceable = policy.replaceable_indices(&manifest.registry);
    let mut per_image: HashMap<ImageId, Vec<Annotation>> = HashMap::new();
    for a in &manifest.annotations {
        per_image.entry(a.image_id).or_default().push(a.clone());
    }
    let eligible = |img: &ImageRecord| {
        let replace = policy.replace_id_instances
            && per_image.get(&img.id).is_some_and(|anns| {
                anns.iter().any(|a| a.provenance == Provenance::Original && replaceable.contains(&a.category_index))
            });
        replace || (policy.road_region_inpaintings && img.road_mask.is_some())
    };
    let (selected, shortfall) =
        choose_eligible_subset(manifest, policy.ood_image_proportion, &mut subset_rng(cfg.seed), eligible);
    tracing::info!(images = manifest.images.len(), selected = selected.len(), shortfall, "augmentation subset chosen");

    let worker = Worker {
        ctx: AugmentContext {
            policy,
            registry: &manifest.registry,
            catalog,
            services,
            thresholds: cfg.thresholds,
        },
        seed: cfg.seed,
        input_dir: &input_dir,
        out_dir: &out_dir,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.unwrap_or(0))
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;
    let outcomes: Vec<(ImageOutcome, bool)> = pool.install(|| {
        manifest
            .images
            .par_iter()
            .map(|img| {
                let anns = per_image.get(&img.id).cloned().unwrap_or_default();
                if !selected.contains(&img.id) {
                    return (ImageOutcome::passthrough(anns), false);
                }
                match worker.run(img, anns.clone()) {
                    Ok(o) => (o, false),
                    Err(message) => {
                        tracing::error!(image_id = %img.id, error = message, "image skipped");
                        (ImageOutcome::passthrough(anns), true)
                    }
                }
            })
            .collect()
    });

    // Single-writer assembly in manifest order.
    let mut report = AugmentationReport {
        images_processed: manifest.images.len(),
        images_selected: selected.len(),
        eligible_shortfall: shortfall,
        ..Default::default()
    };
    let mut updated: HashMap<AnnotationId, Annotation> = HashMap::new();
    let mut new_annotations = Vec::new();
    let mut evidence = EvidenceFile::default();
    let mut images = Vec::with_capacity(manifest.images.len());
    let mut next_id = manifest.next_annotation_id();
    for (img, (outcome, failed)) in manifest.images.iter().zip(outcomes) {
        let mut record = img.clone();
        record.file_name = relocate(&input_dir, &out_dir, &img.file_name);
        record.road_mask = img.road_mask.as_ref().map(|m| relocate(&input_dir, &out_dir, m));
        if outcome.edited.is_some() {
            record.file_name = edited_file_name(img);
            evidence.images.push(EvidenceImage {
                image_id: img.id,
                original_file: relocate(&input_dir, &out_dir, &img.file_name),
                edited_file: record.file_name.clone(),
            });
        }
        images.push(record);

        let augmented = outcome.is_augmented();
        report.images_augmented += usize::from(augmented);
        if selected.contains(&img.id) && !augmented {
            report.placement_failures += 1;
        }
        report.image_errors += usize::from(failed);
        let s = &outcome.stats;
        report.scenarios.merge(&s.scenarios);
        report.no_placement_regions += s.no_placement_regions;
        report.discarded_road_inpaintings += s.discarded_road_inpaintings;
        report.service_errors += s.service_errors;

        let ids: Vec<AnnotationId> = outcome
            .new_annotations
            .iter()
            .map(|_| {
                next_id += 1;
                AnnotationId(next_id - 1)
            })
            .collect();
        for (mut a, id) in outcome.new_annotations.into_iter().zip(&ids) {
            a.id = *id;
            new_annotations.push(a);
        }
        for (mut d, new_index) in outcome.decisions {
            if let Some(k) = new_index {
                d.annotation_id = Some(ids[k]);
            }
            evidence.decisions.push(d);
        }
        for a in outcome.annotations {
            updated.insert(a.id, a);
        }
    }
    report.placement_failures += shortfall;
    report.decisions = evidence.decisions.len();

    let mut annotations: Vec<Annotation> =
        manifest.annotations.iter().map(|a| updated.remove(&a.id).unwrap_or_else(|| a.clone())).collect();
    annotations.extend(new_annotations);

    let mut meta = manifest.meta.clone();
    meta.variant = policy.variant;
    meta.seed = cfg.seed;
    meta.tool_version = TOOL_VERSION.to_string();
    meta.extra.insert("proportion".into(), json!(policy.ood_image_proportion));
    meta.extra.insert("box_threshold".into(), json!(cfg.thresholds.box_threshold));
    meta.extra.insert("text_threshold".into(), json!(cfg.thresholds.text_threshold));
    meta.extra.insert("config".into(), Value::Object(cfg.config_echo.clone().into_iter().collect()));
    let out = DatasetManifest { images, annotations, registry: manifest.registry.clone(), meta };

    save_manifest(&out, out_dir.join("manifest.json"))?;
    save_json(&report, &out_dir.join("report.json"))?;
    save_evidence(&evidence, out_dir.join("evidence.json"))?;
    tracing::info!(
        augmented = report.images_augmented,
        decisions = report.decisions,
        failures = report.placement_failures,
        "augmentation finished"
    );
    Ok(PipelineOutput { manifest: out, report, evidence })
}
