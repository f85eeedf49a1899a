//! Box arithmetic and placement of inpainting regions.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AnnotationId, BBox, ImageRecord};

/// Upper area bound (exclusive) of the small bucket, 32².
pub const SMALL_MAX_AREA: f64 = 1024.0;
/// Upper area bound (exclusive) of the medium bucket, 96².
pub const MEDIUM_MAX_AREA: f64 = 9216.0;

pub const SMALL_CROP_SIDE: u32 = 128;
pub const MEDIUM_CROP_SIDE: u32 = 256;
pub const LARGE_CROP_SIDE: u32 = 512;

/// Minimum distance between the centers of two regions edited in one image.
pub const MIN_CENTER_DISTANCE: f64 = 512.0;

/// Oversized targets get a square this much larger than their longest side.
pub const OVERSIZE_MARGIN: f64 = 1.25;

pub const MAX_PLACEMENT_ATTEMPTS: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("target box {0:?} does not overlap the image")]
    DegenerateTarget([f64; 4]),
    #[error("no feasible placement found")]
    NoPlacement,
    #[error("road mask is {mask_w}x{mask_h} but image is {image_w}x{image_h}")]
    MaskMismatch { mask_w: u32, mask_h: u32, image_w: u32, image_h: u32 },
    #[error("failed to read road mask {path}: {message}")]
    MaskRead { path: String, message: String },
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let Some(inter) = a.intersection(b) else {
        return 0.0;
    };
    let i = inter.area();
    let union = a.area() + b.area() - i;
    if union <= 0.0 {
        0.0
    } else {
        (i / union).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeBucket {
    Small,
    Medium,
    Large,
}

impl SizeBucket {
    pub fn of_area(area: f64) -> Self {
        if area < SMALL_MAX_AREA {
            SizeBucket::Small
        } else if area < MEDIUM_MAX_AREA {
            SizeBucket::Medium
        } else {
            SizeBucket::Large
        }
    }

    pub fn crop_side(self) -> u32 {
        match self {
            SizeBucket::Small => SMALL_CROP_SIDE,
            SizeBucket::Medium => MEDIUM_CROP_SIDE,
            SizeBucket::Large => LARGE_CROP_SIDE,
        }
    }
}

pub fn size_bucket(b: &BBox) -> SizeBucket {
    SizeBucket::of_area(b.area())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropAnchor {
    ReplacedIdObject,
    RoadFreeSpace,
}

/// Image region handed to the inpainting service. Integer-aligned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropRegion {
    pub bbox: BBox,
    pub anchor: CropAnchor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_annotation_id: Option<AnnotationId>,
    /// Set when the image is smaller than the requested side on some axis.
    #[serde(default)]
    pub clamped: bool,
}

impl CropRegion {
    pub fn center(&self) -> (f64, f64) {
        self.bbox.center()
    }

    /// `(x, y, width, height)` in whole pixels.
    pub fn pixel_rect(&self) -> (u32, u32, u32, u32) {
        (
            self.bbox.x.round() as u32,
            self.bbox.y.round() as u32,
            self.bbox.w.round() as u32,
            self.bbox.h.round() as u32,
        )
    }
}

/// Places `[origin, origin + side)` on one axis so it covers `[lo, hi]` where
/// possible and stays inside `[0, dim]`. Returns `(origin, extent, clamped)`.
fn place_axis(center: f64, lo: f64, hi: f64, side: u32, dim: u32) -> (f64, f64, bool) {
    if side > dim {
        return (0.0, dim as f64, true);
    }
    let side_f = side as f64;
    let lower = (hi.ceil() - side_f).max(0.0);
    let upper = lo.floor().min((dim - side) as f64);
    let mut origin = (center - side_f / 2.0).round();
    // lower <= upper whenever the target's pixel extent fits in `side`.
    origin = origin.max(lower).min(upper);
    (origin, side_f, false)
}

/// Square crop centered on `target`, sized by its bucket (128/256/512) and
/// grown to `ceil(1.25 * max(w, h))` when the target does not fit. The square
/// is slid, not shrunk, to stay inside the image.
pub fn crop_for_target(target: &BBox, image: &ImageRecord) -> Result<CropRegion, GeometryError> {
    let visible = target
        .clamp_to(image.width as f64, image.height as f64)
        .ok_or(GeometryError::DegenerateTarget(target.to_array()))?;
    let mut side = size_bucket(target).crop_side();
    let extent_x = visible.right().ceil() - visible.x.floor();
    let extent_y = visible.bottom().ceil() - visible.y.floor();
    if extent_x.max(extent_y) > side as f64 {
        let grown = (OVERSIZE_MARGIN * target.w.max(target.h)).ceil();
        side = grown.max(extent_x).max(extent_y) as u32;
    }
    let (cx, cy) = visible.center();
    let (x, w, cl_x) = place_axis(cx, visible.x, visible.right(), side, image.width);
    let (y, h, cl_y) = place_axis(cy, visible.y, visible.bottom(), side, image.height);
    Ok(CropRegion {
        bbox: BBox { x, y, w, h },
        anchor: CropAnchor::ReplacedIdObject,
        source_annotation_id: None,
        clamped: cl_x || cl_y,
    })
}

pub fn center_distance(a: &CropRegion, b: &CropRegion) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).hypot(ay - by)
}

/// True iff `candidate` is at least [`MIN_CENTER_DISTANCE`] from every accepted region.
pub fn min_distance_ok(accepted: &[CropRegion], candidate: &CropRegion) -> bool {
    accepted.iter().all(|r| center_distance(r, candidate) >= MIN_CENTER_DISTANCE)
}

/// Binary drivable-space raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoadMask {
    width: u32,
    height: u32,
    cells: Vec<bool>,
}

impl RoadMask {
    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let mut cells = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                cells.push(f(x, y));
            }
        }
        Self { width, height, cells }
    }

    /// Reads a single-channel PNG; any nonzero pixel is drivable.
    pub fn load(path: &Path) -> Result<Self, GeometryError> {
        let img = image::open(path)
            .map_err(|e| GeometryError::MaskRead { path: path.display().to_string(), message: e.to_string() })?
            .into_luma8();
        let (width, height) = img.dimensions();
        let cells = img.into_raw().into_iter().map(|v| v != 0).collect();
        Ok(Self { width, height, cells })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        x < self.width && y < self.height && self.cells[(y * self.width + x) as usize]
    }

    pub fn check_dims(&self, image: &ImageRecord) -> Result<(), GeometryError> {
        if self.width != image.width || self.height != image.height {
            return Err(GeometryError::MaskMismatch {
                mask_w: self.width,
                mask_h: self.height,
                image_w: image.width,
                image_h: image.height,
            });
        }
        Ok(())
    }
}

/// Region of `side` pixels centered on the pixel `(cx, cy)`.
pub fn road_region_at(cx: u32, cy: u32, side: u32) -> CropRegion {
    let half = side / 2;
    CropRegion {
        bbox: BBox { x: (cx - half) as f64, y: (cy - half) as f64, w: side as f64, h: side as f64 },
        anchor: CropAnchor::RoadFreeSpace,
        source_annotation_id: None,
        clamped: false,
    }
}

/// Whether a road region centered at `(cx, cy)` satisfies every placement rule.
pub fn road_region_feasible(
    mask: &RoadMask,
    existing: &[BBox],
    accepted: &[CropRegion],
    side: u32,
    cx: u32,
    cy: u32,
) -> bool {
    let half = side / 2;
    if cx < half || cy < half || cx - half + side > mask.width || cy - half + side > mask.height {
        return false;
    }
    if !mask.get(cx, cy) {
        return false;
    }
    let region = road_region_at(cx, cy, side);
    existing.iter().all(|b| iou(&region.bbox, b) == 0.0) && min_distance_ok(accepted, &region)
}

/// Draws a square free-space region by rejection sampling over drivable pixels.
///
/// Candidate centers are drawn uniformly from mask-positive pixels whose
/// region fits inside the image; a candidate is kept when its box has zero
/// overlap with every `existing` box and respects the center-distance rule
/// against `accepted`. Gives up after [`MAX_PLACEMENT_ATTEMPTS`] draws.
pub fn sample_road_region<R: Rng + ?Sized>(
    image: &ImageRecord,
    mask: &RoadMask,
    existing: &[BBox],
    accepted: &[CropRegion],
    side: u32,
    rng: &mut R,
) -> Result<CropRegion, GeometryError> {
    mask.check_dims(image)?;
    if side == 0 || side > image.width || side > image.height {
        return Err(GeometryError::NoPlacement);
    }
    let half = side / 2;
    let (x_lo, x_hi) = (half, image.width - side + half);
    let (y_lo, y_hi) = (half, image.height - side + half);
    let mut candidates: Vec<(u32, u32)> = Vec::new();
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            if mask.get(x, y) {
                candidates.push((x, y));
            }
        }
    }
    if candidates.is_empty() {
        return Err(GeometryError::NoPlacement);
    }
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let (cx, cy) = candidates[rng.random_range(0..candidates.len())];
        if road_region_feasible(mask, existing, accepted, side, cx, cy) {
            return Ok(road_region_at(cx, cy, side));
        }
    }
    Err(GeometryError::NoPlacement)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    fn image(w: u32, h: u32) -> ImageRecord {
        ImageRecord { id: crate::model::ImageId(1), width: w, height: h, file_name: "x.png".into(), road_mask: None }
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&bb(0., 0., 10., 10.), &bb(0., 0., 10., 10.)), 1.0);
        assert_eq!(iou(&bb(0., 0., 10., 10.), &bb(20., 20., 5., 5.)), 0.0);
        // 5x5 overlap, union 100 + 100 - 25.
        let v = iou(&bb(0., 0., 10., 10.), &bb(5., 5., 10., 10.));
        assert!((v - 25.0 / 175.0).abs() < 1e-15);
        // Touching edges share no area.
        assert_eq!(iou(&bb(0., 0., 10., 10.), &bb(10., 0., 10., 10.)), 0.0);
    }

    #[test]
    fn bucket_examples_and_boundaries() {
        assert_eq!(size_bucket(&bb(0., 0., 10., 10.)), SizeBucket::Small);
        assert_eq!(size_bucket(&bb(0., 0., 40., 40.)), SizeBucket::Medium);
        assert_eq!(size_bucket(&bb(0., 0., 100., 100.)), SizeBucket::Large);
        assert_eq!(SizeBucket::of_area(1023.0), SizeBucket::Small);
        assert_eq!(SizeBucket::of_area(1024.0), SizeBucket::Medium);
        assert_eq!(SizeBucket::of_area(9215.0), SizeBucket::Medium);
        assert_eq!(SizeBucket::of_area(9216.0), SizeBucket::Large);
    }

    #[test]
    fn crop_examples() {
        let img = image(1600, 900);
        let c = crop_for_target(&bb(100., 100., 20., 20.), &img).unwrap();
        assert_eq!(c.bbox.to_array(), [46., 46., 128., 128.]);
        assert!(!c.clamped);

        let c = crop_for_target(&bb(10., 10., 20., 20.), &img).unwrap();
        assert_eq!(c.bbox.to_array(), [0., 0., 128., 128.]);

        let target = bb(0., 0., 600., 300.);
        let c = crop_for_target(&target, &img).unwrap();
        assert_eq!((c.bbox.w, c.bbox.h), (750., 750.));
        assert!(c.bbox.contains(&target, 0.0));
        assert!(!c.clamped);
    }

    #[test]
    fn crop_in_small_image_is_clamped() {
        let img = image(100, 80);
        let c = crop_for_target(&bb(10., 10., 20., 20.), &img).unwrap();
        assert!(c.clamped);
        assert_eq!(c.bbox.to_array(), [0., 0., 100., 80.]);
    }

    #[test]
    fn crop_rejects_target_outside_image() {
        let img = image(100, 100);
        assert!(matches!(
            crop_for_target(&bb(200., 200., 10., 10.), &img),
            Err(GeometryError::DegenerateTarget(_))
        ));
    }

    #[test]
    fn fractional_target_filling_the_side_is_still_covered() {
        let img = image(1600, 900);
        let t = bb(10.3, 20.7, 128.0, 40.0);
        let c = crop_for_target(&t, &img).unwrap();
        assert!(c.bbox.contains(&t, 0.0), "{:?}", c.bbox);
    }

    fn region_centered(cx: f64, cy: f64) -> CropRegion {
        CropRegion {
            bbox: bb(cx - 64.0, cy - 64.0, 128.0, 128.0),
            anchor: CropAnchor::RoadFreeSpace,
            source_annotation_id: None,
            clamped: false,
        }
    }

    #[test]
    fn min_distance_examples() {
        let origin = region_centered(0.0, 0.0);
        assert!(!min_distance_ok(&[origin.clone()], &region_centered(400.0, 300.0)));
        assert!(min_distance_ok(&[origin.clone()], &region_centered(512.0, 0.0)));
        assert!(min_distance_ok(&[], &origin));
    }

    #[test]
    fn road_sampling_unconstrained_is_deterministic() {
        let img = image(800, 400);
        let mask = RoadMask::from_fn(800, 400, |_, _| true);
        let a = sample_road_region(&img, &mask, &[], &[], 128, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = sample_road_region(&img, &mask, &[], &[], 128, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert!(bb(0., 0., 800., 400.).contains(&a.bbox, 0.0));
    }

    #[test]
    fn road_sampling_empty_mask_fails() {
        let img = image(400, 400);
        let mask = RoadMask::from_fn(400, 400, |_, _| false);
        let r = sample_road_region(&img, &mask, &[], &[], 128, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(r, Err(GeometryError::NoPlacement));
    }

    #[test]
    fn road_sampling_mask_mismatch() {
        let img = image(400, 400);
        let mask = RoadMask::from_fn(300, 400, |_, _| true);
        let r = sample_road_region(&img, &mask, &[], &[], 128, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(matches!(r, Err(GeometryError::MaskMismatch { .. })));
    }
}
