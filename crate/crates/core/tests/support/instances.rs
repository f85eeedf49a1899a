//! Random small evaluation instances and their library representation.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use synoe_core::metrics::{DetectionDump, DumpEntry, EvalReport};
use synoe_core::model::{Annotation, BBox, CategoryRegistry, DatasetManifest, ImageId, ImageRecord};

use super::oracle::{Instance, OBox, ODet, OGt};

pub const IMAGE_SIDE: u32 = 300;

fn side<R: Rng>(rng: &mut R) -> f64 {
    // Spread sizes over all three buckets, including the exact edges.
    match rng.random_range(0..6) {
        0 => rng.random_range(2..32) as f64,
        1 => 32.0,
        2 => rng.random_range(33..96) as f64,
        3 => 96.0,
        _ => rng.random_range(20..160) as f64,
    }
}

fn random_box<R: Rng>(rng: &mut R) -> OBox {
    let w = side(rng);
    let h = side(rng);
    let x = rng.random_range(0..=(IMAGE_SIDE as i64 - w as i64)) as f64;
    let y = rng.random_range(0..=(IMAGE_SIDE as i64 - h as i64)) as f64;
    OBox { x, y, w, h }
}

fn jitter<R: Rng>(b: &OBox, rng: &mut R) -> OBox {
    let mut j = |v: f64, lim: f64| (v + rng.random_range(-6..=6) as f64).clamp(0.0, lim);
    let x = j(b.x, IMAGE_SIDE as f64 - 1.0);
    let y = j(b.y, IMAGE_SIDE as f64 - 1.0);
    let w = j(b.w, IMAGE_SIDE as f64 - x).max(1.0);
    let h = j(b.h, IMAGE_SIDE as f64 - y).max(1.0);
    OBox { x, y, w, h }
}

/// At most 5 images, 10 ground-truth boxes, 10 detections and 3 categories.
pub fn random_instance<R: Rng>(rng: &mut R) -> Instance {
    let mut ids: Vec<u64> = (1..=20).collect();
    ids.shuffle(rng);
    let images: Vec<u64> = ids[..rng.random_range(1..=5)].to_vec();
    let n_id = rng.random_range(1..=2u32);
    let n_cat = n_id + 1;
    let gts: Vec<OGt> = (0..rng.random_range(0..=10))
        .map(|_| OGt {
            image: images[rng.random_range(0..images.len())],
            category: rng.random_range(1..=n_cat),
            bbox: random_box(rng),
        })
        .collect();
    let coarse = rng.random_bool(0.5);
    let dets = (0..rng.random_range(0..=10))
        .map(|_| {
            let score = if coarse { rng.random_range(1..=5) as f64 / 5.0 } else { rng.random_range(0.0..=1.0) };
            if !gts.is_empty() && rng.random_bool(0.7) {
                let g = &gts[rng.random_range(0..gts.len())];
                let category = if rng.random_bool(0.85) { g.category } else { rng.random_range(1..=n_cat) };
                let bbox = if rng.random_bool(0.3) { g.bbox } else { jitter(&g.bbox, rng) };
                ODet { image: g.image, category, bbox, score }
            } else {
                ODet {
                    image: images[rng.random_range(0..images.len())],
                    category: rng.random_range(1..=n_cat),
                    bbox: random_box(rng),
                    score,
                }
            }
        })
        .collect();
    Instance { images, n_id, gts, dets }
}

fn bbox(b: &OBox) -> BBox {
    BBox::new(b.x, b.y, b.w, b.h).unwrap()
}

pub fn to_manifest(inst: &Instance) -> DatasetManifest {
    let registry = CategoryRegistry::new((1..=inst.n_id).map(|i| format!("class{i}"))).unwrap();
    let images = inst
        .images
        .iter()
        .map(|&id| ImageRecord {
            id: ImageId(id),
            width: IMAGE_SIDE,
            height: IMAGE_SIDE,
            file_name: format!("{id}.png"),
            road_mask: None,
        })
        .collect();
    let anns = inst
        .gts
        .iter()
        .enumerate()
        .map(|(i, g)| Annotation::original(i as u64 + 1, g.image, bbox(&g.bbox), g.category))
        .collect();
    DatasetManifest::new(images, anns, registry)
}

pub fn to_dump(inst: &Instance) -> DetectionDump {
    DetectionDump {
        entries: inst
            .dets
            .iter()
            .map(|d| DumpEntry { image_id: ImageId(d.image), bbox: bbox(&d.bbox), category_id: d.category, score: d.score })
            .collect(),
    }
}

/// Largest absolute difference between the library report and oracle rows;
/// infinite when a sentinel appears on one side only.
pub fn max_deviation(report: &EvalReport, oracle: &[[f64; 8]]) -> f64 {
    assert_eq!(report.per_category.len(), oracle.len());
    let mut worst: f64 = 0.0;
    for (c, o) in report.per_category.iter().zip(oracle) {
        for (a, b) in c.metrics.values().iter().zip(o) {
            let d = if (*a == -1.0) != (*b == -1.0) { f64::INFINITY } else { (a - b).abs() };
            worst = worst.max(d);
        }
    }
    worst
}
