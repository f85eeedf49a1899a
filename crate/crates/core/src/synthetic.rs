//! Small on-disk street-scene datasets for tests, demos and benchmarks.
//!
//! Images are pure grayscale so that the colored stamps of the mock
//! inpainter never collide with background pixels.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imaging;
use crate::manifest_io::{save_manifest, ManifestError};
use crate::model::{Annotation, BBox, CategoryRegistry, DatasetManifest, ImageId, ImageRecord};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub images: usize,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
    /// Annotations per image are drawn from `1..=max_objects`.
    pub max_objects: usize,
    pub road_masks: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { images: 20, width: 800, height: 450, seed: 0, max_objects: 4, road_masks: true }
    }
}

/// Fraction of the image height above the drivable band.
const HORIZON: f64 = 0.6;

fn background(w: u32, h: u32, rng: &mut ChaCha8Rng) -> RgbImage {
    let base: u32 = rng.random_range(60..140);
    RgbImage::from_fn(w, h, |x, y| {
        let v = (base + (x / 16 + y / 16) % 5 * 6) as u8;
        Rgb([v, v, v])
    })
}

/// Writes images, masks and `manifest.json` under `dir` and returns the manifest path.
pub fn write_dataset(dir: &Path, spec: &SyntheticSpec) -> Result<PathBuf, ManifestError> {
    let io = |path: &Path, source| ManifestError::Io { path: path.into(), source };
    let img_dir = dir.join("img");
    fs::create_dir_all(&img_dir).map_err(|e| io(&img_dir, e))?;
    let registry = CategoryRegistry::default();
    let car = registry.id_index_of("car").expect("default registry has car");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    let (w, h) = (spec.width, spec.height);
    for i in 0..spec.images {
        let id = i as u64 + 1;
        let mut pixels = background(w, h, &mut rng);
        let n = rng.random_range(1..=spec.max_objects.max(1));
        for k in 0..n {
            // The first object of every image is a car so replacement always has a target.
            let category = if k == 0 { car } else { rng.random_range(1..=registry.n()) };
            let bw = rng.random_range(12..(w / 3).max(13)) as f64;
            let bh = rng.random_range(12..(h / 3).max(13)) as f64;
            let x = rng.random_range(0.0..(w as f64 - bw));
            let y = rng.random_range(0.0..(h as f64 * HORIZON - bh).max(1.0));
            let bbox = BBox::new(x, y, bw, bh).expect("positive size").quantized().expect("positive size");
            let shade = rng.random_range(20..50u8);
            for py in bbox.y as u32..(bbox.bottom() as u32).min(h) {
                for px in bbox.x as u32..(bbox.right() as u32).min(w) {
                    pixels.put_pixel(px, py, Rgb([shade, shade, shade]));
                }
            }
            annotations.push(Annotation::original(annotations.len() as u64 + 1, id, bbox, category));
        }
        let file_name = format!("img/{id:04}.png");
        let path = dir.join(&file_name);
        fs::write(&path, imaging::encode_png(&pixels).expect("png encoding")).map_err(|e| io(&path, e))?;
        let road_mask = if spec.road_masks {
            let mask_name = format!("img/{id:04}_road.png");
            let horizon = (h as f64 * HORIZON) as u32;
            let mask = GrayImage::from_fn(w, h, |_, y| Luma([if y >= horizon { 255 } else { 0 }]));
            let mpath = dir.join(&mask_name);
            mask.save(&mpath).map_err(|e| io(&mpath, std::io::Error::other(e)))?;
            Some(mask_name)
        } else {
            None
        };
        images.push(ImageRecord { id: ImageId(id), width: w, height: h, file_name, road_mask });
    }
    let manifest = DatasetManifest::new(images, annotations, registry);
    let path = dir.join("manifest.json");
    save_manifest(&manifest, &path)?;
    Ok(path)
}
