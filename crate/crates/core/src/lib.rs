//! Synthetic outlier augmentation for street-scene object detection datasets.
//!
//! The crate covers the whole offline pipeline: loading COCO-style manifests,
//! choosing inpainting regions, talking to the inpainting and detection
//! services, labeling the edited objects, auditing the labels, applying human
//! review decisions and scoring detector output with COCO semantics.

pub mod audit;
pub mod augment;
pub mod evidence;
pub mod geometry;
pub mod imaging;
pub mod labeling;
pub mod manifest_io;
pub mod metrics;
pub mod model;
pub mod policy;
pub mod prompts;
pub mod review;
pub mod svc;
pub mod synthetic;

use sha2::{Digest, Sha256};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// First eight bytes (little endian) of SHA-256 over the length-prefixed parts.
pub fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(out)
}
