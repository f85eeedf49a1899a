//! Audited-manifest fixtures with a known number of injected label mismatches.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use synoe_core::evidence::{DecisionRecord, EvidenceFile};
use synoe_core::geometry::CropAnchor;
use synoe_core::labeling::Scenario;
use synoe_core::model::{Annotation, AnnotationId, BBox, CategoryRegistry, DatasetManifest, ImageId, ImageRecord, Provenance};
use synoe_core::svc::DetectionRecord;

const PROMPTS: [&str; 6] = ["penguin", "kangaroo", "guinea pig", "sofa", "giant tortoise", "shopping cart"];
/// Labels sharing no word with any prompt and naming no ID class.
const FOREIGN: [&str; 4] = ["chair", "lamp post", "rock", "bench"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Injected {
    Match,
    /// Top label is some non-ID word unrelated to the prompt.
    Foreign,
    /// Top label is an ID class name.
    IdLabel,
}

pub struct AuditFixture {
    pub manifest: DatasetManifest,
    pub evidence: EvidenceFile,
    /// Per inpainted annotation id, what was injected.
    pub injected: Vec<(AnnotationId, Injected)>,
}

impl AuditFixture {
    pub fn count(&self, kind: Injected) -> usize {
        self.injected.iter().filter(|(_, k)| *k == kind).count()
    }
}

fn matching_label<R: Rng>(prompt: &str, rng: &mut R) -> String {
    match rng.random_range(0..3) {
        0 => prompt.to_string(),
        1 => prompt.to_uppercase(),
        _ => format!("a {prompt}"),
    }
}

/// `total` inpaintings of which `k` are mismatches, `m <= k` of them ID labels,
/// mixed with originals and ID-retained annotations the audit must ignore.
pub fn audit_fixture<R: Rng>(total: usize, k: usize, m: usize, rng: &mut R) -> AuditFixture {
    assert!(m <= k && k <= total);
    let reg = CategoryRegistry::default();
    let ids: Vec<String> = reg.id_classes().to_vec();
    let mut kinds: Vec<Injected> = (0..total)
        .map(|i| if i < m { Injected::IdLabel } else if i < k { Injected::Foreign } else { Injected::Match })
        .collect();
    kinds.shuffle(rng);

    let images: Vec<ImageRecord> = (1..=3)
        .map(|i| ImageRecord { id: ImageId(i), width: 1600, height: 900, file_name: format!("{i}.png"), road_mask: None })
        .collect();
    let mut anns = Vec::new();
    let mut decisions = Vec::new();
    let mut injected = Vec::new();
    let mut next_id = 1u64;
    let bbox = |rng: &mut R| BBox::new(rng.random_range(0..1400) as f64, rng.random_range(0..700) as f64, 40.0, 30.0).unwrap();
    for kind in kinds {
        // Distractors the audit must leave alone.
        if rng.random_bool(0.3) {
            let image = rng.random_range(1..=3);
            let cat = rng.random_range(1..=reg.n());
            anns.push(Annotation::original(next_id, image, bbox(rng), cat));
            next_id += 1;
        }
        let image = rng.random_range(1..=3u64);
        let prompt = PROMPTS[rng.random_range(0..PROMPTS.len())];
        let top = match kind {
            Injected::Match => matching_label(prompt, rng),
            Injected::Foreign => FOREIGN[rng.random_range(0..FOREIGN.len())].to_string(),
            Injected::IdLabel => {
                let name = &ids[rng.random_range(0..ids.len())];
                if rng.random_bool(0.5) { name.to_uppercase() } else { name.clone() }
            }
        };
        let b = bbox(rng);
        let id = AnnotationId(next_id);
        anns.push(Annotation {
            provenance: Provenance::InpaintedOod,
            prompt_used: Some(prompt.to_string()),
            ..Annotation::original(next_id, image, b, reg.ood_index())
        });
        next_id += 1;
        let mut evidence = vec![DetectionRecord { bbox: b, label: top, score: 0.8 }];
        // Lower-scored records must not influence the verdict.
        for _ in 0..rng.random_range(0..3) {
            let label = if rng.random_bool(0.5) { prompt.to_string() } else { ids[0].clone() };
            evidence.push(DetectionRecord { bbox: b, label, score: rng.random_range(0.1..0.79) });
        }
        evidence.shuffle(rng);
        decisions.push(DecisionRecord {
            annotation_id: Some(id),
            image_id: ImageId(image),
            scenario: Scenario::RefinedOod,
            prompt: prompt.to_string(),
            crop: BBox::new(0.0, 0.0, 128.0, 128.0).unwrap(),
            anchor: CropAnchor::RoadFreeSpace,
            source_annotation_id: None,
            original_category: None,
            evidence,
        });
        injected.push((id, kind));
        if rng.random_bool(0.2) {
            anns.push(Annotation {
                provenance: Provenance::InpaintedIdRetained,
                prompt_used: Some(prompt.to_string()),
                ..Annotation::original(next_id, image, bbox(rng), 3)
            });
            next_id += 1;
        }
    }
    AuditFixture { manifest: DatasetManifest::new(images, anns, reg), evidence: EvidenceFile { images: vec![], decisions }, injected }
}
