mod support;

use std::path::{Path, PathBuf};

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use synoe_core::audit::audit_manifest;
use synoe_core::manifest_io::{manifest_to_string, parse_manifest, LoadOptions};
use synoe_core::model::{AnnotationId, AuditState, BBox, DatasetManifest, Provenance};
use synoe_core::review::{replay, ReviewDecision, ReviewStore, Verdict};
use support::audit_fixture::{audit_fixture, AuditFixture, Injected};

fn fixture(seed: u64, total: usize, k_frac: f64, m_frac: f64) -> AuditFixture {
    let k = (total as f64 * k_frac) as usize;
    let m = (k as f64 * m_frac) as usize;
    audit_fixture(total, k, m, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn flagged_ids(store: &ReviewStore) -> Vec<AnnotationId> {
    let mut out = Vec::new();
    for page in 0.. {
        let p = store.list_flagged(page, 3);
        if p.items.is_empty() {
            break;
        }
        out.extend(p.items.iter().map(|i| i.annotation.id));
    }
    out
}

fn random_verdict<R: Rng>(rng: &mut R) -> Verdict {
    match rng.random_range(0..4) {
        0 => Verdict::AcceptOod,
        1 => Verdict::Discard,
        2 => Verdict::ReassignId { class: ["car", "Truck", "pedestrian"][rng.random_range(0..3)].into() },
        _ => Verdict::ReassignId { class: "tram".into() },
    }
}

fn open(base: &DatasetManifest, journal: &Path) -> ReviewStore {
    ReviewStore::open(base.clone(), Default::default(), Some(journal.to_path_buf()), PathBuf::from(".")).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn audit_counts_injected_mismatches_exactly(seed in any::<u64>(), total in 0usize..40, kf in 0.0..=1.0f64, mf in 0.0..=1.0f64) {
        let f = fixture(seed, total, kf, mf);
        let (audited, r) = audit_manifest(&f.manifest, &f.evidence);
        let k = f.count(Injected::Foreign) + f.count(Injected::IdLabel);
        prop_assert_eq!(r.total_inpaintings, total);
        prop_assert_eq!(r.ambiguous, k);
        prop_assert_eq!(r.mislabeled_as_id, f.count(Injected::IdLabel));
        prop_assert_eq!(r.matched, f.count(Injected::Match));
        // Count identities.
        prop_assert_eq!(r.matched + r.ambiguous, r.total_inpaintings);
        prop_assert!(r.mislabeled_as_id <= r.ambiguous);
        prop_assert_eq!(r.mislabel_histogram.values().sum::<usize>(), r.mislabeled_as_id);
        for (id, kind) in &f.injected {
            let state = audited.annotation(*id).unwrap().audit_state;
            prop_assert_eq!(state, if *kind == Injected::Match { AuditState::Confirmed } else { AuditState::Ambiguous });
        }
        // Nothing but inpainted OOD annotations changes.
        for (a, b) in f.manifest.annotations.iter().zip(&audited.annotations) {
            if a.provenance != Provenance::InpaintedOod {
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn audit_is_idempotent(seed in any::<u64>(), total in 0usize..30, kf in 0.0..=1.0f64) {
        let f = fixture(seed, total, kf, 0.5);
        let (once, r1) = audit_manifest(&f.manifest, &f.evidence);
        let (twice, r2) = audit_manifest(&once, &f.evidence);
        prop_assert_eq!(r1, r2);
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn every_ambiguous_item_is_reviewable(seed in any::<u64>(), total in 0usize..30, kf in 0.0..=1.0f64) {
        let f = fixture(seed, total, kf, 0.5);
        let (audited, _) = audit_manifest(&f.manifest, &f.evidence);
        let store = ReviewStore::open(audited.clone(), f.evidence.clone(), None, PathBuf::from(".")).unwrap();
        let mut expect: Vec<AnnotationId> =
            audited.annotations.iter().filter(|a| a.audit_state == AuditState::Ambiguous).map(|a| a.id).collect();
        expect.sort();
        prop_assert_eq!(flagged_ids(&store), expect);
    }

    #[test]
    fn journal_replay_reproduces_the_export(seed in any::<u64>(), total in 1usize..25, extra in 0usize..20) {
        let f = fixture(seed, total, 0.6, 0.5);
        let (audited, _) = audit_manifest(&f.manifest, &f.evidence);
        let dir = tempfile::tempdir().unwrap();
        let journal = dir.path().join("j.ndjson");
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let mut store = open(&audited, &journal);
        let flagged = flagged_ids(&store);
        let all_ids: Vec<AnnotationId> = audited.annotations.iter().map(|a| a.id).collect();

        // Random traffic, including overrides and requests that must be rejected.
        let mut plan: Vec<AnnotationId> = flagged.clone();
        for _ in 0..extra {
            plan.push(all_ids[rng.random_range(0..all_ids.len())]);
        }
        plan.shuffle(&mut rng);
        for id in plan {
            let d = ReviewDecision { annotation_id: id, verdict: random_verdict(&mut rng), reviewer: "r".into(), timestamp: None };
            let _ = store.submit(d);
        }
        // Make sure every flagged item ends up with an accepted verdict.
        for &id in &flagged {
            if audited.annotation(id).is_some() && store.current().annotation(id).unwrap().audit_state != AuditState::HumanResolved {
                store.submit(ReviewDecision { annotation_id: id, verdict: Verdict::AcceptOod, reviewer: "r".into(), timestamp: None }).unwrap();
            }
        }
        let exported = store.export().unwrap();
        prop_assert_eq!(&replay(&audited, store.history()).unwrap(), &exported);
        let reopened = open(&audited, &journal);
        prop_assert_eq!(reopened.history(), store.history());
        prop_assert_eq!(reopened.export().unwrap(), exported.clone());
        let (_, report) = audit_manifest(&exported, &f.evidence);
        prop_assert_eq!(report.ambiguous, 0);
        prop_assert!(exported.validate().is_ok());
    }

    #[test]
    fn manifests_round_trip_through_json(seed in any::<u64>(), total in 0usize..30, jitter in prop::collection::vec(0.0..1000.0f64, 4)) {
        let mut f = fixture(seed, total, 0.5, 0.5);
        if let Some(a) = f.manifest.annotations.first_mut() {
            a.bbox = BBox::new(jitter[0] * 1.3, jitter[1] * 0.5, jitter[2] * 0.2 + 0.5, jitter[3] * 0.2 + 0.5).unwrap().quantized().unwrap();
        }
        let (audited, _) = audit_manifest(&f.manifest, &f.evidence);
        let text = manifest_to_string(&audited).unwrap();
        let back = parse_manifest(&text, Path::new("m.json"), &LoadOptions::default()).unwrap();
        prop_assert_eq!(&back, &audited);
        prop_assert_eq!(manifest_to_string(&back).unwrap(), text);
    }
}

#[test]
fn torn_journal_tail_is_dropped_on_reopen() {
    let f = fixture(3, 10, 1.0, 0.0);
    let (audited, _) = audit_manifest(&f.manifest, &f.evidence);
    let dir = tempfile::tempdir().unwrap();
    let journal = dir.path().join("j.ndjson");
    let mut store = open(&audited, &journal);
    let id = flagged_ids(&store)[0];
    store.submit(ReviewDecision { annotation_id: id, verdict: Verdict::Discard, reviewer: "r".into(), timestamp: None }).unwrap();
    let expected = store.export().unwrap();
    // Simulate a crash midway through the next append.
    std::fs::OpenOptions::new()
        .append(true)
        .open(&journal)
        .and_then(|mut f| std::io::Write::write_all(&mut f, b"{\"annotation_id\": 2, \"verd"))
        .unwrap();
    let reopened = open(&audited, &journal);
    assert_eq!(reopened.export().unwrap(), expected);
    assert_eq!(std::fs::read_to_string(&journal).unwrap().lines().count(), 1);
}
