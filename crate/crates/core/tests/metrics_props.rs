mod support;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use synoe_core::metrics::{evaluate, EvalOptions, EvalReport};
use synoe_core::model::{ImageId, ImageRecord};
use support::instances::{max_deviation, random_instance, to_dump, to_manifest};
use support::oracle::{per_category, Instance, ODet};

fn instance(seed: u64) -> Instance {
    random_instance(&mut ChaCha8Rng::seed_from_u64(seed))
}

fn eval(inst: &Instance, class_agnostic: bool) -> EvalReport {
    evaluate(&to_manifest(inst), &to_dump(inst), EvalOptions { class_agnostic }).unwrap()
}

fn same_metrics(a: &EvalReport, b: &EvalReport) -> bool {
    a.per_category == b.per_category && a.overall == b.overall && a.map_id == b.map_id
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn matches_brute_force_reference(seed in any::<u64>()) {
        let inst = instance(seed);
        let dev = max_deviation(&eval(&inst, false), &per_category(&inst, false));
        prop_assert!(dev <= 1e-9, "deviation {dev}");
    }

    #[test]
    fn class_agnostic_matches_reference(seed in any::<u64>()) {
        let inst = instance(seed);
        let dev = max_deviation(&eval(&inst, true), &per_category(&inst, true));
        prop_assert!(dev <= 1e-9, "deviation {dev}");
    }

    #[test]
    fn dump_order_is_irrelevant_with_distinct_scores(seed in any::<u64>()) {
        let mut inst = instance(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let n = inst.dets.len();
        let mut ranks: Vec<usize> = (0..n).collect();
        ranks.shuffle(&mut rng);
        for (d, r) in inst.dets.iter_mut().zip(ranks) {
            d.score = (r + 1) as f64 / (n + 1) as f64;
        }
        let before = eval(&inst, false);
        inst.dets.shuffle(&mut rng);
        prop_assert!(same_metrics(&before, &eval(&inst, false)));
    }

    #[test]
    fn monotone_score_transforms_change_nothing(seed in any::<u64>()) {
        let mut inst = instance(seed);
        let before = eval(&inst, false);
        for d in &mut inst.dets {
            d.score = d.score.sqrt() * 0.5 + 0.25;
        }
        prop_assert!(same_metrics(&before, &eval(&inst, false)));
    }

    #[test]
    fn lowest_scoring_false_positive_changes_nothing(seed in any::<u64>(), cat_pick in 0u32..3) {
        let mut inst = instance(seed);
        for d in &mut inst.dets {
            d.score = 0.01 + 0.99 * d.score;
        }
        let before = eval(&inst, false);
        // A fresh image has no ground truth, so anything detected there is a false positive.
        inst.images.push(99);
        let category = 1 + cat_pick % (inst.n_id + 1);
        let bbox = support::oracle::OBox { x: 10.0, y: 10.0, w: 50.0, h: 40.0 };
        inst.dets.push(ODet { image: 99, category, bbox, score: 0.0 });
        let mut m = to_manifest(&inst);
        m.images.retain(|im| im.id != ImageId(99));
        m.images.push(ImageRecord { id: ImageId(99), width: 300, height: 300, file_name: "99.png".into(), road_mask: None });
        let after = evaluate(&m, &to_dump(&inst), EvalOptions::default()).unwrap();
        prop_assert!(same_metrics(&before, &after));
    }

    #[test]
    fn values_are_bounded_and_ar10_never_beats_ar100(seed in any::<u64>()) {
        let r = eval(&instance(seed), false);
        for c in r.per_category.iter().map(|c| c.metrics).chain([r.overall]) {
            for v in c.values() {
                prop_assert!(v == -1.0 || (0.0..=1.0).contains(&v), "{v}");
            }
            prop_assert!(c.ar_10 <= c.ar_100);
        }
    }

    #[test]
    fn perfect_detections_score_one(seed in any::<u64>()) {
        let mut inst = instance(seed);
        inst.dets = inst.gts.iter().map(|g| ODet { image: g.image, category: g.category, bbox: g.bbox, score: 1.0 }).collect();
        let r = eval(&inst, false);
        for c in &r.per_category {
            let has_gt = inst.gts.iter().any(|g| g.category == c.category_id);
            prop_assert_eq!(c.metrics.ap50_95, if has_gt { 1.0 } else { -1.0 });
            prop_assert_eq!(c.metrics.ar_100, if has_gt { 1.0 } else { -1.0 });
        }
    }
}
