//! Generation policies for the dataset variants.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::SMALL_CROP_SIDE;
use crate::model::{CategoryRegistry, UnknownVariant, Variant};

/// Classes replaced by default.
pub const DEFAULT_REPLACEABLE: [&str; 4] = ["car", "truck", "trailer", "pedestrian"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("proportion {0} outside [0, 1]")]
    Proportion(f64),
    #[error("policy enables neither replacement nor road placement")]
    NoTargets,
    #[error("per-image count distribution has no positive weight")]
    EmptyCountDistribution,
    #[error("replaceable class {0:?} is not in the registry")]
    UnknownClass(String),
}

/// Distribution of the number of regions attempted per image, as `(count, weight)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CountDistribution(pub Vec<(u32, f64)>);

impl Default for CountDistribution {
    fn default() -> Self {
        Self(vec![(1, 1.0), (2, 1.0), (3, 1.0)])
    }
}

impl CountDistribution {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let ok = self.0.iter().all(|&(_, w)| w.is_finite() && w >= 0.0) && self.0.iter().any(|&(_, w)| w > 0.0);
        if ok {
            Ok(())
        } else {
            Err(PolicyError::EmptyCountDistribution)
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let index = WeightedIndex::new(self.0.iter().map(|&(_, w)| w)).expect("validated count distribution");
        self.0[index.sample(rng)].0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantPolicy {
    pub variant: Variant,
    pub replace_id_instances: bool,
    pub use_lf_extended_prompts: bool,
    pub road_region_inpaintings: bool,
    pub keep_partial_id: bool,
    pub replaceable_classes: Vec<String>,
    pub per_image_count_dist: CountDistribution,
    pub ood_image_proportion: f64,
    /// Side of road-placement crops.
    pub road_crop_side: u32,
}

impl VariantPolicy {
    fn base(variant: Variant, replace: bool, lf: bool, road: bool, partial: bool) -> Self {
        Self {
            variant,
            replace_id_instances: replace,
            use_lf_extended_prompts: lf,
            road_region_inpaintings: road,
            keep_partial_id: partial,
            replaceable_classes: DEFAULT_REPLACEABLE.iter().map(|s| s.to_string()).collect(),
            per_image_count_dist: CountDistribution::default(),
            ood_image_proportion: 1.0,
            road_crop_side: SMALL_CROP_SIDE,
        }
    }

    pub fn with_proportion(mut self, p: f64) -> Self {
        self.ood_image_proportion = p;
        self
    }

    pub fn validate(&self, registry: &CategoryRegistry) -> Result<(), PolicyError> {
        if !(0.0..=1.0).contains(&self.ood_image_proportion) {
            return Err(PolicyError::Proportion(self.ood_image_proportion));
        }
        if !self.replace_id_instances && !self.road_region_inpaintings {
            return Err(PolicyError::NoTargets);
        }
        self.per_image_count_dist.validate()?;
        if self.replace_id_instances {
            for c in &self.replaceable_classes {
                if registry.id_index_of(c).is_none() {
                    return Err(PolicyError::UnknownClass(c.clone()));
                }
            }
        }
        Ok(())
    }

    /// Registry indices of the replaceable classes that exist in `registry`.
    pub fn replaceable_indices(&self, registry: &CategoryRegistry) -> Vec<u32> {
        self.replaceable_classes.iter().filter_map(|c| registry.id_index_of(c)).collect()
    }
}

/// Flags for each generated variant:
///
/// | variant | replace | extended prompts | road | keep partial ID |
/// |---------|---------|------------------|------|-----------------|
/// | V1      | yes     |                  |      | yes             |
/// | V2      | yes     | yes              |      | yes             |
/// | V3      |         |                  | yes  |                 |
/// | V4      | yes     |                  |      |                 |
/// | V5      | yes     |                  | yes  | yes             |
pub fn select_variant(variant: Variant) -> Result<VariantPolicy, UnknownVariant> {
    let p = match variant {
        Variant::V1 => VariantPolicy::base(variant, true, false, false, true),
        Variant::V2 => VariantPolicy::base(variant, true, true, false, true),
        Variant::V3 => VariantPolicy::base(variant, false, false, true, false),
        Variant::V4 => VariantPolicy::base(variant, true, false, false, false),
        Variant::V5 => VariantPolicy::base(variant, true, false, true, true),
        Variant::Original => return Err(UnknownVariant(variant.as_str().into())),
    };
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn flags(v: Variant) -> (bool, bool, bool, bool) {
        let p = select_variant(v).unwrap();
        (p.replace_id_instances, p.use_lf_extended_prompts, p.road_region_inpaintings, p.keep_partial_id)
    }

    #[test]
    fn variant_table() {
        assert_eq!(flags(Variant::V1), (true, false, false, true));
        assert_eq!(flags(Variant::V2), (true, true, false, true));
        assert_eq!(flags(Variant::V3), (false, false, true, false));
        assert_eq!(flags(Variant::V4), (true, false, false, false));
        assert_eq!(flags(Variant::V5), (true, false, true, true));
        assert!(select_variant(Variant::Original).is_err());
        assert!("V9".parse::<Variant>().is_err());
    }

    #[test]
    fn validation() {
        let reg = CategoryRegistry::default();
        for v in Variant::GENERATED {
            select_variant(v).unwrap().validate(&reg).unwrap();
        }
        let p = select_variant(Variant::V1).unwrap().with_proportion(1.5);
        assert_eq!(p.validate(&reg), Err(PolicyError::Proportion(1.5)));
        let mut p = select_variant(Variant::V1).unwrap();
        p.replaceable_classes.push("tram".into());
        assert!(matches!(p.validate(&reg), Err(PolicyError::UnknownClass(_))));
        p.replaceable_classes.pop();
        p.per_image_count_dist = CountDistribution(vec![(1, 0.0)]);
        assert_eq!(p.validate(&reg), Err(PolicyError::EmptyCountDistribution));
    }

    #[test]
    fn default_count_distribution_is_uniform_on_one_to_three() {
        let d = CountDistribution::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut hist = [0usize; 4];
        for _ in 0..30_000 {
            hist[d.sample(&mut rng) as usize] += 1;
        }
        assert_eq!(hist[0], 0);
        for &c in &hist[1..] {
            // 3 sigma around 10000 with p = 1/3.
            assert!((c as f64 - 10_000.0).abs() < 3.0 * (30_000.0_f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt(), "{hist:?}");
        }
    }
}
