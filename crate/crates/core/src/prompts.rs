//! Unusual-object prompt lists and uniform prompt sampling.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::model::CategoryRegistry;

/// Household items and animals unusual in street scenes, shipped verbatim.
pub const BASE_PROMPTS: &str = include_str!("../data/prompts/base.txt");
/// Obstacle classes from LostAndFound used by the extended-prompt variant.
pub const LOSTANDFOUND_PROMPTS: &str = include_str!("../data/prompts/lostandfound_ext.txt");

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("prompt catalog is empty")]
    EmptyCatalog,
    #[error("failed to read prompt list {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptCatalog {
    base: Vec<String>,
    extended: Vec<String>,
    use_extended: bool,
}

fn key(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Splits a one-prompt-per-line list, skipping blanks and `#` comments.
pub fn parse_prompt_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

impl PromptCatalog {
    /// Builds a catalog, dropping duplicates (case-insensitive, first wins) and
    /// any entry that names an ID class of `registry`.
    pub fn new(
        base: Vec<String>,
        extended: Vec<String>,
        use_extended: bool,
        registry: &CategoryRegistry,
    ) -> Result<Self, CatalogError> {
        let mut seen = HashSet::new();
        let mut clean = |list: Vec<String>| -> Vec<String> {
            let mut out = Vec::new();
            for entry in list {
                let k = key(&entry);
                if k.is_empty() {
                    continue;
                }
                if registry.id_index_of(&k).is_some() {
                    tracing::warn!(prompt = %entry, "prompt collides with an ID class; dropped");
                    continue;
                }
                if !seen.insert(k) {
                    tracing::debug!(prompt = %entry, "duplicate prompt dropped");
                    continue;
                }
                out.push(entry.trim().to_string());
            }
            out
        };
        let base = clean(base);
        let extended = clean(extended);
        if base.is_empty() {
            return Err(CatalogError::EmptyCatalog);
        }
        Ok(Self { base, extended, use_extended })
    }

    /// The shipped lists.
    pub fn bundled(use_extended: bool, registry: &CategoryRegistry) -> Result<Self, CatalogError> {
        Self::new(parse_prompt_list(BASE_PROMPTS), parse_prompt_list(LOSTANDFOUND_PROMPTS), use_extended, registry)
    }

    /// A user-supplied base list; the bundled extension is kept for variants that use it.
    pub fn from_file(path: &Path, use_extended: bool, registry: &CategoryRegistry) -> Result<Self, CatalogError> {
        let text = fs::read_to_string(path)
            .map_err(|source| CatalogError::Io { path: path.display().to_string(), source })?;
        Self::new(parse_prompt_list(&text), parse_prompt_list(LOSTANDFOUND_PROMPTS), use_extended, registry)
    }

    pub fn base(&self) -> &[String] {
        &self.base
    }

    pub fn extended(&self) -> &[String] {
        &self.extended
    }

    pub fn uses_extended(&self) -> bool {
        self.use_extended
    }

    /// Prompts eligible for sampling.
    pub fn support(&self) -> impl Iterator<Item = &str> {
        let ext: &[String] = if self.use_extended { &self.extended } else { &[] };
        self.base.iter().chain(ext).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.base.len() + if self.use_extended { self.extended.len() } else { 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<&str, CatalogError> {
        let n = self.len();
        if n == 0 {
            return Err(CatalogError::EmptyCatalog);
        }
        let i = rng.random_range(0..n);
        Ok(if i < self.base.len() { &self.base[i] } else { &self.extended[i - self.base.len()] })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bundled_list_is_deduplicated() {
        let reg = CategoryRegistry::default();
        let c = PromptCatalog::bundled(false, &reg).unwrap();
        assert_eq!(parse_prompt_list(BASE_PROMPTS).len(), 86);
        assert_eq!(c.base().len(), 81);
        assert_eq!(c.base().iter().filter(|p| p.as_str() == "rabbit").count(), 1);
        assert_eq!(c.base().iter().filter(|p| p.as_str() == "robot").count(), 1);
    }

    #[test]
    fn singleton_catalog() {
        let reg = CategoryRegistry::default();
        let c = PromptCatalog::new(vec!["penguin".into()], vec![], false, &reg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            assert_eq!(c.sample(&mut rng).unwrap(), "penguin");
        }
    }

    #[test]
    fn extended_list_joins_support() {
        let reg = CategoryRegistry::default();
        let plain = PromptCatalog::bundled(false, &reg).unwrap();
        let ext = PromptCatalog::bundled(true, &reg).unwrap();
        assert!(!plain.support().any(|p| p == "cardboard"));
        assert!(ext.support().any(|p| p == "cardboard"));
        assert!(ext.support().any(|p| p == "tire"));
        assert_eq!(ext.len(), plain.len() + 9);
    }

    #[test]
    fn sampling_is_reproducible() {
        let reg = CategoryRegistry::default();
        let c = PromptCatalog::bundled(true, &reg).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| c.sample(&mut rng).unwrap().to_string()).collect::<Vec<_>>()
        };
        assert_eq!(draw(42), draw(42));
        assert_ne!(draw(42), draw(43));
    }

    #[test]
    fn id_class_collisions_are_filtered() {
        let reg = CategoryRegistry::default();
        let c = PromptCatalog::new(vec!["Car".into(), "penguin".into(), " TRUCK ".into()], vec![], false, &reg)
            .unwrap();
        assert_eq!(c.base(), ["penguin"]);
        assert!(matches!(
            PromptCatalog::new(vec!["car".into()], vec![], false, &reg),
            Err(CatalogError::EmptyCatalog)
        ));
    }
}
