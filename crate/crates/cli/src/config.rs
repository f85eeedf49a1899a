//! Run configuration: flags override env vars, which override the config file,
//! which overrides built-in defaults.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::CliError;

pub const ENV_INPAINT_URL: &str = "INPAINT_URL";
pub const ENV_DETECT_URL: &str = "DETECT_URL";
pub const ENV_CONFIG: &str = "SYNOE_CONFIG";

/// Keys accepted in the TOML config file. Every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub variant: Option<String>,
    pub proportion: Option<f64>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub prompts: Option<PathBuf>,
    pub inpaint_url: Option<String>,
    pub detect_url: Option<String>,
    pub mock: Option<bool>,
    pub box_threshold: Option<f64>,
    pub text_threshold: Option<f64>,
    pub max_in_flight: Option<usize>,
    pub max_retries: Option<u32>,
    /// Weights for 1, 2, 3, ... regions per image.
    pub count_weights: Option<Vec<f64>>,
    pub replaceable_classes: Option<Vec<String>>,
    pub road_crop_side: Option<u32>,
    /// Classes dropped when loading the input dataset.
    pub drop_classes: Option<Vec<String>>,
    pub mock_id_variant_rate: Option<f64>,
    pub mock_empty_rate: Option<f64>,
    pub detect_fixtures: Option<PathBuf>,
}

impl FileConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))
    }

    /// Loads `flag`, else `$SYNOE_CONFIG`, else returns the empty config.
    pub fn resolve(flag: Option<&Path>) -> Result<(Self, Option<PathBuf>), CliError> {
        let path = flag.map(Path::to_path_buf).or_else(|| env_nonempty(ENV_CONFIG).map(PathBuf::from));
        let Some(path) = path else {
            return Ok((Self::default(), None));
        };
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::Runtime(format!("cannot read config {}: {e}", path.display())))?;
        let cfg = Self::parse(&text, &path)?;
        // Relative paths in the file are relative to the file itself.
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let rebase = |p: Option<PathBuf>| p.map(|p| if p.is_relative() { base.join(p) } else { p });
        Ok((Self { prompts: rebase(cfg.prompts), detect_fixtures: rebase(cfg.detect_fixtures), ..cfg }, Some(path)))
    }
}

pub fn env_nonempty(key: &str) -> Option<String> {
    std::env::var(key).ok().filter(|v| !v.trim().is_empty())
}

/// First of flag, env var, file value.
pub fn layered<T>(flag: Option<T>, env: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(env).or(file)
}

/// Ordered key/value echo of a resolved configuration.
#[derive(Debug, Default, Clone)]
pub struct Echo(pub BTreeMap<String, serde_json::Value>);

impl Echo {
    pub fn set(&mut self, key: &str, value: impl serde::Serialize) {
        self.0.insert(key.to_string(), serde_json::to_value(value).expect("serializable config value"));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        assert_eq!(layered(Some(1), Some(2), Some(3)), Some(1));
        assert_eq!(layered(None, Some(2), Some(3)), Some(2));
        assert_eq!(layered(None, None, Some(3)), Some(3));
        assert_eq!(layered::<u8>(None, None, None), None);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let p = Path::new("c.toml");
        assert!(FileConfig::parse("seed = 3\nproportion = 0.5\n", p).is_ok());
        assert!(matches!(FileConfig::parse("sed = 3\n", p), Err(CliError::Validation(_))));
    }
}
