//! Run configuration loaded from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analytic::AnalyticConfig;
use crate::backbone::EncoderConfig;
use crate::bp_trainer::TrainerConfig;
use crate::error::{config_err, PalError, Result};
use crate::harness::{Method, SampleShape, StreamConfig};
use crate::prompts::PoolConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    /// Prompt init, up-sampler draw and batch shuffling.
    pub run_seed: u64,
    pub data_seed: u64,
    pub backbone_seed: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            run_seed: 0,
            data_seed: 1,
            backbone_seed: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub method: Method,
    /// Where `pal run` and `pal sweep` write their artifacts.
    pub output_dir: String,
    pub encoder: EncoderConfig,
    pub pool: PoolConfig,
    pub trainer: TrainerConfig,
    pub analytic: AnalyticConfig,
    pub stream: StreamConfig,
    pub seeds: Seeds,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: Method::default(),
            output_dir: "pal-out".to_string(),
            encoder: EncoderConfig::default(),
            pool: PoolConfig::default(),
            trainer: TrainerConfig::default(),
            analytic: AnalyticConfig::default(),
            stream: StreamConfig::default(),
            seeds: Seeds::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.output_dir.is_empty() {
            return config_err("output_dir", "must not be empty");
        }
        self.encoder.validate()?;
        self.pool.validate()?;
        self.trainer.validate()?;
        self.analytic.validate()?;
        self.stream.validate()?;
        if self.stream.feature_dim != self.encoder.input_dim {
            return config_err(
                "stream.feature_dim",
                format!(
                    "is {} but encoder.input_dim is {}",
                    self.stream.feature_dim, self.encoder.input_dim
                ),
            );
        }
        Ok(())
    }

    /// A scaled-down setup (D=8, one layer, 4 classes in 2 tasks) that runs
    /// in milliseconds. Handy for smoke tests and bindings.
    pub fn small() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.encoder.embed_dim = 8;
        cfg.encoder.num_heads = 2;
        cfg.encoder.num_layers = 1;
        cfg.encoder.ffn_dim = 8;
        cfg.encoder.prompt_layers = vec![0];
        cfg.encoder.image_tokens = 2;
        cfg.encoder.text_tokens = 2;
        cfg.encoder.input_dim = 4;
        cfg.stream.feature_dim = 4;
        cfg.stream.total_classes = 4;
        cfg.stream.num_tasks = 2;
        cfg.stream.train_per_class = 3;
        cfg.stream.test_per_class = 2;
        cfg.pool.pool_size = 2;
        cfg.pool.prompt_length = 1;
        cfg.trainer.epochs = 1;
        cfg.analytic.up_dim = 16;
        cfg
    }

    pub fn sample_shape(&self) -> SampleShape {
        SampleShape {
            image_tokens: self.encoder.image_tokens,
            text_tokens: self.encoder.text_tokens,
        }
    }

    /// Parses and validates TOML; errors carry `file:line`.
    pub fn from_toml_str(src: &str, file: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(src).map_err(|e| {
            let line = e.span().map(|s| line_of(src, s.start)).unwrap_or(1);
            PalError::ConfigAt {
                file: file.to_string(),
                line,
                message: e.message().to_string(),
            }
        })?;
        cfg.validate().map_err(|e| match e {
            PalError::Config { key, message } => PalError::ConfigAt {
                file: file.to_string(),
                line: locate_key(src, &key),
                message: format!("`{key}` {message}"),
            },
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let src = std::fs::read_to_string(path)?;
        RunConfig::from_toml_str(&src, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

/// Line of `section.field` in `src`, falling back to the section header and
/// then to line 1 when the value came from a default.
fn locate_key(src: &str, key: &str) -> usize {
    let (section, field) = key.split_once('.').unwrap_or(("", key));
    let mut in_section = section.is_empty();
    let mut header = None;
    for (i, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            in_section = line.trim_matches(|c| c == '[' || c == ']').trim() == section;
            if in_section {
                header = Some(i + 1);
            }
            continue;
        }
        if in_section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == field {
                    return i + 1;
                }
            }
        }
    }
    header.unwrap_or(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back = RunConfig::from_toml_str(&cfg.to_toml(), "x.toml").unwrap();
        assert_eq!(back, cfg);
        assert_eq!(RunConfig::from_toml_str("", "x.toml").unwrap(), cfg);
    }

    #[test]
    fn small_config_is_valid() {
        RunConfig::small().validate().unwrap();
    }

    #[test]
    fn invalid_value_points_at_its_line() {
        let src = "method = \"pal\"\n\n[stream]\ntotal_classes = 20\nnum_tasks = 3\n";
        let err = RunConfig::from_toml_str(src, "bad.toml").unwrap_err();
        assert!(err.is_config());
        assert!(err.to_string().starts_with("bad.toml:5:"), "{err}");
    }

    #[test]
    fn unknown_key_and_type_errors_are_located() {
        let err =
            RunConfig::from_toml_str("[pool]\npool_size = 4\nbogus = 1\n", "c.toml").unwrap_err();
        assert!(err.to_string().starts_with("c.toml:3:"), "{err}");
        let err = RunConfig::from_toml_str("[trainer]\nlr = \"fast\"\n", "c.toml").unwrap_err();
        assert!(err.to_string().starts_with("c.toml:2:"), "{err}");
        let err = RunConfig::from_toml_str("method = \"magic\"\n", "c.toml").unwrap_err();
        assert!(err.to_string().starts_with("c.toml:1:"), "{err}");
    }

    #[test]
    fn cross_field_mismatch_rejected() {
        let src = "[encoder]\ninput_dim = 16\n";
        let err = RunConfig::from_toml_str(src, "c.toml").unwrap_err();
        assert!(err.to_string().contains("stream.feature_dim"), "{err}");
    }
}
