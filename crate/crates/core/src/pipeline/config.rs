use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::eval::Scoring;
use crate::remote::RetryPolicy;
use crate::{Error, Result};

/// Environment variables holding bearer tokens for the remote services.
pub const EMBEDDING_TOKEN_VAR: &str = "MVGROUND_EMBEDDING_TOKEN";
pub const PARSER_TOKEN_VAR: &str = "MVGROUND_PARSER_TOKEN";
pub const JUDGE_TOKEN_VAR: &str = "MVGROUND_JUDGE_TOKEN";

/// Flat key-value run configuration, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Minimum segmentation confidence kept as a proposal.
    pub confidence_threshold: f64,
    /// Relative depth tolerance for a projected point to count as visible.
    pub visibility_threshold: f64,
    /// Proportional growth of each view's bounding rectangle.
    pub expansion: f64,
    /// Views stitched per proposal.
    pub n_frame: usize,
    /// Keep every `frame_interval`-th frame.
    pub frame_interval: usize,
    /// Maximum candidates shown to the judge at once.
    pub batch_limit: usize,

    pub judge_retries: u32,
    pub parser_retries: u32,
    pub retry_backoff_ms: Vec<u64>,
    pub max_answer_tokens: u32,

    pub embedding_endpoint: Option<String>,
    pub parser_endpoint: Option<String>,
    pub judge_endpoint: Option<String>,
    /// Dimension of the offline hash embedder used when no endpoint is set.
    pub embedding_dim: usize,

    /// Concurrent queries during benchmark runs.
    pub workers: usize,
    pub scoring: Scoring,

    pub export_sequences: Option<PathBuf>,
    pub export_projections: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: 0.2,
            visibility_threshold: 0.25,
            expansion: 0.25,
            n_frame: 5,
            frame_interval: 20,
            batch_limit: 4,
            judge_retries: 2,
            parser_retries: 2,
            retry_backoff_ms: vec![500, 2000],
            max_answer_tokens: 256,
            embedding_endpoint: None,
            parser_endpoint: None,
            judge_endpoint: None,
            embedding_dim: 16,
            workers: 4,
            scoring: Scoring::Iou,
            export_sequences: None,
            export_projections: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("confidence_threshold", self.confidence_threshold)?;
        unit("visibility_threshold", self.visibility_threshold)?;
        if !(self.expansion >= 0.0 && self.expansion.is_finite()) {
            return Err(Error::Config(format!(
                "expansion must be >= 0, got {}",
                self.expansion
            )));
        }
        if self.n_frame < 1 {
            return Err(Error::Config("n_frame must be at least 1".into()));
        }
        if self.frame_interval < 1 {
            return Err(Error::Config("frame_interval must be at least 1".into()));
        }
        if self.batch_limit < 2 {
            return Err(Error::Config(format!(
                "batch_limit must be at least 2, got {}",
                self.batch_limit
            )));
        }
        if self.workers < 1 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.embedding_dim < 1 {
            return Err(Error::Config("embedding_dim must be at least 1".into()));
        }
        Ok(())
    }

    fn backoff(&self) -> Vec<Duration> {
        self.retry_backoff_ms
            .iter()
            .map(|&ms| Duration::from_millis(ms))
            .collect()
    }

    pub fn judge_retry(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.judge_retries,
            backoff: self.backoff(),
        }
    }

    pub fn parser_retry(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.parser_retries,
            backoff: self.backoff(),
        }
    }

    /// Applies one `key=value` override, accepting short aliases
    /// (`theta`, `tau`, `alpha`, `L`, `interval`).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |e: &dyn std::fmt::Display| Error::Config(format!("{key}={value}: {e}"));
        let float = || value.parse::<f64>().map_err(|e| bad(&e));
        let int = || value.parse::<usize>().map_err(|e| bad(&e));
        match key {
            "theta" | "confidence_threshold" => self.confidence_threshold = float()?,
            "tau" | "visibility_threshold" => self.visibility_threshold = float()?,
            "alpha" | "expansion" => self.expansion = float()?,
            "n_frame" => self.n_frame = int()?,
            "interval" | "frame_interval" => self.frame_interval = int()?,
            "L" | "batch_limit" => self.batch_limit = int()?,
            "workers" => self.workers = int()?,
            _ => return Err(Error::Config(format!("unknown parameter `{key}`"))),
        }
        self.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_hyperparameters() {
        let c = PipelineConfig::default();
        assert_eq!(c.confidence_threshold, 0.2);
        assert_eq!(c.visibility_threshold, 0.25);
        assert_eq!(c.expansion, 0.25);
        assert_eq!(c.n_frame, 5);
        assert_eq!(c.frame_interval, 20);
        assert_eq!(c.batch_limit, 4);
        assert_eq!(c.judge_retry(), RetryPolicy::default());
        c.validate().unwrap();
    }

    #[test]
    fn partial_toml_keeps_defaults() {
        let c: PipelineConfig = toml::from_str("batch_limit = 6\nexpansion = 0.5\n").unwrap();
        assert_eq!(c.batch_limit, 6);
        assert_eq!(c.expansion, 0.5);
        assert_eq!(c.n_frame, 5);
        assert!(toml::from_str::<PipelineConfig>("bogus = 1\n").is_err());
    }

    #[test]
    fn validation_and_overrides() {
        let mut c = PipelineConfig::default();
        assert!(c.set("L", "1").is_err());
        c = PipelineConfig::default();
        c.set("L", "6").unwrap();
        c.set("tau", "0.5").unwrap();
        assert_eq!((c.batch_limit, c.visibility_threshold), (6, 0.5));
        assert!(c.clone().set("theta", "1.5").is_err());
        assert!(c.clone().set("alpha", "-0.1").is_err());
        assert!(c.clone().set("interval", "0").is_err());
        assert!(c.clone().set("n_frame", "0").is_err());
        assert!(c.clone().set("nope", "1").is_err());
    }
}
