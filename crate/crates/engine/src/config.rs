use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::client::{HttpClient, MockClient, ReplayClient, StageClient};
use crate::error::EngineError;
use crate::manifest::ManifestRecord;
use crate::phrases::DEFAULT_ABSTRACT_NOUNS;
use crate::stages::{GroundingOptions, DEFAULT_GROUND_THRESHOLD};

/// Where the image caption comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionSource {
    /// Ask the caption capability.
    #[default]
    Model,
    /// Use the manifest's `caption` field, e.g. conversation responses
    /// treated as captions.
    Manifest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientKind {
    #[default]
    Mock,
    Replay,
    Http,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientConfig {
    pub kind: ClientKind,
    /// Fixture file for `replay`.
    pub fixture: Option<PathBuf>,
    /// Base URL for `http`; the endpoint environment variables win.
    pub endpoint: Option<String>,
}

/// Manifest-level admission rules.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageFilter {
    pub min_width: f64,
    pub min_height: f64,
    /// When non-empty, an image needs at least one of these tags.
    pub allow_tags: Vec<String>,
    pub deny_tags: Vec<String>,
}

impl ImageFilter {
    pub fn check(&self, rec: &ManifestRecord) -> Result<(), String> {
        if rec.width < self.min_width || rec.height < self.min_height {
            return Err(format!(
                "resolution {}x{} below {}x{}",
                rec.width, rec.height, self.min_width, self.min_height
            ));
        }
        if let Some(t) = rec.tags.iter().find(|t| self.deny_tags.contains(t)) {
            return Err(format!("denied tag {t:?}"));
        }
        if !self.allow_tags.is_empty() && !rec.tags.iter().any(|t| self.allow_tags.contains(t)) {
            return Err("no allowed tag".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub ground_threshold: f64,
    pub keep_all_boxes: bool,
    /// Images processed at once; 0 means one per available core.
    pub jobs: usize,
    pub retries: u32,
    pub backoff_ms: u64,
    pub timeout_ms: u64,
    pub caption_source: CaptionSource,
    pub blocklist: Vec<String>,
    pub filter: ImageFilter,
    pub client: ClientConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            ground_threshold: DEFAULT_GROUND_THRESHOLD,
            keep_all_boxes: true,
            jobs: 0,
            retries: 2,
            backoff_ms: 0,
            timeout_ms: 30_000,
            caption_source: CaptionSource::Model,
            blocklist: DEFAULT_ABSTRACT_NOUNS
                .iter()
                .map(|s| s.to_string())
                .collect(),
            filter: ImageFilter::default(),
            client: ClientConfig::default(),
        }
    }
}

impl EngineConfig {
    /// Captions come from the manifest; every later stage is unchanged.
    pub fn conversation() -> Self {
        EngineConfig {
            caption_source: CaptionSource::Manifest,
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, EngineError> {
        let cfg: EngineConfig =
            toml::from_str(text).map_err(|e| EngineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, EngineError> {
        let text = std::fs::read_to_string(path).map_err(|e| EngineError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if !self.ground_threshold.is_finite() || self.ground_threshold < 0.0 {
            return Err(EngineError::Config(format!(
                "ground_threshold must be a non-negative number, got {}",
                self.ground_threshold
            )));
        }
        if self.timeout_ms == 0 {
            return Err(EngineError::Config("timeout_ms must be positive".into()));
        }
        if self.client.kind == ClientKind::Replay && self.client.fixture.is_none() {
            return Err(EngineError::Config(
                "replay client needs a fixture path".into(),
            ));
        }
        Ok(())
    }

    pub fn grounding(&self) -> GroundingOptions {
        GroundingOptions {
            threshold: self.ground_threshold,
            keep_all: self.keep_all_boxes,
        }
    }

    pub fn worker_count(&self) -> usize {
        if self.jobs > 0 {
            self.jobs
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    /// Builds the configured client. Relative fixture paths resolve
    /// against `base_dir`.
    pub fn build_client(&self, base_dir: &Path) -> Result<Arc<dyn StageClient>, EngineError> {
        Ok(match self.client.kind {
            ClientKind::Mock => Arc::new(MockClient),
            ClientKind::Replay => {
                let p = self.client.fixture.as_ref().expect("validated");
                let p = if p.is_relative() {
                    base_dir.join(p)
                } else {
                    p.clone()
                };
                Arc::new(ReplayClient::load(&p).map_err(|e| EngineError::Config(e.to_string()))?)
            }
            ClientKind::Http => Arc::new(
                HttpClient::from_env(self.client.endpoint.as_deref(), self.timeout())
                    .map_err(|e| EngineError::Config(e.to_string()))?,
            ),
        })
    }
}
