//! Run configuration file.
//!
//! ```toml
//! [run]
//! grounding_mode = "grounded"      # grounded | full_video | ground_truth_intervals
//! video_source = "frames"          # frames | synthetic
//! frames_dir = "data/frames"
//! cache_dir = "cache"
//!
//! [default]                        # used by every role without its own section
//! kind = "http"
//! endpoint_url = "http://localhost:8000/v1/chat/completions"
//! model_id = "llama-3-8b-instruct"
//! api_key_env = "LLM_API_KEY"
//!
//! [prover]
//! kind = "http"
//! endpoint_url = "http://localhost:8001/v1/chat/completions"
//! model_id = "video-llava"
//! ```
//!
//! API keys are only ever read from the environment variable named by
//! `api_key_env`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::grounding::{CaptionStore, DirectorySource, GroundingMode, VideoSource};
use crate::providers::{
    Backend, DirCache, HttpBackend, HttpConfig, ProverKind, ProviderRole, ProviderSet, RateLimiter,
    RetryPolicy, TemplateRegistry,
};
use crate::synth::{LexicalBiasOracle, SynthSource, TemplateRewriter, WorldOracle, WorldParams};
use crate::tree::{Expansion, TreeConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProverStyle {
    #[default]
    Video,
    Image,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VideoSourceKind {
    #[default]
    Frames,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub frames_per_video: usize,
    pub max_depth: u32,
    pub prover: ProverStyle,
    pub prover_frame_count: usize,
    pub look_around_window: usize,
    pub grounding_mode: GroundingMode,
    pub expansion: Expansion,
    pub format_retries: u32,
    pub video_source: VideoSourceKind,
    pub frames_dir: Option<PathBuf>,
    pub frame_interval_s: f64,
    pub captions_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    /// `{task_id: [start_s, end_s]}` for ground-truth grounding.
    pub intervals: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub concurrency: usize,
    pub max_retries: u32,
    pub retry_base_delay_ms: u64,
    pub textual_fallback: bool,
    /// Share of failed tasks above which a run exits with status 3.
    pub failure_threshold: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            frames_per_video: 24,
            max_depth: 5,
            prover: ProverStyle::Video,
            prover_frame_count: 8,
            look_around_window: 8,
            grounding_mode: GroundingMode::Grounded,
            expansion: Expansion::Dynamic,
            format_retries: 2,
            video_source: VideoSourceKind::Frames,
            frames_dir: None,
            frame_interval_s: 1.0,
            captions_dir: None,
            cache_dir: None,
            intervals: None,
            templates: None,
            concurrency: 4,
            max_retries: 2,
            retry_base_delay_ms: 250,
            textual_fallback: true,
            failure_threshold: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    /// Answers every pipeline role from synthetic worlds.
    OracleWorld,
    /// Blind prober keyed on word overlap.
    OracleLexical,
    /// Deterministic distractor rewriter for synthetic tasks.
    TemplateRewriter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSpec {
    pub kind: BackendKind,
    pub endpoint_url: Option<String>,
    pub model_id: Option<String>,
    pub api_key_env: Option<String>,
    pub temperature: Option<f64>,
    pub top_logprobs: Option<u32>,
    pub timeout_s: Option<u64>,
    pub requests_per_second: Option<f64>,
    pub burst: Option<u32>,
    /// Prover score jitter for `oracle_world`.
    pub noise: Option<f64>,
}

impl ProviderSpec {
    pub fn of_kind(kind: BackendKind) -> Self {
        ProviderSpec {
            kind,
            endpoint_url: None,
            model_id: None,
            api_key_env: None,
            temperature: None,
            top_logprobs: None,
            timeout_s: None,
            requests_per_second: None,
            burst: None,
            noise: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub run: RunSection,
    /// `default` or a role name (`prover`, `captioner`, ...).
    #[serde(flatten)]
    pub providers: BTreeMap<String, ProviderSpec>,
}

impl RunConfig {
    pub fn from_toml_str(src: &str) -> Result<Self, HarnessError> {
        let cfg: RunConfig = toml::from_str(src).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&src)
    }

    /// A configuration answering everything from synthetic worlds.
    pub fn synthetic(noise: f64) -> Self {
        let mut cfg = RunConfig::default();
        cfg.run.video_source = VideoSourceKind::Synthetic;
        let mut spec = ProviderSpec::of_kind(BackendKind::OracleWorld);
        spec.noise = Some(noise);
        cfg.providers.insert("default".into(), spec);
        cfg.providers.insert("prover_blind".into(), ProviderSpec::of_kind(BackendKind::OracleLexical));
        cfg.providers.insert("rewriter".into(), ProviderSpec::of_kind(BackendKind::TemplateRewriter));
        cfg
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let r = &self.run;
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if r.frames_per_video == 0 || r.prover_frame_count == 0 || r.look_around_window == 0 || r.concurrency == 0 {
            return bad("frame counts, window and concurrency must be at least 1");
        }
        if r.max_depth == 0 {
            return bad("max_depth must be at least 1");
        }
        if !(0.0..=1.0).contains(&r.failure_threshold) {
            return bad("failure_threshold must be in [0, 1]");
        }
        for name in self.providers.keys() {
            if name != "default" && name != "prover_blind" && ProviderRole::parse(name).is_none() {
                return Err(HarnessError::Config(format!("unknown provider section [{name}]")));
            }
        }
        for (name, spec) in &self.providers {
            if spec.kind == BackendKind::Http && (spec.endpoint_url.is_none() || spec.model_id.is_none()) {
                return Err(HarnessError::Config(format!(
                    "[{name}] needs endpoint_url and model_id"
                )));
            }
        }
        Ok(())
    }

    /// Hash of the configuration, for telling runs apart in reports.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }

    pub fn tree_config(&self) -> TreeConfig {
        let frames = self.run.prover_frame_count;
        TreeConfig {
            max_depth: self.run.max_depth,
            expansion: self.run.expansion,
            format_retries: self.run.format_retries,
            prover: match self.run.prover {
                ProverStyle::Video => ProverKind::Video { frames },
                ProverStyle::Image => ProverKind::Image { frames },
            },
            look_around_window: self.run.look_around_window,
            grounding_mode: self.run.grounding_mode,
        }
    }

    pub fn world_params(&self) -> WorldParams {
        WorldParams {
            num_frames: self.run.frames_per_video,
            look_around_window: self.run.look_around_window,
            ..WorldParams::default()
        }
    }

    fn backend(&self, spec: &ProviderSpec) -> Result<Arc<dyn Backend>, HarnessError> {
        Ok(match spec.kind {
            BackendKind::Http => {
                let mut c = HttpConfig::new(
                    spec.endpoint_url.clone().unwrap_or_default(),
                    spec.model_id.clone().unwrap_or_default(),
                );
                if let Some(var) = &spec.api_key_env {
                    c.api_key = Some(std::env::var(var).map_err(|_| {
                        HarnessError::Config(format!("environment variable {var} is not set"))
                    })?);
                }
                if let Some(t) = spec.temperature {
                    c.temperature = t;
                }
                if let Some(k) = spec.top_logprobs {
                    c.top_logprobs = k;
                }
                if let Some(s) = spec.timeout_s {
                    c.timeout = Duration::from_secs(s);
                }
                Arc::new(HttpBackend::new(c))
            }
            BackendKind::OracleWorld => Arc::new(WorldOracle::new(self.world_params(), spec.noise.unwrap_or(0.0))),
            BackendKind::OracleLexical => Arc::new(LexicalBiasOracle),
            BackendKind::TemplateRewriter => Arc::new(TemplateRewriter),
        })
    }

    /// Binds a backend to every role. Roles without a section use `[default]`;
    /// with `blind` the prover role uses `[prover_blind]` when present.
    /// Roles sharing an endpoint share one rate limiter.
    pub fn build_providers(&self, blind: bool) -> Result<ProviderSet, HarnessError> {
        let templates = match &self.run.templates {
            Some(p) => TemplateRegistry::with_overrides(p).map_err(|e| HarnessError::Config(e.to_string()))?,
            None => TemplateRegistry::builtin(),
        };
        let mut builder = ProviderSet::builder()
            .templates(templates)
            .retry(RetryPolicy {
                max_retries: self.run.max_retries,
                base_delay_ms: self.run.retry_base_delay_ms,
                ..RetryPolicy::default()
            })
            .textual_fallback(self.run.textual_fallback);
        if let Some(dir) = &self.run.cache_dir {
            let cache = DirCache::open(dir).map_err(|e| HarnessError::Config(e.to_string()))?;
            builder = builder.cache(Arc::new(cache));
        }
        let mut built: BTreeMap<String, (Arc<dyn Backend>, Option<Arc<RateLimiter>>)> = BTreeMap::new();
        let mut limiters: BTreeMap<String, Arc<RateLimiter>> = BTreeMap::new();
        for role in ProviderRole::ALL {
            let section = if blind && role == ProviderRole::Prover && self.providers.contains_key("prover_blind") {
                "prover_blind"
            } else if self.providers.contains_key(role.as_str()) {
                role.as_str()
            } else if self.providers.contains_key("default") {
                "default"
            } else {
                continue;
            };
            if !built.contains_key(section) {
                let spec = &self.providers[section];
                let limiter = match (spec.requests_per_second, &spec.endpoint_url) {
                    (Some(rps), endpoint) => {
                        let key = endpoint.clone().unwrap_or_else(|| section.to_string());
                        Some(
                            limiters
                                .entry(key)
                                .or_insert_with(|| Arc::new(RateLimiter::new(rps, spec.burst.unwrap_or(1))))
                                .clone(),
                        )
                    }
                    (None, _) => None,
                };
                built.insert(section.to_string(), (self.backend(spec)?, limiter));
            }
            let (backend, limiter) = built[section].clone();
            builder = match limiter {
                Some(l) => builder.limited_backend(role, backend, l),
                None => builder.backend(role, backend),
            };
        }
        Ok(builder.build())
    }

    pub fn video_source(&self) -> Result<Box<dyn VideoSource>, HarnessError> {
        Ok(match self.run.video_source {
            VideoSourceKind::Synthetic => Box::new(SynthSource {
                params: self.world_params(),
            }),
            VideoSourceKind::Frames => Box::new(DirectorySource {
                root: self
                    .run
                    .frames_dir
                    .clone()
                    .ok_or_else(|| HarnessError::Config("frames_dir is required for video_source = \"frames\"".into()))?,
                frames_per_video: self.run.frames_per_video,
                frame_interval_s: self.run.frame_interval_s,
            }),
        })
    }

    pub fn caption_store(&self) -> Option<CaptionStore> {
        self.run.captions_dir.as_ref().map(CaptionStore::new)
    }

    pub fn intervals(&self) -> Result<Option<BTreeMap<String, (f64, f64)>>, HarnessError> {
        let Some(path) = &self.run.intervals else {
            return Ok(None);
        };
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }
}
