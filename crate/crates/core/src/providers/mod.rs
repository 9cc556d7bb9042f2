//! Model access for every role in the pipeline.
//!
//! A [`Backend`] answers raw requests (a remote chat endpoint, or a
//! deterministic oracle). A [`ProviderSet`] binds backends to roles and adds
//! prompt rendering, caching, retries and rate limits. Each task runs through
//! its own [`Session`], which owns the task's [`Transcript`].

mod cache;
mod http;
mod prover;
mod retry;
mod scoring;
mod scripted;
mod template;
mod transcript;

pub use cache::{cache_key, CacheError, DirCache, MemoryCache, ResponseCache};
pub use http::{HttpBackend, HttpConfig};
pub use prover::{prove, ProofScore, ProverKind, NEGATIVE_TOKEN, POSITIVE_TOKEN};
pub use retry::{RateLimiter, RetryPolicy};
pub use scoring::{
    normalize_pair, score_from_distribution, softmax_pair, textual_fallback, TokenDistribution,
    TEXTUAL_NEGATIVE, TEXTUAL_POSITIVE, TEXTUAL_UNKNOWN,
};
pub use scripted::{FnBackend, SequenceBackend};
pub use template::{PromptTemplate, TemplateError, TemplateRegistry};
pub use transcript::{Transcript, TranscriptEntry};

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ProviderRole {
    Captioner,
    Decomposer,
    Retriever,
    Navigator,
    FactExtractor,
    TripletParser,
    Prover,
    Rewriter,
}

impl ProviderRole {
    pub const ALL: [ProviderRole; 8] = [
        ProviderRole::Captioner,
        ProviderRole::Decomposer,
        ProviderRole::Retriever,
        ProviderRole::Navigator,
        ProviderRole::FactExtractor,
        ProviderRole::TripletParser,
        ProviderRole::Prover,
        ProviderRole::Rewriter,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProviderRole::Captioner => "captioner",
            ProviderRole::Decomposer => "decomposer",
            ProviderRole::Retriever => "retriever",
            ProviderRole::Navigator => "navigator",
            ProviderRole::FactExtractor => "fact_extractor",
            ProviderRole::TripletParser => "triplet_parser",
            ProviderRole::Prover => "prover",
            ProviderRole::Rewriter => "rewriter",
        }
    }

    pub fn parse(s: &str) -> Option<ProviderRole> {
        ProviderRole::ALL.into_iter().find(|r| r.as_str() == s)
    }

    fn slot(self) -> usize {
        ProviderRole::ALL.iter().position(|r| *r == self).unwrap()
    }
}

impl fmt::Display for ProviderRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A frame (or other media) sent along with a prompt.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attachment {
    pub uri: String,
    pub content_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Attachment {
    /// A reference with no bytes behind it; hashed by its uri.
    pub fn named(uri: impl Into<String>) -> Self {
        let uri = uri.into();
        let content_hash = hex::encode(Sha256::digest(uri.as_bytes()));
        Attachment {
            uri,
            content_hash,
            path: None,
        }
    }

    /// An image file, hashed by content.
    pub fn file(path: &Path) -> std::io::Result<Self> {
        let bytes = std::fs::read(path)?;
        Ok(Attachment {
            uri: path.display().to_string(),
            content_hash: hex::encode(Sha256::digest(&bytes)),
            path: Some(path.to_path_buf()),
        })
    }
}

/// A fully rendered request as seen by a backend.
#[derive(Clone, Debug)]
pub struct ModelRequest {
    pub role: ProviderRole,
    pub template: String,
    pub prompt: String,
    /// The values the prompt was rendered from.
    pub args: BTreeMap<String, String>,
    pub attachments: Vec<Attachment>,
    /// Ask for first-token probabilities.
    pub logprobs: bool,
}

impl ModelRequest {
    pub fn arg(&self, name: &str) -> &str {
        self.args.get(name).map(String::as_str).unwrap_or("")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    #[serde(default)]
    pub distribution: Option<TokenDistribution>,
}

impl ModelResponse {
    pub fn text(text: impl Into<String>) -> Self {
        ModelResponse {
            text: text.into(),
            distribution: None,
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("rate limited")]
    RateLimited { retry_after_ms: Option<u64> },
    #[error("request rejected with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
}

impl BackendError {
    fn retryable(&self) -> bool {
        matches!(
            self,
            BackendError::Transport(_) | BackendError::RateLimited { .. }
        )
    }
}

pub trait Backend: Send + Sync {
    fn model_id(&self) -> &str;
    fn call(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError>;
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("transport error after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("endpoint rejected request ({status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("response carries no token probabilities and text fallback is disabled")]
    MissingLogprobs,
    #[error("no backend bound for role {0}")]
    NoBackend(ProviderRole),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Clone)]
struct Binding {
    backend: Arc<dyn Backend>,
    limiter: Option<Arc<RateLimiter>>,
}

/// Backends bound to roles, plus the shared call machinery.
pub struct ProviderSet {
    templates: TemplateRegistry,
    bindings: BTreeMap<ProviderRole, Binding>,
    default: Option<Binding>,
    cache: Option<Arc<dyn ResponseCache>>,
    retry: RetryPolicy,
    textual_fallback: bool,
    backend_calls: [AtomicU64; 8],
}

pub struct ProviderSetBuilder {
    set: ProviderSet,
}

impl ProviderSetBuilder {
    pub fn templates(mut self, templates: TemplateRegistry) -> Self {
        self.set.templates = templates;
        self
    }

    /// Backend for every role without its own binding.
    pub fn default_backend(mut self, backend: Arc<dyn Backend>) -> Self {
        self.set.default = Some(Binding {
            backend,
            limiter: None,
        });
        self
    }

    pub fn backend(mut self, role: ProviderRole, backend: Arc<dyn Backend>) -> Self {
        self.set.bindings.insert(
            role,
            Binding {
                backend,
                limiter: None,
            },
        );
        self
    }

    pub fn limited_backend(
        mut self,
        role: ProviderRole,
        backend: Arc<dyn Backend>,
        limiter: Arc<RateLimiter>,
    ) -> Self {
        self.set.bindings.insert(
            role,
            Binding {
                backend,
                limiter: Some(limiter),
            },
        );
        self
    }

    pub fn cache(mut self, cache: Arc<dyn ResponseCache>) -> Self {
        self.set.cache = Some(cache);
        self
    }

    pub fn retry(mut self, retry: RetryPolicy) -> Self {
        self.set.retry = retry;
        self
    }

    pub fn textual_fallback(mut self, enabled: bool) -> Self {
        self.set.textual_fallback = enabled;
        self
    }

    pub fn build(self) -> ProviderSet {
        self.set
    }
}

/// Outcome of a two-way probe.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinaryScore {
    pub value: f64,
    /// Derived from the text answer rather than token probabilities.
    pub low_fidelity: bool,
}

impl ProviderSet {
    pub fn builder() -> ProviderSetBuilder {
        ProviderSetBuilder {
            set: ProviderSet {
                templates: TemplateRegistry::builtin(),
                bindings: BTreeMap::new(),
                default: None,
                cache: None,
                retry: RetryPolicy::default(),
                textual_fallback: true,
                backend_calls: Default::default(),
            },
        }
    }

    pub fn templates(&self) -> &TemplateRegistry {
        &self.templates
    }

    pub fn model_id(&self, role: ProviderRole) -> Option<&str> {
        self.binding(role).ok().map(|b| b.backend.model_id())
    }

    fn binding(&self, role: ProviderRole) -> Result<&Binding, ProviderError> {
        self.bindings
            .get(&role)
            .or(self.default.as_ref())
            .ok_or(ProviderError::NoBackend(role))
    }

    /// Requests that reached a backend, i.e. were not served from cache.
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls
            .iter()
            .map(|c| c.load(Ordering::Relaxed))
            .sum()
    }

    pub fn backend_calls_for(&self, role: ProviderRole) -> u64 {
        self.backend_calls[role.slot()].load(Ordering::Relaxed)
    }

    pub fn session(&self) -> Session<'_> {
        Session {
            providers: self,
            transcript: Transcript::new(),
        }
    }
}

/// Per-task view of a [`ProviderSet`] that records every call.
pub struct Session<'p> {
    providers: &'p ProviderSet,
    transcript: Transcript,
}

impl<'p> Session<'p> {
    pub fn providers(&self) -> &'p ProviderSet {
        self.providers
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn transcript_mut(&mut self) -> &mut Transcript {
        &mut self.transcript
    }

    pub fn into_transcript(self) -> Transcript {
        self.transcript
    }

    /// Renders `template` and returns the (non-empty) completion text.
    pub fn complete(
        &mut self,
        template: &str,
        args: BTreeMap<String, String>,
        attachments: Vec<Attachment>,
    ) -> Result<String, ProviderError> {
        let (resp, idx) = self.call(template, args, attachments, false)?;
        if resp.text.trim().is_empty() {
            self.transcript.flag(idx, "empty-response");
            return Err(ProviderError::MalformedResponse("empty completion".into()));
        }
        Ok(resp.text)
    }

    /// Two-way confidence `p(positive) / (p(positive) + p(negative))` over the
    /// first generated token, with a text fallback when probabilities are
    /// missing.
    pub fn score_binary(
        &mut self,
        template: &str,
        args: BTreeMap<String, String>,
        attachments: Vec<Attachment>,
        positive: &str,
        negative: &str,
    ) -> Result<BinaryScore, ProviderError> {
        let (resp, idx) = self.call(template, args, attachments, true)?;
        if let Some(value) = resp
            .distribution
            .as_ref()
            .and_then(|d| score_from_distribution(d, positive, negative))
        {
            return Ok(BinaryScore {
                value,
                low_fidelity: false,
            });
        }
        if !self.providers.textual_fallback {
            self.transcript.flag(idx, "missing-logprobs");
            return Err(ProviderError::MissingLogprobs);
        }
        self.transcript.flag(idx, "low-fidelity");
        Ok(BinaryScore {
            value: textual_fallback(&resp.text, positive, negative),
            low_fidelity: true,
        })
    }

    fn call(
        &mut self,
        template_name: &str,
        args: BTreeMap<String, String>,
        attachments: Vec<Attachment>,
        logprobs: bool,
    ) -> Result<(ModelResponse, usize), ProviderError> {
        let set = self.providers;
        let template = set.templates.get(template_name)?;
        let prompt = template.render(&args)?;
        let role = template.role;
        let binding = set.binding(role)?;
        let model_id = binding.backend.model_id();
        let key = cache_key(role, &prompt, &attachments, model_id, logprobs);
        let request = ModelRequest {
            role,
            template: template_name.to_string(),
            prompt,
            args,
            attachments,
            logprobs,
        };

        let mut flags = Vec::new();
        let started = Instant::now();
        let cached = match &set.cache {
            Some(cache) => match cache.lookup(&key) {
                Ok(hit) => hit,
                Err(e) => {
                    log::warn!("cache lookup failed, refetching: {e}");
                    flags.push("cache-miss-error".to_string());
                    None
                }
            },
            None => None,
        };
        let cache_hit = cached.is_some();

        let mut retry_count = 0;
        let outcome = match cached {
            Some(resp) => Ok(resp),
            None => {
                let result = self.fetch(binding, role, &request, &mut retry_count);
                if let (Ok(resp), Some(cache)) = (&result, &set.cache) {
                    if let Err(e) = cache.store(&key, resp) {
                        log::warn!("cache store failed: {e}");
                        flags.push("cache-store-error".to_string());
                    }
                }
                result
            }
        };

        let (response, distribution, error) = match &outcome {
            Ok(r) => (Some(r.text.clone()), r.distribution.clone(), None),
            Err(e) => (None, None, Some(e.to_string())),
        };
        let idx = self.transcript.push(TranscriptEntry {
            role,
            template: request.template,
            prompt: request.prompt,
            args: request.args,
            attachments: request.attachments.into_iter().map(|a| a.uri).collect(),
            response,
            distribution,
            cache_hit,
            latency_ms: started.elapsed().as_millis() as u64,
            retry_count,
            flags,
            error,
        });
        outcome.map(|r| (r, idx))
    }

    fn fetch(
        &self,
        binding: &Binding,
        role: ProviderRole,
        request: &ModelRequest,
        retry_count: &mut u32,
    ) -> Result<ModelResponse, ProviderError> {
        let policy = &self.providers.retry;
        loop {
            if let Some(lim) = &binding.limiter {
                lim.acquire();
            }
            self.providers.backend_calls[role.slot()].fetch_add(1, Ordering::Relaxed);
            let err = match binding.backend.call(request) {
                Ok(resp) => return Ok(resp),
                Err(e) => e,
            };
            let attempts = *retry_count + 1;
            if !err.retryable() || *retry_count >= policy.max_retries {
                return Err(match err {
                    BackendError::Transport(message) => {
                        ProviderError::Transport { attempts, message }
                    }
                    BackendError::RateLimited { .. } => ProviderError::RateLimited { attempts },
                    BackendError::Rejected { status, body } => {
                        ProviderError::Rejected { status, body }
                    }
                    BackendError::Malformed(m) => ProviderError::MalformedResponse(m),
                });
            }
            let mut delay = policy.delay(*retry_count);
            if let BackendError::RateLimited {
                retry_after_ms: Some(ms),
            } = err
            {
                delay = delay.max(std::time::Duration::from_millis(ms));
            }
            log::debug!("{role} call failed ({err}), retrying in {delay:?}");
            std::thread::sleep(delay);
            *retry_count += 1;
        }
    }
}

/// Builds an argument map from `(name, value)` pairs.
pub fn args<I, K, V>(pairs: I) -> BTreeMap<String, String>
where
    I: IntoIterator<Item = (K, V)>,
    K: Into<String>,
    V: Into<String>,
{
    pairs
        .into_iter()
        .map(|(k, v)| (k.into(), v.into()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    fn fact_args(fact: &str) -> BTreeMap<String, String> {
        args([
            ("fact", fact),
            ("previous_captions", "(none)"),
            ("frame_index", "0"),
            ("timestamp_s", "0.0"),
        ])
    }

    #[test]
    fn echo_provider_is_deterministic() {
        let echo = Arc::new(FnBackend::new("echo", |r: &ModelRequest| {
            Ok(ModelResponse::text(format!("echo: {}", r.arg("question"))))
        }));
        let set = ProviderSet::builder().default_backend(echo).build();
        let mut s = set.session();
        let a = s.complete("fact", args([("question", "why?")]), vec![]).unwrap();
        let b = s.complete("fact", args([("question", "why?")]), vec![]).unwrap();
        assert_eq!(a, "echo: why?");
        assert_eq!(a, b);
        assert_eq!(s.transcript().len(), 2);
        assert_eq!(s.transcript().entries()[0].role, ProviderRole::FactExtractor);
    }

    #[test]
    fn retries_rate_limit_then_succeeds() {
        let backend = Arc::new(SequenceBackend::new(
            "seq",
            vec![
                Err(BackendError::RateLimited {
                    retry_after_ms: None,
                }),
                Err(BackendError::RateLimited {
                    retry_after_ms: None,
                }),
                Ok(ModelResponse::text("ok")),
            ],
        ));
        let set = ProviderSet::builder()
            .default_backend(backend)
            .retry(RetryPolicy::immediate(2))
            .build();
        let mut s = set.session();
        assert_eq!(s.complete("fact", args([("question", "q")]), vec![]).unwrap(), "ok");
        assert_eq!(s.transcript().entries()[0].retry_count, 2);
        assert_eq!(set.backend_calls(), 3);
    }

    #[test]
    fn transport_failure_after_retries() {
        let backend = Arc::new(FnBackend::new("down", |_: &ModelRequest| {
            Err(BackendError::Transport("connection refused".into()))
        }));
        let set = ProviderSet::builder()
            .default_backend(backend)
            .retry(RetryPolicy::immediate(2))
            .build();
        let mut s = set.session();
        let err = s.complete("fact", args([("question", "q")]), vec![]).unwrap_err();
        assert!(matches!(err, ProviderError::Transport { attempts: 3, .. }), "{err}");
        assert_eq!(set.backend_calls(), 3);
        let entry = &s.transcript().entries()[0];
        assert!(entry.error.is_some());
        assert_eq!(entry.retry_count, 2);
    }

    #[test]
    fn rejected_requests_are_not_retried() {
        let backend = Arc::new(FnBackend::new("bad", |_: &ModelRequest| {
            Err(BackendError::Rejected {
                status: 400,
                body: "bad".into(),
            })
        }));
        let set = ProviderSet::builder()
            .default_backend(backend)
            .retry(RetryPolicy::immediate(2))
            .build();
        assert!(set
            .session()
            .complete("fact", args([("question", "q")]), vec![])
            .is_err());
        assert_eq!(set.backend_calls(), 1);
    }

    #[test]
    fn empty_completion_is_malformed() {
        let backend = Arc::new(FnBackend::new("blank", |_: &ModelRequest| {
            Ok(ModelResponse::text("   "))
        }));
        let set = ProviderSet::builder().default_backend(backend).build();
        let mut s = set.session();
        assert!(matches!(
            s.complete("fact", args([("question", "q")]), vec![]),
            Err(ProviderError::MalformedResponse(_))
        ));
        assert!(s.transcript().has_flag("empty-response"));
    }

    #[test]
    fn cache_hit_on_repeat_and_miss_on_changed_fact() {
        let calls = Arc::new(Mutex::new(0));
        let c = calls.clone();
        let backend = Arc::new(FnBackend::new("cap", move |r: &ModelRequest| {
            *c.lock().unwrap() += 1;
            Ok(ModelResponse::text(format!("caption for {}", r.arg("fact"))))
        }));
        let set = ProviderSet::builder()
            .default_backend(backend)
            .cache(Arc::new(MemoryCache::new()))
            .build();
        let frame = vec![Attachment::named("synth://0/0")];
        let mut s = set.session();
        let a = s.complete("caption", fact_args("the boy runs"), frame.clone()).unwrap();
        let b = s.complete("caption", fact_args("the boy runs"), frame.clone()).unwrap();
        assert_eq!(a, b);
        let hits: Vec<bool> = s.transcript().entries().iter().map(|e| e.cache_hit).collect();
        assert_eq!(hits, vec![false, true]);
        s.complete("caption", fact_args("the girl runs"), frame).unwrap();
        assert_eq!(*calls.lock().unwrap(), 2);
        assert_eq!(s.transcript().len(), 3);
    }

    #[test]
    fn corrupt_cache_entry_refetches() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Arc::new(DirCache::open(dir.path()).unwrap());
        let backend = Arc::new(FnBackend::new("m", |_: &ModelRequest| {
            Ok(ModelResponse::text("fresh"))
        }));
        let set = ProviderSet::builder()
            .default_backend(backend)
            .cache(cache.clone())
            .build();
        let a = args([("question", "q")]);
        set.session().complete("fact", a.clone(), vec![]).unwrap();
        for entry in std::fs::read_dir(dir.path()).unwrap() {
            std::fs::write(entry.unwrap().path(), b"garbage").unwrap();
        }
        let mut s = set.session();
        assert_eq!(s.complete("fact", a.clone(), vec![]).unwrap(), "fresh");
        assert!(!s.transcript().entries()[0].cache_hit);
        assert!(s.transcript().has_flag("cache-miss-error"));
        assert_eq!(set.backend_calls(), 2);
        // repaired by the refetch
        let mut s = set.session();
        s.complete("fact", a, vec![]).unwrap();
        assert!(s.transcript().entries()[0].cache_hit);
    }

    #[test]
    fn score_binary_from_distribution_and_fallback() {
        let backend = Arc::new(FnBackend::new("prv", |r: &ModelRequest| {
            assert!(r.logprobs);
            if r.arg("statement") == "sure" {
                Ok(ModelResponse {
                    text: "True".into(),
                    distribution: Some(TokenDistribution::from_logits([("True", 2.0), ("False", 0.0)])),
                })
            } else {
                Ok(ModelResponse::text("False"))
            }
        }));
        let set = ProviderSet::builder().default_backend(backend).build();
        let mut s = set.session();
        let base = |st: &str| {
            args([
                ("statement", st),
                ("moment_start", "0"),
                ("moment_end", "3"),
                ("start_s", "0"),
                ("end_s", "3"),
            ])
        };
        let sure = s.score_binary("verify", base("sure"), vec![], "True", "False").unwrap();
        assert!((sure.value - 0.880_797).abs() < 1e-4);
        assert!(!sure.low_fidelity);
        let text = s.score_binary("verify", base("other"), vec![], "True", "False").unwrap();
        assert_eq!(text.value, TEXTUAL_NEGATIVE);
        assert!(text.low_fidelity);
        assert!(s.transcript().has_flag("low-fidelity"));

        let strict = ProviderSet::builder()
            .default_backend(Arc::new(FnBackend::new("t", |_: &ModelRequest| {
                Ok(ModelResponse::text("True"))
            })))
            .textual_fallback(false)
            .build();
        assert!(matches!(
            strict.session().score_binary("verify", base("x"), vec![], "True", "False"),
            Err(ProviderError::MissingLogprobs)
        ));
    }

    #[test]
    fn role_bindings_override_default() {
        let set = ProviderSet::builder()
            .default_backend(Arc::new(FnBackend::new("a", |_: &ModelRequest| {
                Ok(ModelResponse::text("default"))
            })))
            .backend(
                ProviderRole::Navigator,
                Arc::new(FnBackend::new("b", |_: &ModelRequest| {
                    Ok(ModelResponse::text("navigator"))
                })),
            )
            .build();
        let mut s = set.session();
        assert_eq!(
            s.complete("navigate", args([("question", "q"), ("question_type", "t")]), vec![])
                .unwrap(),
            "navigator"
        );
        assert_eq!(s.complete("fact", args([("question", "q")]), vec![]).unwrap(), "default");
        assert_eq!(set.model_id(ProviderRole::Navigator), Some("b"));
        let unbound = ProviderSet::builder().build();
        assert!(matches!(
            unbound.session().complete("fact", args([("question", "q")]), vec![]),
            Err(ProviderError::NoBackend(ProviderRole::FactExtractor))
        ));
    }
}
