//! Generation providers.
//!
//! A provider turns a prompt into a reply. Real endpoints and the
//! deterministic stubs share the [`Provider`] trait; caching, retries and
//! call counting are decorators that implement it as well.

mod cache;
mod http;
mod stub;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{CacheEntry, CachedProvider, ResponseCache};
pub use http::OpenAiCompatProvider;
pub use stub::{verdict_reply, FnProvider, StubBehavior, StubProvider};

/// Identity and sampling settings of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderSpec {
    pub name: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub endpoint: BTreeMap<String, String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_temperature() -> f64 {
    1.0
}

impl ProviderSpec {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            temperature: default_temperature(),
            endpoint: BTreeMap::new(),
            seed: None,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    /// Temperatures other than 0 and 1 are allowed but not comparable with
    /// the reference runs.
    pub fn is_reference_temperature(&self) -> bool {
        self.temperature == 0.0 || self.temperature == 1.0
    }
}

/// One generation call. `draw_index` distinguishes repeated queries of the
/// same prompt (one per judgment slot or retry).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationRequest {
    pub prompt: String,
    pub draw_index: u64,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, draw_index: u64) -> Self {
        Self {
            prompt: prompt.into(),
            draw_index,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProviderError {
    /// Worth retrying: timeouts, rate limits, 5xx.
    #[error("{provider}: transient failure: {message}")]
    Transient { provider: String, message: String },
    #[error("{provider}: {message}")]
    Fatal { provider: String, message: String },
    #[error("{provider}: gave up after {attempts} attempts; last error: {last}")]
    Exhausted {
        provider: String,
        attempts: usize,
        last: String,
    },
    #[error("provider config: {0}")]
    Config(String),
}

impl ProviderError {
    pub fn is_transient(&self) -> bool {
        matches!(self, ProviderError::Transient { .. })
    }
}

pub trait Provider: Send + Sync {
    fn spec(&self) -> &ProviderSpec;

    fn generate(&self, request: &GenerationRequest) -> Result<String, ProviderError>;

    fn name(&self) -> &str {
        &self.spec().name
    }
}

impl<P: Provider + ?Sized> Provider for Arc<P> {
    fn spec(&self) -> &ProviderSpec {
        (**self).spec()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String, ProviderError> {
        (**self).generate(request)
    }
}

impl<P: Provider + ?Sized> Provider for Box<P> {
    fn spec(&self) -> &ProviderSpec {
        (**self).spec()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String, ProviderError> {
        (**self).generate(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: usize,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            initial_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_attempts: usize) -> Self {
        Self {
            max_attempts,
            initial_backoff: Duration::ZERO,
            max_backoff: Duration::ZERO,
        }
    }
}

/// Retries transient failures with exponential backoff.
pub struct RetryingProvider<P> {
    inner: P,
    policy: RetryPolicy,
}

impl<P: Provider> RetryingProvider<P> {
    pub fn new(inner: P, policy: RetryPolicy) -> Self {
        Self { inner, policy }
    }
}

impl<P: Provider> Provider for RetryingProvider<P> {
    fn spec(&self) -> &ProviderSpec {
        self.inner.spec()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String, ProviderError> {
        let attempts = self.policy.max_attempts.max(1);
        let mut backoff = self.policy.initial_backoff;
        let mut last = String::new();
        for attempt in 0..attempts {
            match self.inner.generate(request) {
                Ok(reply) => return Ok(reply),
                Err(err) if err.is_transient() => {
                    log::debug!("{} attempt {} failed: {err}", self.name(), attempt + 1);
                    last = err.to_string();
                    if attempt + 1 < attempts && !backoff.is_zero() {
                        std::thread::sleep(backoff);
                        backoff = (backoff * 2).min(self.policy.max_backoff);
                    }
                }
                Err(err) => return Err(err),
            }
        }
        Err(ProviderError::Exhausted {
            provider: self.name().to_string(),
            attempts,
            last,
        })
    }
}

/// Counts calls that reach the wrapped provider.
pub struct CountingProvider<P> {
    inner: P,
    calls: AtomicUsize,
}

impl<P: Provider> CountingProvider<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<P: Provider> Provider for CountingProvider<P> {
    fn spec(&self) -> &ProviderSpec {
        self.inner.spec()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.generate(request)
    }
}

/// Builds a provider from its spec name.
///
/// Recognised names:
/// - `stub:acceptable`, `stub:unacceptable`: constant verdict replies
/// - `stub:alternating`: Acceptable on even draws, Unacceptable on odd
/// - `stub:flaky:<rate>`: Acceptable reply, garbage with probability `rate`
/// - `stub:echo`: returns the prompt
/// - `stub:no`: answers "No" (leak detection)
/// - `openai:<model>`: OpenAI-compatible chat endpoint; `endpoint.base_url`
///   and `endpoint.api_key_env` configure it
///
/// The synthetic-corpus stubs live in [`crate::synth`].
pub fn from_spec(spec: &ProviderSpec) -> Result<Arc<dyn Provider>, ProviderError> {
    if !spec.is_reference_temperature() {
        log::warn!(
            "{}: temperature {} is outside the reference settings {{0, 1}}",
            spec.name,
            spec.temperature
        );
    }
    let name = spec.name.as_str();
    if let Some(rest) = name.strip_prefix("stub:") {
        let behavior = match rest.split(':').collect::<Vec<_>>().as_slice() {
            ["acceptable"] => StubBehavior::Constant(stub::verdict_reply(true, "stub")),
            ["unacceptable"] => StubBehavior::Constant(stub::verdict_reply(false, "stub")),
            ["alternating"] => StubBehavior::Alternating(vec![
                stub::verdict_reply(true, "stub"),
                stub::verdict_reply(false, "stub"),
            ]),
            ["flaky", rate] => StubBehavior::Flaky {
                reply: stub::verdict_reply(true, "stub"),
                fail_rate: rate
                    .parse()
                    .map_err(|_| ProviderError::Config(format!("bad flaky rate in {name}")))?,
            },
            ["echo"] => StubBehavior::Echo,
            ["no"] => StubBehavior::Constant("No".into()),
            _ => {
                if let Some(p) = crate::synth::stub_from_spec(spec) {
                    return Ok(p);
                }
                return Err(ProviderError::Config(format!("unknown stub {name}")));
            }
        };
        return Ok(Arc::new(StubProvider::new(spec.clone(), behavior)));
    }
    if name.starts_with("openai:") {
        return Ok(Arc::new(OpenAiCompatProvider::from_spec(spec)?));
    }
    Err(ProviderError::Config(format!("unknown provider {name}")))
}

impl<P: Provider + ?Sized> Provider for &P {
    fn spec(&self) -> &ProviderSpec {
        (**self).spec()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String, ProviderError> {
        (**self).generate(request)
    }
}
