use super::{GenerationRequest, Provider, ProviderError, ProviderSpec};
use crate::rng::keyed_uniform;

/// Formats a well-formed evaluation reply.
pub fn verdict_reply(acceptable: bool, rationale: &str) -> String {
    let token = if acceptable { "ACCEPTABLE" } else { "UNACCEPTABLE" };
    format!("Evaluation: {token}\nRationale: {rationale}")
}

#[derive(Debug, Clone)]
pub enum StubBehavior {
    Constant(String),
    /// Cycles through the replies by draw index.
    Alternating(Vec<String>),
    /// Returns `reply`, or an unparseable line with probability `fail_rate`
    /// (keyed on seed, prompt and draw index).
    Flaky {
        reply: String,
        fail_rate: f64,
    },
    Echo,
    /// Reply `i` for draw index `i`; the last reply repeats.
    Script(Vec<String>),
    /// Always a transient failure.
    Fail,
}

/// Deterministic offline provider.
#[derive(Debug, Clone)]
pub struct StubProvider {
    spec: ProviderSpec,
    behavior: StubBehavior,
}

impl StubProvider {
    pub fn new(spec: ProviderSpec, behavior: StubBehavior) -> Self {
        Self { spec, behavior }
    }

    pub fn constant(name: &str, reply: impl Into<String>) -> Self {
        Self::new(ProviderSpec::new(name), StubBehavior::Constant(reply.into()))
    }
}

impl Provider for StubProvider {
    fn spec(&self) -> &ProviderSpec {
        &self.spec
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String, ProviderError> {
        let idx = request.draw_index as usize;
        match &self.behavior {
            StubBehavior::Constant(reply) => Ok(reply.clone()),
            StubBehavior::Alternating(replies) | StubBehavior::Script(replies) if replies.is_empty() => {
                Err(ProviderError::Config(format!("{}: empty script", self.spec.name)))
            }
            StubBehavior::Alternating(replies) => Ok(replies[idx % replies.len()].clone()),
            StubBehavior::Script(replies) => Ok(replies[idx.min(replies.len() - 1)].clone()),
            StubBehavior::Flaky { reply, fail_rate } => {
                let seed = self.spec.seed.unwrap_or(0).to_le_bytes();
                let u = keyed_uniform([
                    seed.as_slice(),
                    request.prompt.as_bytes(),
                    &request.draw_index.to_le_bytes(),
                ]);
                if u < *fail_rate {
                    Ok("I think it depends.".to_string())
                } else {
                    Ok(reply.clone())
                }
            }
            StubBehavior::Echo => Ok(request.prompt.clone()),
            StubBehavior::Fail => Err(ProviderError::Transient {
                provider: self.spec.name.clone(),
                message: "timed out".into(),
            }),
        }
    }
}

/// Provider backed by a closure; handy for tests.
pub struct FnProvider<F> {
    spec: ProviderSpec,
    f: F,
}

impl<F> FnProvider<F>
where
    F: Fn(&GenerationRequest) -> Result<String, ProviderError> + Send + Sync,
{
    pub fn new(spec: ProviderSpec, f: F) -> Self {
        Self { spec, f }
    }
}

impl<F> Provider for FnProvider<F>
where
    F: Fn(&GenerationRequest) -> Result<String, ProviderError> + Send + Sync,
{
    fn spec(&self) -> &ProviderSpec {
        &self.spec
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String, ProviderError> {
        (self.f)(request)
    }
}
