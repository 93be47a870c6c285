use std::time::Duration;

use serde_json::{json, Value};

use super::{GenerationRequest, Provider, ProviderError, ProviderSpec};

const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
const DEFAULT_KEY_ENV: &str = "OPENAI_API_KEY";

/// Chat-completions client for OpenAI-compatible endpoints.
///
/// Spec name `openai:<model>`; endpoint keys `base_url`, `api_key_env`,
/// `timeout_secs`. The key itself is only ever read from the environment.
pub struct OpenAiCompatProvider {
    spec: ProviderSpec,
    model: String,
    base_url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl OpenAiCompatProvider {
    pub fn from_spec(spec: &ProviderSpec) -> Result<Self, ProviderError> {
        let model = spec
            .name
            .strip_prefix("openai:")
            .filter(|m| !m.is_empty())
            .ok_or_else(|| ProviderError::Config(format!("bad model name {}", spec.name)))?
            .to_string();
        let base_url = spec
            .endpoint
            .get("base_url")
            .cloned()
            .unwrap_or_else(|| DEFAULT_BASE_URL.to_string());
        let key_env = spec
            .endpoint
            .get("api_key_env")
            .map(String::as_str)
            .unwrap_or(DEFAULT_KEY_ENV);
        let timeout = spec
            .endpoint
            .get("timeout_secs")
            .and_then(|s| s.parse().ok())
            .unwrap_or(120);
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(timeout)))
            .build()
            .into();
        Ok(Self {
            spec: spec.clone(),
            model,
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key: std::env::var(key_env).ok(),
            agent,
        })
    }

    fn classify(&self, err: ureq::Error) -> ProviderError {
        let provider = self.spec.name.clone();
        match err {
            ureq::Error::StatusCode(code) if code == 429 || code >= 500 => ProviderError::Transient {
                provider,
                message: format!("http status {code}"),
            },
            ureq::Error::StatusCode(code) => ProviderError::Fatal {
                provider,
                message: format!("http status {code}"),
            },
            other => ProviderError::Transient {
                provider,
                message: other.to_string(),
            },
        }
    }
}

impl Provider for OpenAiCompatProvider {
    fn spec(&self) -> &ProviderSpec {
        &self.spec
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String, ProviderError> {
        let mut body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": self.spec.temperature,
        });
        if let Some(seed) = self.spec.seed {
            body["seed"] = json!(seed.wrapping_add(request.draw_index));
        }
        let mut req = self.agent.post(format!("{}/chat/completions", self.base_url));
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = req.send_json(&body).map_err(|e| self.classify(e))?;
        let value: Value = response.body_mut().read_json().map_err(|e| self.classify(e))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ProviderError::Fatal {
                provider: self.spec.name.clone(),
                message: format!("unexpected response shape: {value}"),
            })
    }
}
