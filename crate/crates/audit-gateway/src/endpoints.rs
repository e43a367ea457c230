//! Endpoint configuration: which models to query, over which wire style,
//! with what concurrency/retry/decoding settings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::GatewayError;

/// Supported wire styles: OpenAI-compatible chat completions and the Ollama
/// generate API.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiStyle {
    OpenaiChat,
    OllamaGenerate,
}

fn default_max_concurrency() -> u32 {
    4
}

fn default_timeout_s() -> f64 {
    60.0
}

fn default_max_retries() -> u32 {
    3
}

fn default_initial_backoff_ms() -> u64 {
    250
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub llm_id: String,
    pub base_url: String,
    pub api_style: ApiStyle,
    pub model_name: String,
    #[serde(default = "default_max_concurrency")]
    pub max_concurrency: u32,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_initial_backoff_ms")]
    pub initial_backoff_ms: u64,
    /// Decoding parameters passed through verbatim (temperature, top_p, ...)
    /// and recorded in the campaign summary for provenance.
    #[serde(default)]
    pub params: serde_json::Map<String, serde_json::Value>,
    /// Environment variable holding the API key; `AUDIT_API_KEY` by default.
    #[serde(default)]
    pub api_key_env: Option<String>,
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.llm_id.trim().is_empty() {
            return Err(GatewayError::Config("endpoint with empty llm_id".into()));
        }
        if self.max_concurrency < 1 {
            return Err(GatewayError::Config(format!(
                "{}: max_concurrency must be at least 1",
                self.llm_id
            )));
        }
        if self.timeout_s <= 0.0 || self.timeout_s.is_nan() {
            return Err(GatewayError::Config(format!(
                "{}: timeout must be positive",
                self.llm_id
            )));
        }
        Ok(())
    }

    pub fn api_key(&self) -> Option<String> {
        let var = self.api_key_env.as_deref().unwrap_or("AUDIT_API_KEY");
        std::env::var(var).ok().filter(|k| !k.is_empty())
    }
}

pub fn load_endpoints(path: &Path) -> Result<Vec<EndpointConfig>, GatewayError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
    let endpoints: Vec<EndpointConfig> = serde_json::from_str(&raw)
        .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
    if endpoints.is_empty() {
        return Err(GatewayError::Config(format!(
            "{}: no endpoints defined",
            path.display()
        )));
    }
    let mut seen = std::collections::BTreeSet::new();
    for endpoint in &endpoints {
        endpoint.validate()?;
        if !seen.insert(endpoint.llm_id.clone()) {
            return Err(GatewayError::Config(format!(
                "duplicate llm_id `{}`",
                endpoint.llm_id
            )));
        }
    }
    Ok(endpoints)
}
