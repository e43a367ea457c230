//! Query gateway: dispatches rendered prompts to configured model endpoints
//! (OpenAI-compatible chat or Ollama generate), persists raw replies in a
//! resumable JSONL sink, and ships a deterministic mock model for tests and
//! offline runs.

pub mod campaign;
pub mod endpoints;
pub mod mock;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("gateway configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] audit_core::AuditError),
}

pub use campaign::{run_campaign_http, run_campaign_mock, CampaignSummary};
pub use endpoints::{load_endpoints, ApiStyle, EndpointConfig};
pub use mock::{assign_behavior, mock_llm, MockBehavior};
