//! Wire types shared between the query gateway and the classifier.

use serde::{Deserialize, Serialize};

/// Outcome of the transport attempt for one query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportStatus {
    Ok,
    HttpError,
    Timeout,
    ExhaustedRetries,
}

impl TransportStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            TransportStatus::Ok => "ok",
            TransportStatus::HttpError => "http_error",
            TransportStatus::Timeout => "timeout",
            TransportStatus::ExhaustedRetries => "exhausted_retries",
        }
    }
}

/// One raw model reply (or transport failure), as persisted in the sink.
/// `run_idx` is the repetition index; transport failures carry an empty
/// `raw_text` and classify downstream as `empty`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawResponse {
    pub prompt_id: String,
    pub llm_id: String,
    pub run_idx: u32,
    pub raw_text: String,
    pub transport_status: TransportStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub http_code: Option<u16>,
    pub latency_ms: u64,
    pub timestamp_ms: u64,
}
