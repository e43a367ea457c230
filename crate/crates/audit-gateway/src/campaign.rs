//! Campaign orchestration: every prompt goes to every endpoint N times, raw
//! replies land in an append-only JSONL sink, and re-runs skip triples the
//! sink already holds.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use audit_core::corpus::ScholarIndex;
use audit_core::grid::PromptInstance;
use audit_core::io::JsonlSink;
use audit_core::response::{RawResponse, TransportStatus};
use serde::Serialize;
use tokio::sync::Semaphore;

use crate::endpoints::{ApiStyle, EndpointConfig};
use crate::mock::{assign_behavior, derive_u64, mock_llm};
use crate::GatewayError;

#[derive(Debug, Default, Serialize)]
pub struct CampaignSummary {
    /// Per llm, per transport status: record count (this run only).
    pub per_llm: BTreeMap<String, BTreeMap<String, u64>>,
    /// Decoding parameters per llm, recorded verbatim for provenance.
    pub decoding_params: BTreeMap<String, serde_json::Value>,
    pub total_written: u64,
    pub skipped_existing: u64,
}

impl CampaignSummary {
    fn count(&mut self, llm_id: &str, status: TransportStatus) {
        *self
            .per_llm
            .entry(llm_id.to_string())
            .or_default()
            .entry(status.as_str().to_string())
            .or_insert(0) += 1;
        self.total_written += 1;
    }

    fn record_params(&mut self, endpoint: &EndpointConfig) {
        self.decoding_params.insert(
            endpoint.llm_id.clone(),
            serde_json::Value::Object(endpoint.params.clone()),
        );
    }
}

/// Reads (prompt_id, llm_id, run_idx) triples already present in the sink.
fn existing_triples(path: &Path) -> Result<BTreeSet<(String, String, u32)>, GatewayError> {
    if !path.is_file() {
        return Ok(BTreeSet::new());
    }
    let records: Vec<RawResponse> = audit_core::io::read_jsonl(path)?;
    Ok(records
        .into_iter()
        .map(|r| (r.prompt_id, r.llm_id, r.run_idx))
        .collect())
}

/// Work items in deterministic order: endpoint declaration order, then grid
/// order, then repetition index.
fn pending_work<'a>(
    grid: &'a [PromptInstance],
    endpoints: &'a [EndpointConfig],
    repetitions: u32,
    existing: &BTreeSet<(String, String, u32)>,
) -> Vec<(usize, &'a PromptInstance, u32)> {
    let mut work = Vec::new();
    for (e_idx, endpoint) in endpoints.iter().enumerate() {
        for prompt in grid {
            for run_idx in 0..repetitions {
                let key = (prompt.prompt_id.clone(), endpoint.llm_id.clone(), run_idx);
                if !existing.contains(&key) {
                    work.push((e_idx, prompt, run_idx));
                }
            }
        }
    }
    work
}

/// Runs a fully deterministic mock campaign: sequential, synthetic clock,
/// byte-stable output for a fixed seed.
#[allow(clippy::too_many_arguments)]
pub fn run_campaign_mock(
    grid: &[PromptInstance],
    endpoints: &[EndpointConfig],
    repetitions: u32,
    sink_path: &Path,
    resume: bool,
    seed: u64,
    index: &ScholarIndex,
    location_iso: &BTreeMap<String, String>,
) -> Result<CampaignSummary, GatewayError> {
    if repetitions < 1 {
        return Err(GatewayError::Config("repetitions must be at least 1".into()));
    }
    let existing = if resume {
        existing_triples(sink_path)?
    } else {
        BTreeSet::new()
    };

    let mut summary = CampaignSummary {
        skipped_existing: existing.len() as u64,
        ..CampaignSummary::default()
    };
    for endpoint in endpoints {
        endpoint.validate()?;
        summary.record_params(endpoint);
    }

    let mut sink = JsonlSink::append(sink_path)?;
    let work = pending_work(grid, endpoints, repetitions, &existing);
    for (clock, (e_idx, prompt, run_idx)) in work.into_iter().enumerate() {
        let endpoint = &endpoints[e_idx];
        let behavior = assign_behavior(seed, &prompt.prompt_id, &endpoint.llm_id, run_idx);
        let run_seed = derive_u64(seed, &["run", &endpoint.llm_id, &run_idx.to_string()]);
        let iso = location_iso.get(&prompt.dims.location).map(String::as_str);
        let raw_text = mock_llm(prompt, run_seed, index, behavior, iso);
        let record = RawResponse {
            prompt_id: prompt.prompt_id.clone(),
            llm_id: endpoint.llm_id.clone(),
            run_idx,
            raw_text,
            transport_status: TransportStatus::Ok,
            http_code: None,
            latency_ms: 0,
            timestamp_ms: clock as u64,
        };
        sink.write(&record)?;
        summary.count(&endpoint.llm_id, TransportStatus::Ok);
    }
    sink.flush()?;
    Ok(summary)
}

enum AttemptError {
    Timeout,
    Transport,
    RetryableHttp(u16),
    FatalHttp(u16),
    Protocol(u16),
}

async fn attempt_request(
    client: &reqwest::Client,
    endpoint: &EndpointConfig,
    prompt_text: &str,
) -> Result<String, AttemptError> {
    let (url, body) = match endpoint.api_style {
        ApiStyle::OpenaiChat => {
            let mut body = serde_json::Map::new();
            body.insert("model".into(), endpoint.model_name.clone().into());
            body.insert(
                "messages".into(),
                serde_json::json!([{"role": "user", "content": prompt_text}]),
            );
            for (key, value) in &endpoint.params {
                body.insert(key.clone(), value.clone());
            }
            (
                format!("{}/chat/completions", endpoint.base_url.trim_end_matches('/')),
                serde_json::Value::Object(body),
            )
        }
        ApiStyle::OllamaGenerate => {
            let mut body = serde_json::Map::new();
            body.insert("model".into(), endpoint.model_name.clone().into());
            body.insert("prompt".into(), prompt_text.into());
            body.insert("stream".into(), false.into());
            if !endpoint.params.is_empty() {
                body.insert(
                    "options".into(),
                    serde_json::Value::Object(endpoint.params.clone()),
                );
            }
            (
                format!("{}/api/generate", endpoint.base_url.trim_end_matches('/')),
                serde_json::Value::Object(body),
            )
        }
    };

    let mut request = client.post(&url).json(&body);
    if let Some(key) = endpoint.api_key() {
        request = request.bearer_auth(key);
    }

    let response = match request.send().await {
        Ok(response) => response,
        Err(e) if e.is_timeout() => return Err(AttemptError::Timeout),
        Err(_) => return Err(AttemptError::Transport),
    };

    let status = response.status().as_u16();
    if status == 429 || (500..600).contains(&status) {
        return Err(AttemptError::RetryableHttp(status));
    }
    if !(200..300).contains(&status) {
        return Err(AttemptError::FatalHttp(status));
    }

    let envelope: serde_json::Value = match response.json().await {
        Ok(envelope) => envelope,
        Err(e) if e.is_timeout() => return Err(AttemptError::Timeout),
        Err(_) => return Err(AttemptError::Protocol(status)),
    };
    let text = match endpoint.api_style {
        ApiStyle::OpenaiChat => envelope
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str()),
        ApiStyle::OllamaGenerate => envelope.get("response").and_then(|v| v.as_str()),
    };
    match text {
        Some(text) => Ok(text.to_string()),
        None => Err(AttemptError::Protocol(status)),
    }
}

/// Issues one query with retries. Retries apply to transport errors,
/// timeouts, and HTTP 429/5xx; other HTTP failures and malformed envelopes
/// are fatal immediately.
async fn execute_with_retries(
    client: &reqwest::Client,
    endpoint: &EndpointConfig,
    prompt_text: &str,
) -> (String, TransportStatus, Option<u16>) {
    let attempts = endpoint.max_retries + 1;
    let mut last: Option<AttemptError> = None;
    for attempt in 0..attempts {
        if attempt > 0 {
            let backoff = endpoint.initial_backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
            tokio::time::sleep(Duration::from_millis(backoff)).await;
        }
        match attempt_request(client, endpoint, prompt_text).await {
            Ok(text) => return (text, TransportStatus::Ok, None),
            Err(e @ (AttemptError::FatalHttp(_) | AttemptError::Protocol(..))) => {
                last = Some(e);
                break;
            }
            Err(e) => last = Some(e),
        }
    }
    match last.expect("at least one attempt") {
        AttemptError::Timeout => (String::new(), TransportStatus::Timeout, None),
        AttemptError::Transport => (String::new(), TransportStatus::ExhaustedRetries, None),
        AttemptError::RetryableHttp(code) => {
            (String::new(), TransportStatus::ExhaustedRetries, Some(code))
        }
        AttemptError::FatalHttp(code) => (String::new(), TransportStatus::HttpError, Some(code)),
        AttemptError::Protocol(code) => (String::new(), TransportStatus::HttpError, Some(code)),
    }
}

fn epoch_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Runs the campaign against live HTTP endpoints. Concurrency per endpoint
/// never exceeds its max_concurrency; a single writer appends completed
/// records in completion order; transport failures are recorded, not raised.
pub async fn run_campaign_http(
    grid: &[PromptInstance],
    endpoints: &[EndpointConfig],
    repetitions: u32,
    sink_path: &Path,
    resume: bool,
) -> Result<CampaignSummary, GatewayError> {
    if repetitions < 1 {
        return Err(GatewayError::Config("repetitions must be at least 1".into()));
    }
    let existing = if resume {
        existing_triples(sink_path)?
    } else {
        BTreeSet::new()
    };

    let mut summary = CampaignSummary {
        skipped_existing: existing.len() as u64,
        ..CampaignSummary::default()
    };

    let mut clients = Vec::with_capacity(endpoints.len());
    let mut semaphores = Vec::with_capacity(endpoints.len());
    for endpoint in endpoints {
        endpoint.validate()?;
        summary.record_params(endpoint);
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs_f64(endpoint.timeout_s))
            .build()
            .map_err(|e| GatewayError::Config(format!("http client: {e}")))?;
        clients.push(Arc::new(client));
        semaphores.push(Arc::new(Semaphore::new(endpoint.max_concurrency as usize)));
    }
    let endpoints: Arc<Vec<EndpointConfig>> = Arc::new(endpoints.to_vec());

    let mut sink = JsonlSink::append(sink_path)?;
    let work = pending_work(grid, &endpoints, repetitions, &existing);

    let mut join_set = tokio::task::JoinSet::new();
    let max_in_flight: usize = endpoints.iter().map(|e| e.max_concurrency as usize).sum::<usize>() * 2;

    for (e_idx, prompt, run_idx) in work {
        while join_set.len() >= max_in_flight.max(1) {
            if let Some(record) = join_set.join_next().await {
                let record: RawResponse =
                    record.map_err(|e| GatewayError::Config(format!("task join: {e}")))?;
                summary.count(&record.llm_id.clone(), record.transport_status);
                sink.write(&record)?;
            }
        }
        let client = Arc::clone(&clients[e_idx]);
        let semaphore = Arc::clone(&semaphores[e_idx]);
        let endpoints = Arc::clone(&endpoints);
        let prompt_id = prompt.prompt_id.clone();
        let prompt_text = prompt.text.clone();
        join_set.spawn(async move {
            let _permit = semaphore.acquire().await.expect("semaphore open");
            let endpoint = &endpoints[e_idx];
            let start = Instant::now();
            let (raw_text, status, http_code) =
                execute_with_retries(&client, endpoint, &prompt_text).await;
            RawResponse {
                prompt_id,
                llm_id: endpoint.llm_id.clone(),
                run_idx,
                raw_text,
                transport_status: status,
                http_code,
                latency_ms: start.elapsed().as_millis() as u64,
                timestamp_ms: epoch_ms(),
            }
        });
    }
    while let Some(record) = join_set.join_next().await {
        let record: RawResponse =
            record.map_err(|e| GatewayError::Config(format!("task join: {e}")))?;
        summary.count(&record.llm_id.clone(), record.transport_status);
        sink.write(&record)?;
    }
    sink.flush()?;
    Ok(summary)
}
