//! Deterministic mock model. Behaviors mirror the five response categories
//! the classifier assigns (plus a hallucination variant of valid), so mock
//! campaigns exercise every downstream path without a live endpoint.

use audit_core::corpus::{ScholarIndex, ScholarRecord};
use audit_core::corpus::{JUNIOR_MAX_CAREER_AGE, SENIOR_MIN_CAREER_AGE};
use audit_core::grid::PromptInstance;
use rand_chacha::ChaCha8Rng;
use rand::{Rng, SeedableRng};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockBehavior {
    Faithful,
    Hallucinate,
    Refuse,
    Truncate,
    Empty,
    Malformed,
}

impl MockBehavior {
    pub fn as_str(&self) -> &'static str {
        match self {
            MockBehavior::Faithful => "faithful",
            MockBehavior::Hallucinate => "hallucinate",
            MockBehavior::Refuse => "refuse",
            MockBehavior::Truncate => "truncate",
            MockBehavior::Empty => "empty",
            MockBehavior::Malformed => "malformed",
        }
    }
}

/// 64-bit value derived from the seed and any number of context strings;
/// drives every mock decision so outputs are pure functions of their inputs.
pub fn derive_u64(seed: u64, parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for part in parts {
        hasher.update([0x1f]);
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Per-model behavior mix: every model mostly answers faithfully, but the
/// failure-mode share differs per llm_id so model identity carries signal in
/// mock campaigns.
pub fn assign_behavior(seed: u64, prompt_id: &str, llm_id: &str, run_idx: u32) -> MockBehavior {
    let llm_bias = derive_u64(seed, &["llm-bias", llm_id]) % 1000;
    let faithful_share = 0.55 + 0.35 * (llm_bias as f64 / 1000.0);
    let draw = derive_u64(seed, &["behavior", prompt_id, llm_id, &run_idx.to_string()]) % 100_000;
    let u = draw as f64 / 100_000.0;
    if u < faithful_share {
        return MockBehavior::Faithful;
    }
    let rest = (u - faithful_share) / (1.0 - faithful_share);
    if rest < 0.25 {
        MockBehavior::Hallucinate
    } else if rest < 0.50 {
        MockBehavior::Refuse
    } else if rest < 0.68 {
        MockBehavior::Truncate
    } else if rest < 0.84 {
        MockBehavior::Empty
    } else {
        MockBehavior::Malformed
    }
}

fn record_json(name: &str, lastname: &str, field: &str, subfield: &str, affiliation: &str) -> serde_json::Value {
    serde_json::json!({
        "name": name,
        "lastname": lastname,
        "current_affiliations": [
            {"position": "Professor", "affiliation": affiliation}
        ],
        "areas_of_research_or_work": [field, subfield],
        "reason": format!("Recognized contributions to {subfield}."),
        "source": "N/A"
    })
}

fn given_name(record: &ScholarRecord) -> String {
    let display = record.display_name.trim();
    if let Some(prefix) = display.strip_suffix(record.lastname.trim()) {
        let prefix = prefix.trim();
        if !prefix.is_empty() {
            return prefix.to_string();
        }
    }
    display.split_whitespace().next().unwrap_or(display).to_string()
}

/// Preference tier for faithful selection: seniority and location matches
/// rank first, then seniority only, then location only.
fn tier(record: &ScholarRecord, prompt: &PromptInstance, location_iso: Option<&str>) -> u8 {
    let stage_ok = match record.career_age() {
        Some(age) => {
            let wants_junior = prompt.dims.seniority.to_lowercase().contains("junior");
            if wants_junior {
                age <= JUNIOR_MAX_CAREER_AGE
            } else {
                age >= SENIOR_MIN_CAREER_AGE
            }
        }
        None => false,
    };
    let location_ok = match (location_iso, &record.country_code) {
        (Some(iso), Some(code)) => iso == code,
        _ => false,
    };
    match (stage_ok, location_ok) {
        (true, true) => 0,
        (true, false) => 1,
        (false, true) => 2,
        (false, false) => 3,
    }
}

fn faithful_records(
    prompt: &PromptInstance,
    index: &ScholarIndex,
    location_iso: Option<&str>,
) -> Vec<serde_json::Value> {
    let mut candidates: Vec<&ScholarRecord> = index
        .records()
        .iter()
        .filter(|r| r.field == prompt.dims.field)
        .collect();
    if candidates.is_empty() {
        candidates = index.records().iter().collect();
    }
    candidates.sort_by_key(|r| (tier(r, prompt, location_iso), r.scholar_id.clone()));
    candidates
        .into_iter()
        .take(prompt.dims.k as usize)
        .map(|r| {
            let affiliation = format!(
                "University of {}",
                r.country_code.as_deref().unwrap_or("Science")
            );
            record_json(
                &given_name(r),
                &r.lastname,
                &prompt.dims.field,
                &prompt.dims.subfield,
                &affiliation,
            )
        })
        .collect()
}

fn gibberish_name(rng: &mut ChaCha8Rng, prefix: &str, len: usize) -> String {
    const CONSONANTS: [char; 7] = ['q', 'w', 'x', 'z', 'v', 'k', 'j'];
    let mut s = String::from(prefix);
    for _ in 0..len {
        s.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())]);
    }
    s
}

fn hallucinated_records(prompt: &PromptInstance, rng: &mut ChaCha8Rng) -> Vec<serde_json::Value> {
    (0..prompt.dims.k)
        .map(|_| {
            let name = gibberish_name(rng, "Zy", 4);
            let lastname = gibberish_name(rng, "Qx", 5);
            record_json(
                &name,
                &lastname,
                &prompt.dims.field,
                &prompt.dims.subfield,
                "Institute of Advanced Conjecture",
            )
        })
        .collect()
}

fn assemble_array(records: &[serde_json::Value]) -> String {
    let parts: Vec<String> = records
        .iter()
        .map(|r| serde_json::to_string(r).expect("mock record serializes"))
        .collect();
    format!("[{}]", parts.join(","))
}

const REFUSALS_EN: [&str; 3] = [
    "I cannot recommend specific individuals because I do not have access to verified, up-to-date information about scholars.",
    "I'm sorry, but I am unable to provide names of real researchers without reliable sources.",
    "As an AI system I cannot identify specific scholars for this request; assessing individual merit requires verified data.",
];
const REFUSALS_DE: [&str; 3] = [
    "Es tut mir leid, aber ich kann keine konkreten Personen empfehlen, da mir verlässliche Informationen fehlen.",
    "Ich kann leider keine bestimmten Forschenden nennen; ich habe keinen Zugriff auf geprüfte Daten.",
    "Als KI kann ich nicht beurteilen, welche Forschenden geeignet wären, daher muss ich ablehnen.",
];
const REFUSALS_ES: [&str; 3] = [
    "Lo siento, pero no puedo recomendar a personas específicas sin información verificada.",
    "Lamentablemente no me es posible nombrar investigadores reales para esta solicitud.",
    "Como IA, no puedo recomendar académicos concretos sin fuentes confiables.",
];

const MALFORMED: [&str; 4] = [
    "[{\"name\": \"Ada\", \"lastname\": }]",
    "{\"name\": \"Ada\", \"lastname\": \"Lovelace\"}",
    "[{\"name\": \"\", \"lastname\": \"\"}]",
    "definitely not { json [",
];

const EMPTYISH: [&str; 3] = ["", " ", "\n"];

/// Renders the mock reply for one behavior. Deterministic in
/// (prompt_id, seed, behavior); the corpus supplies real names for faithful
/// output and the prompt's language selects refusal phrasing.
pub fn mock_llm(
    prompt: &PromptInstance,
    seed: u64,
    index: &ScholarIndex,
    behavior: MockBehavior,
    location_iso: Option<&str>,
) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_u64(
        seed,
        &["mock", &prompt.prompt_id, behavior.as_str()],
    ));
    match behavior {
        MockBehavior::Faithful => assemble_array(&faithful_records(prompt, index, location_iso)),
        MockBehavior::Hallucinate => assemble_array(&hallucinated_records(prompt, &mut rng)),
        MockBehavior::Refuse => {
            let pool = match prompt.dims.language.as_str() {
                "de" => &REFUSALS_DE,
                "es" => &REFUSALS_ES,
                _ => &REFUSALS_EN,
            };
            pool[rng.gen_range(0..pool.len())].to_string()
        }
        MockBehavior::Truncate => {
            let mut records = faithful_records(prompt, index, location_iso);
            if records.len() < 2 {
                // Keep at least one complete record ahead of the cut.
                let extra = hallucinated_records(prompt, &mut rng);
                records.extend(extra.into_iter().take(2 - records.len().min(2)));
                while records.len() < 2 {
                    records.push(record_json(
                        "Pat",
                        "Placeholder",
                        &prompt.dims.field,
                        &prompt.dims.subfield,
                        "Somewhere",
                    ));
                }
            }
            let parts: Vec<String> = records
                .iter()
                .map(|r| serde_json::to_string(r).expect("mock record serializes"))
                .collect();
            let last_start: usize =
                1 + parts[..parts.len() - 1].iter().map(|p| p.len() + 1).sum::<usize>();
            let full = format!("[{}]", parts.join(","));
            let mut cut = last_start + (parts.last().unwrap().len() / 2).max(10);
            cut = cut.min(full.len() - 2);
            while !full.is_char_boundary(cut) {
                cut -= 1;
            }
            full[..cut].to_string()
        }
        MockBehavior::Empty => EMPTYISH[rng.gen_range(0..EMPTYISH.len())].to_string(),
        MockBehavior::Malformed => MALFORMED[rng.gen_range(0..MALFORMED.len())].to_string(),
    }
}
