//! Scholar ground-truth corpus: CSV ingestion, prefix-block and exact-name
//! indexes, tertile prominence bins, and population marginals.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::classify::normalize_name;
use crate::error::{AuditError, Result};

/// Career ages are measured against this year.
pub const CAREER_REFERENCE_YEAR: i64 = 2025;

/// Career-age thresholds: junior at most 10 years, senior at least 20.
pub const JUNIOR_MAX_CAREER_AGE: i64 = 10;
pub const SENIOR_MIN_CAREER_AGE: i64 = 20;

pub const CANONICAL_FIELDS: [&str; 6] = [
    "Biology",
    "Computer Science",
    "Mathematics",
    "Physics",
    "Psychology",
    "Sociology",
];

pub const CSV_HEADER: [&str; 10] = [
    "scholar_id",
    "display_name",
    "lastname",
    "field",
    "gender",
    "ethnicity",
    "year_first_pub",
    "works_count",
    "citation_count",
    "country_code",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
    Unknown,
}

impl Gender {
    pub fn as_str(&self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
            Gender::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Ethnicity {
    White,
    Asian,
    #[serde(rename = "Black_or_African_American")]
    BlackOrAfricanAmerican,
    #[serde(rename = "Hispanic_or_Latino")]
    HispanicOrLatino,
    Unknown,
}

impl Ethnicity {
    pub fn as_str(&self) -> &'static str {
        match self {
            Ethnicity::White => "White",
            Ethnicity::Asian => "Asian",
            Ethnicity::BlackOrAfricanAmerican => "Black_or_African_American",
            Ethnicity::HispanicOrLatino => "Hispanic_or_Latino",
            Ethnicity::Unknown => "Unknown",
        }
    }
}

/// One ground-truth researcher.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScholarRecord {
    pub scholar_id: String,
    pub display_name: String,
    pub lastname: String,
    pub field: String,
    pub gender: Gender,
    pub ethnicity: Ethnicity,
    pub year_first_pub: Option<i64>,
    pub works_count: Option<u64>,
    pub citation_count: Option<u64>,
    pub country_code: Option<String>,
}

impl ScholarRecord {
    /// Years between first publication and the reference year.
    pub fn career_age(&self) -> Option<i64> {
        self.year_first_pub.map(|y| CAREER_REFERENCE_YEAR - y)
    }
}

/// Low/medium/high prominence bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bin {
    Low,
    Medium,
    High,
}

impl Bin {
    pub fn as_str(&self) -> &'static str {
        match self {
            Bin::Low => "low",
            Bin::Medium => "medium",
            Bin::High => "high",
        }
    }
}

/// 33rd/67th nearest-rank percentile boundaries for one attribute.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TertileCut {
    pub t33: u64,
    pub t67: u64,
}

impl TertileCut {
    /// Absent values land in the low bin.
    pub fn bin(&self, value: Option<u64>) -> Bin {
        match value {
            None => Bin::Low,
            Some(v) if v <= self.t33 => Bin::Low,
            Some(v) if v <= self.t67 => Bin::Medium,
            Some(_) => Bin::High,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TertileCuts {
    pub works: Option<TertileCut>,
    pub citations: Option<TertileCut>,
}

/// Attributes with population marginals and diversity supports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginalAttr {
    Gender,
    Ethnicity,
    WorksBin,
    CitationsBin,
    Country,
}

impl MarginalAttr {
    pub fn as_str(&self) -> &'static str {
        match self {
            MarginalAttr::Gender => "gender",
            MarginalAttr::Ethnicity => "ethnicity",
            MarginalAttr::WorksBin => "works_bin",
            MarginalAttr::CitationsBin => "citations_bin",
            MarginalAttr::Country => "country",
        }
    }
}

/// Immutable index over the corpus. Matching state (prefix blocks, exact
/// lookup, normalized display forms) is derived once at construction.
#[derive(Debug)]
pub struct ScholarIndex {
    records: Vec<ScholarRecord>,
    block_index: BTreeMap<String, Vec<u32>>,
    exact_index: BTreeMap<String, Vec<u32>>,
    id_index: BTreeMap<String, u32>,
    norm_display: Vec<String>,
    norm_tokens: Vec<Vec<String>>,
    tertile_cuts: TertileCuts,
}

/// Ingest outcome: per-line diagnostics for rejected rows.
#[derive(Debug, Default, Serialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: usize,
    pub diagnostics: Vec<String>,
}

/// Serializable snapshot (records + cuts); matching state is rebuilt on load.
#[derive(Serialize, Deserialize)]
struct IndexSnapshot {
    records: Vec<ScholarRecord>,
    tertile_cuts: TertileCuts,
}

/// Nearest-rank percentile: the ceil(p/100 * n)-th smallest value.
fn nearest_rank(sorted: &[u64], percentile: u64) -> u64 {
    let n = sorted.len() as u64;
    let rank = (percentile * n).div_ceil(100).max(1);
    sorted[(rank - 1) as usize]
}

/// 33rd/67th percentile cuts. Requires at least three values.
pub fn compute_tertiles(values: &[u64]) -> Result<TertileCut> {
    if values.len() < 3 {
        return Err(AuditError::Corpus(format!(
            "tertile computation needs at least 3 values, got {}",
            values.len()
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    Ok(TertileCut {
        t33: nearest_rank(&sorted, 33),
        t67: nearest_rank(&sorted, 67),
    })
}

/// Lowercases, strips accents, and collapses non-alphabetic runs to single
/// spaces; the exact-match key ("José García-López" -> "jose garcia lopez").
pub fn exact_normalize(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending_space = false;
    for c in s.nfd() {
        if is_combining_mark(c) {
            continue;
        }
        if c.is_alphabetic() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            for lower in c.to_lowercase() {
                if lower == 'ß' {
                    out.push_str("ss");
                } else {
                    out.push(lower);
                }
            }
        } else {
            pending_space = true;
        }
    }
    out
}

/// First two characters of the normalized lowercase lastname; the blocking key.
pub fn block_key(lastname: &str) -> String {
    let (normalized, _) = normalize_name(lastname);
    normalized.to_lowercase().chars().take(2).collect()
}

fn parse_row(record: &csv::StringRecord, line: usize) -> std::result::Result<ScholarRecord, String> {
    let get = |i: usize| record.get(i).unwrap_or("").trim();

    let scholar_id = get(0);
    if scholar_id.is_empty() {
        return Err(format!("line {line}: empty scholar_id"));
    }
    let display_name = get(1);
    if display_name.is_empty() {
        return Err(format!("line {line}: empty display_name"));
    }
    let lastname = get(2);
    if lastname.is_empty() {
        return Err(format!("line {line}: empty lastname"));
    }
    let field = get(3);
    if !CANONICAL_FIELDS.contains(&field) {
        return Err(format!("line {line}: unknown field `{field}`"));
    }
    let gender = match get(4) {
        "female" => Gender::Female,
        "male" => Gender::Male,
        "" | "unknown" => Gender::Unknown,
        other => return Err(format!("line {line}: unknown gender `{other}`")),
    };
    let ethnicity = match get(5) {
        "White" => Ethnicity::White,
        "Asian" => Ethnicity::Asian,
        "Black_or_African_American" => Ethnicity::BlackOrAfricanAmerican,
        "Hispanic_or_Latino" => Ethnicity::HispanicOrLatino,
        "" | "Unknown" => Ethnicity::Unknown,
        other => return Err(format!("line {line}: unknown ethnicity `{other}`")),
    };
    let year_first_pub = match get(6) {
        "" => None,
        raw => {
            let year: i64 = raw
                .parse()
                .map_err(|_| format!("line {line}: bad year_first_pub `{raw}`"))?;
            if year > CAREER_REFERENCE_YEAR {
                return Err(format!(
                    "line {line}: year_first_pub {year} is after {CAREER_REFERENCE_YEAR}"
                ));
            }
            Some(year)
        }
    };
    let parse_count = |raw: &str, name: &str| -> std::result::Result<Option<u64>, String> {
        if raw.is_empty() {
            return Ok(None);
        }
        raw.parse::<u64>()
            .map(Some)
            .map_err(|_| format!("line {line}: {name} must be a non-negative integer, got `{raw}`"))
    };
    let works_count = parse_count(get(7), "works_count")?;
    let citation_count = parse_count(get(8), "citation_count")?;
    let country_code = match get(9) {
        "" => None,
        raw => {
            if raw.len() == 2 && raw.chars().all(|c| c.is_ascii_uppercase()) {
                Some(raw.to_string())
            } else {
                return Err(format!("line {line}: bad country_code `{raw}`"));
            }
        }
    };

    Ok(ScholarRecord {
        scholar_id: scholar_id.to_string(),
        display_name: display_name.to_string(),
        lastname: lastname.to_string(),
        field: field.to_string(),
        gender,
        ethnicity,
        year_first_pub,
        works_count,
        citation_count,
        country_code,
    })
}

impl ScholarIndex {
    /// Reads and validates the corpus CSV. Rows with malformed mandatory
    /// fields are rejected with line-numbered diagnostics; the ingest aborts
    /// when the rejected fraction exceeds `max_reject_frac`.
    pub fn ingest(path: &Path, max_reject_frac: f64) -> Result<(ScholarIndex, IngestReport)> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| AuditError::Corpus(format!("{}: {e}", path.display())))?;

        let headers = reader
            .headers()
            .map_err(|e| AuditError::Corpus(format!("{}: {e}", path.display())))?;
        let found: Vec<&str> = headers.iter().collect();
        if found != CSV_HEADER {
            return Err(AuditError::Corpus(format!(
                "{}: header mismatch; expected `{}`, found `{}`",
                path.display(),
                CSV_HEADER.join(","),
                found.join(",")
            )));
        }

        let mut report = IngestReport::default();
        let mut records = Vec::new();
        let mut seen_ids: BTreeSet<String> = BTreeSet::new();
        for (i, row) in reader.records().enumerate() {
            let line = i + 2; // header is line 1
            let row = match row {
                Ok(row) => row,
                Err(e) => {
                    report.rejected += 1;
                    report.diagnostics.push(format!("line {line}: {e}"));
                    continue;
                }
            };
            match parse_row(&row, line) {
                Ok(record) => {
                    if !seen_ids.insert(record.scholar_id.clone()) {
                        report.rejected += 1;
                        report
                            .diagnostics
                            .push(format!("line {line}: duplicate scholar_id `{}`", record.scholar_id));
                        continue;
                    }
                    records.push(record);
                    report.accepted += 1;
                }
                Err(detail) => {
                    report.rejected += 1;
                    report.diagnostics.push(detail);
                }
            }
        }

        let total = report.accepted + report.rejected;
        if total == 0 {
            return Err(AuditError::Corpus(format!("{}: no data rows", path.display())));
        }
        let frac = report.rejected as f64 / total as f64;
        if frac > max_reject_frac {
            return Err(AuditError::Corpus(format!(
                "{}: {:.1}% of rows rejected (limit {:.1}%); first diagnostics: {}",
                path.display(),
                frac * 100.0,
                max_reject_frac * 100.0,
                report.diagnostics.iter().take(3).cloned().collect::<Vec<_>>().join("; ")
            )));
        }

        Ok((ScholarIndex::from_records(records)?, report))
    }

    /// Builds the index from already-validated records.
    pub fn from_records(records: Vec<ScholarRecord>) -> Result<ScholarIndex> {
        let works: Vec<u64> = records.iter().filter_map(|r| r.works_count).collect();
        let citations: Vec<u64> = records.iter().filter_map(|r| r.citation_count).collect();
        let tertile_cuts = TertileCuts {
            works: if works.len() >= 3 {
                Some(compute_tertiles(&works)?)
            } else {
                None
            },
            citations: if citations.len() >= 3 {
                Some(compute_tertiles(&citations)?)
            } else {
                None
            },
        };

        let mut block_index: BTreeMap<String, Vec<u32>> = BTreeMap::new();
        let mut exact_index: BTreeMap<String, Vec<u32>> = BTreeMap::new();
        let mut id_index: BTreeMap<String, u32> = BTreeMap::new();
        let mut norm_display = Vec::with_capacity(records.len());
        let mut norm_tokens = Vec::with_capacity(records.len());
        for (i, record) in records.iter().enumerate() {
            let idx = i as u32;
            block_index.entry(block_key(&record.lastname)).or_default().push(idx);
            exact_index
                .entry(exact_normalize(&record.display_name))
                .or_default()
                .push(idx);
            id_index.insert(record.scholar_id.clone(), idx);
            let (normalized, _) = normalize_name(&record.display_name);
            let lowered = normalized.to_lowercase();
            norm_tokens.push(split_tokens(&lowered));
            norm_display.push(lowered);
        }

        Ok(ScholarIndex {
            records,
            block_index,
            exact_index,
            id_index,
            norm_display,
            norm_tokens,
            tertile_cuts,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let snapshot = IndexSnapshot {
            records: self.records.clone(),
            tertile_cuts: self.tertile_cuts,
        };
        let bytes = bincode::serialize(&snapshot)
            .map_err(|e| AuditError::Corpus(format!("serialize index: {e}")))?;
        std::fs::write(path, bytes).map_err(|e| AuditError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ScholarIndex> {
        let bytes = std::fs::read(path).map_err(|e| AuditError::io(path, e))?;
        let snapshot: IndexSnapshot = bincode::deserialize(&bytes)
            .map_err(|e| AuditError::Corpus(format!("{}: corrupt index: {e}", path.display())))?;
        let mut index = ScholarIndex::from_records(snapshot.records)?;
        index.tertile_cuts = snapshot.tertile_cuts;
        Ok(index)
    }

    pub fn records(&self) -> &[ScholarRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record(&self, idx: u32) -> &ScholarRecord {
        &self.records[idx as usize]
    }

    pub fn scholar_by_id(&self, scholar_id: &str) -> Option<&ScholarRecord> {
        self.id_index.get(scholar_id).map(|&idx| self.record(idx))
    }

    pub fn tertile_cuts(&self) -> &TertileCuts {
        &self.tertile_cuts
    }

    pub fn block(&self, key: &str) -> &[u32] {
        self.block_index.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn block_count(&self) -> usize {
        self.block_index.len()
    }

    pub fn exact(&self, key: &str) -> &[u32] {
        self.exact_index.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Normalized lowercase display name, cached for fuzzy scoring.
    pub fn norm_display(&self, idx: u32) -> &str {
        &self.norm_display[idx as usize]
    }

    pub fn norm_tokens(&self, idx: u32) -> &[String] {
        &self.norm_tokens[idx as usize]
    }

    fn filtered<'a>(&'a self, restrict_field: Option<&'a str>) -> impl Iterator<Item = &'a ScholarRecord> {
        self.records
            .iter()
            .filter(move |r| restrict_field.is_none_or(|f| r.field == f))
    }

    /// Population proportions for one attribute. For gender and ethnicity the
    /// unknown category is excluded and the remainder renormalized (parity
    /// reference); bins include every record (absent values bin low); country
    /// covers records with a known country.
    pub fn population_marginal(
        &self,
        attr: MarginalAttr,
        restrict_field: Option<&str>,
    ) -> Result<BTreeMap<String, f64>> {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for record in self.filtered(restrict_field) {
            let category = match attr {
                MarginalAttr::Gender => match record.gender {
                    Gender::Unknown => continue,
                    g => g.as_str().to_string(),
                },
                MarginalAttr::Ethnicity => match record.ethnicity {
                    Ethnicity::Unknown => continue,
                    e => e.as_str().to_string(),
                },
                MarginalAttr::WorksBin => match self.tertile_cuts.works {
                    Some(cut) => cut.bin(record.works_count).as_str().to_string(),
                    None => continue,
                },
                MarginalAttr::CitationsBin => match self.tertile_cuts.citations {
                    Some(cut) => cut.bin(record.citation_count).as_str().to_string(),
                    None => continue,
                },
                MarginalAttr::Country => match &record.country_code {
                    Some(code) => code.clone(),
                    None => continue,
                },
            };
            *counts.entry(category).or_insert(0) += 1;
        }
        let total: u64 = counts.values().sum();
        if total == 0 {
            return Err(AuditError::Corpus(format!(
                "population marginal for {} is empty{}",
                attr.as_str(),
                restrict_field.map(|f| format!(" (restricted to {f})")).unwrap_or_default()
            )));
        }
        Ok(counts
            .into_iter()
            .map(|(category, count)| (category, count as f64 / total as f64))
            .collect())
    }

    /// Number of categories the population supports for an attribute; the
    /// diversity normalizer. Unknown counts as a category for gender and
    /// ethnicity; tertile bins always support three.
    pub fn diversity_support(&self, attr: MarginalAttr) -> usize {
        match attr {
            MarginalAttr::WorksBin | MarginalAttr::CitationsBin => 3,
            MarginalAttr::Gender => {
                let set: BTreeSet<Gender> = self.records.iter().map(|r| r.gender).collect();
                set.len()
            }
            MarginalAttr::Ethnicity => {
                let set: BTreeSet<Ethnicity> = self.records.iter().map(|r| r.ethnicity).collect();
                set.len()
            }
            MarginalAttr::Country => {
                let set: BTreeSet<&str> = self
                    .records
                    .iter()
                    .filter_map(|r| r.country_code.as_deref())
                    .collect();
                set.len()
            }
        }
    }
}

/// Whitespace- and hyphen-separated tokens.
pub fn split_tokens(s: &str) -> Vec<String> {
    s.split(|c: char| c.is_whitespace() || c == '-')
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}
