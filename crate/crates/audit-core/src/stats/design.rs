//! Treatment-coded design construction from long-format metric cells.
//!
//! Factors are categorical; each non-reference level contributes one dummy
//! column. The subfield factor is encoded as a two-level within-field slot
//! (alphabetically first or second member of the field's subfield pair) so
//! that it stays linearly independent of the field factor; coding subfield by
//! its raw labels would make every field dummy an exact sum of two subfield
//! dummies and the fit would be rank-deficient.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{AuditError, Result};

pub const SUBFIELD_SLOT_FIRST: &str = "pair-first";
pub const SUBFIELD_SLOT_SECOND: &str = "pair-second";

/// The prompt factors plus model identity, in declaration order.
pub const FACTOR_NAMES: [&str; 8] = [
    "language", "location", "role", "k", "field", "subfield", "seniority", "llm",
];

/// Declared reference levels; the llm reference is the alphabetically first
/// model observed, and the subfield reference is the slot holding the
/// reference field's second-listed subfield.
pub fn declared_reference(factor: &str) -> Option<&'static str> {
    match factor {
        "language" => Some("en"),
        "location" => Some("Germany"),
        "role" => Some("Director/Recruiter"),
        "k" => Some("1"),
        "field" => Some("Physics"),
        "subfield" => Some(SUBFIELD_SLOT_SECOND),
        "seniority" => Some("Junior Professor"),
        _ => None,
    }
}

/// One observation: the response value plus factor level values.
#[derive(Debug, Clone)]
pub struct Observation {
    pub y: f64,
    pub levels: Vec<String>,
    pub cluster: String,
}

#[derive(Debug, Clone)]
pub struct Factor {
    pub name: String,
    /// Observed levels; `levels[0]` is the reference.
    pub levels: Vec<String>,
}

impl Factor {
    pub fn df(&self) -> usize {
        self.levels.len() - 1
    }
}

/// A fully coded design: per-row factor level indices plus cluster ids.
#[derive(Debug, Clone)]
pub struct Design {
    pub response: String,
    pub factors: Vec<Factor>,
    pub y: Vec<f64>,
    /// Per row, per factor: index into `factors[f].levels`.
    pub level_idx: Vec<Vec<u32>>,
    pub cluster_ids: Vec<u32>,
    pub n_clusters: usize,
    pub notes: Vec<String>,
}

impl Design {
    /// Total number of columns including the intercept.
    pub fn n_cols(&self) -> usize {
        1 + self.factors.iter().map(Factor::df).sum::<usize>()
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    /// Column names as (factor, level) pairs; index 0 is the intercept.
    pub fn column_names(&self) -> Vec<(String, String)> {
        let mut names = vec![("(Intercept)".to_string(), String::new())];
        for factor in &self.factors {
            for level in factor.levels.iter().skip(1) {
                names.push((factor.name.clone(), level.clone()));
            }
        }
        names
    }

    /// Reference level per factor, aligned with `factors`.
    pub fn references(&self) -> Vec<&str> {
        self.factors.iter().map(|f| f.levels[0].as_str()).collect()
    }

    /// Active column indexes for one row: the intercept plus one dummy per
    /// factor whose level is not the reference.
    pub fn active_columns(&self, row: usize) -> Vec<usize> {
        let mut cols = Vec::with_capacity(1 + self.factors.len());
        cols.push(0);
        let mut offset = 1;
        for (f, factor) in self.factors.iter().enumerate() {
            let level = self.level_idx[row][f] as usize;
            if level > 0 {
                cols.push(offset + level - 1);
            }
            offset += factor.df();
        }
        cols
    }

    /// Column indexes contributed by one factor.
    pub fn factor_columns(&self, factor_idx: usize) -> std::ops::Range<usize> {
        let mut offset = 1;
        for factor in &self.factors[..factor_idx] {
            offset += factor.df();
        }
        offset..offset + self.factors[factor_idx].df()
    }
}

/// Orders candidate levels: numeric values ascending when every level parses
/// as an integer (the k factor), lexicographic otherwise.
fn order_levels(mut levels: Vec<String>) -> Vec<String> {
    let all_numeric = levels.iter().all(|l| l.parse::<i64>().is_ok());
    if all_numeric {
        levels.sort_by_key(|l| l.parse::<i64>().unwrap());
    } else {
        levels.sort();
    }
    levels
}

/// Builds the design for one response from long-format cells.
///
/// `cells` supplies, per row, the response value (absent rows are dropped by
/// the caller), the seven prompt dimension values plus llm id, and the
/// cluster key. Factors constant in the data are dropped with a note.
pub struct DesignBuilder {
    pub response: String,
    /// (factor name, per-row raw values).
    pub factor_values: Vec<(String, Vec<String>)>,
    pub y: Vec<f64>,
    pub clusters: Vec<String>,
}

impl DesignBuilder {
    pub fn build(self) -> Result<Design> {
        let n = self.y.len();
        if n == 0 {
            return Err(AuditError::Stats(format!(
                "{}: no rows with a present response",
                self.response
            )));
        }
        let distinct: BTreeSet<u64> = self.y.iter().map(|v| v.to_bits()).collect();
        if distinct.len() < 2 {
            return Err(AuditError::Stats(format!(
                "{}: fewer than 2 distinct response values",
                self.response
            )));
        }

        let mut notes = Vec::new();
        let mut factors = Vec::new();
        let mut per_factor_levels: Vec<Vec<u32>> = Vec::new();
        for (name, values) in &self.factor_values {
            debug_assert_eq!(values.len(), n);
            let observed: BTreeSet<String> = values.iter().cloned().collect();
            if observed.len() < 2 {
                notes.push(format!("factor {name} dropped: constant in data"));
                continue;
            }
            let ordered = order_levels(observed.into_iter().collect());
            let reference = match declared_reference(name) {
                Some(declared) if ordered.iter().any(|l| l == declared) => declared.to_string(),
                Some(declared) => {
                    notes.push(format!(
                        "factor {name}: declared reference `{declared}` absent; using `{}`",
                        ordered[0]
                    ));
                    ordered[0].clone()
                }
                None => ordered[0].clone(),
            };
            let mut levels = vec![reference.clone()];
            levels.extend(ordered.into_iter().filter(|l| *l != reference));
            let level_of: BTreeMap<&str, u32> = levels
                .iter()
                .enumerate()
                .map(|(i, l)| (l.as_str(), i as u32))
                .collect();
            per_factor_levels.push(values.iter().map(|v| level_of[v.as_str()]).collect());
            factors.push(Factor {
                name: name.clone(),
                levels,
            });
        }

        if factors.is_empty() {
            return Err(AuditError::Stats(format!(
                "{}: every factor is constant; nothing to decompose",
                self.response
            )));
        }

        let mut cluster_map: BTreeMap<&str, u32> = BTreeMap::new();
        let mut cluster_ids = Vec::with_capacity(n);
        for key in &self.clusters {
            let next = cluster_map.len() as u32;
            let id = *cluster_map.entry(key.as_str()).or_insert(next);
            cluster_ids.push(id);
        }

        let level_idx: Vec<Vec<u32>> = (0..n)
            .map(|row| per_factor_levels.iter().map(|col| col[row]).collect())
            .collect();

        Ok(Design {
            response: self.response,
            factors,
            y: self.y,
            level_idx,
            cluster_ids,
            n_clusters: cluster_map.len(),
            notes,
        })
    }
}

/// Maps raw subfield labels to within-field slots. Fails if any field shows
/// more than two subfields.
pub fn subfield_slots(
    fields: &[String],
    subfields: &[String],
) -> Result<Vec<String>> {
    let mut pair_of: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for (field, subfield) in fields.iter().zip(subfields) {
        pair_of.entry(field.as_str()).or_default().insert(subfield.as_str());
    }
    for (field, pair) in &pair_of {
        if pair.len() > 2 {
            return Err(AuditError::Stats(format!(
                "field `{field}` has {} subfields in the data; expected at most 2",
                pair.len()
            )));
        }
    }
    let slot_of: BTreeMap<(&str, &str), &'static str> = pair_of
        .iter()
        .flat_map(|(field, pair)| {
            pair.iter().enumerate().map(move |(i, sub)| {
                let slot = if i == 0 {
                    SUBFIELD_SLOT_FIRST
                } else {
                    SUBFIELD_SLOT_SECOND
                };
                ((*field, *sub), slot)
            })
        })
        .collect();
    Ok(fields
        .iter()
        .zip(subfields)
        .map(|(f, s)| slot_of[&(f.as_str(), s.as_str())].to_string())
        .collect())
}
