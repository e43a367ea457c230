//! Factorial prompt design: manifest loading, grid enumeration, and
//! template rendering in three languages.
//!
//! A manifest declares seven dimensions (role, language, location, field,
//! subfield, seniority, k) together with per-language surface forms and one
//! prompt template per language. The subfield dimension is nested: each field
//! carries its own pair of subfields, so the grid size multiplies by the pair
//! size, not by the total subfield count.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AuditError, Result};

/// The six template placeholders, in the order they are documented.
pub const PLACEHOLDERS: [&str; 6] = [
    "{role-and-task}",
    "{location}",
    "{k}",
    "{seniority}",
    "{field}",
    "{sub-field}",
];

pub const SUPPORTED_LANGUAGES: [&str; 3] = ["en", "de", "es"];

/// A dimension value with its canonical id and per-language surface forms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledValue {
    pub id: String,
    pub surface: BTreeMap<String, String>,
}

/// A location value additionally carries its ISO 3166-1 alpha-2 code, used
/// by location factuality.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocationValue {
    pub id: String,
    pub iso: String,
    pub surface: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DimensionSet {
    pub role: Vec<LabeledValue>,
    pub language: Vec<String>,
    pub location: Vec<LocationValue>,
    pub field: Vec<LabeledValue>,
    pub subfield: BTreeMap<String, Vec<LabeledValue>>,
    pub seniority: Vec<LabeledValue>,
    pub k: Vec<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub dimensions: DimensionSet,
    pub templates: BTreeMap<String, String>,
}

/// The chosen value for each of the seven dimensions, by canonical id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptDims {
    pub role: String,
    pub language: String,
    pub location: String,
    pub field: String,
    pub subfield: String,
    pub seniority: String,
    pub k: u32,
}

/// The language-specific surface forms substituted into the template; kept on
/// the instance so downstream stages can audit exactly what the model saw.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSurfaces {
    pub role: String,
    pub location: String,
    pub field: String,
    pub subfield: String,
    pub seniority: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptInstance {
    pub prompt_id: String,
    pub dims: PromptDims,
    pub surfaces: PromptSurfaces,
    pub text: String,
}

impl PromptDims {
    /// Canonical 7-tuple string; the prompt id is its SHA-256 hex digest, so
    /// ids are stable across re-renderings and pipeline stages.
    pub fn canonical_string(&self) -> String {
        [
            self.role.as_str(),
            self.language.as_str(),
            self.location.as_str(),
            self.field.as_str(),
            self.subfield.as_str(),
            self.seniority.as_str(),
        ]
        .join("\u{1f}")
            + "\u{1f}"
            + &self.k.to_string()
    }

    pub fn prompt_id(&self) -> String {
        let digest = Sha256::digest(self.canonical_string().as_bytes());
        let mut s = String::with_capacity(64);
        for b in digest {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }
}

impl Manifest {
    /// The manifest bundled with the crate; reproduces the audited dimension
    /// table (2 roles x 3 languages x 5 locations x 6 fields x 2 subfields x
    /// 2 seniorities x 3 list lengths).
    pub fn bundled() -> Manifest {
        let raw = include_str!("../data/manifest.json");
        let manifest: Manifest =
            serde_json::from_str(raw).expect("bundled manifest must parse");
        manifest.validate().expect("bundled manifest must validate");
        manifest
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        let raw = std::fs::read_to_string(path).map_err(|e| AuditError::io(path, e))?;
        let manifest: Manifest = serde_json::from_str(&raw)
            .map_err(|e| AuditError::parse(path, e.line(), e.to_string()))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dimensions;
        fn fail(dim: &str, detail: impl Into<String>) -> AuditError {
            AuditError::Manifest {
                dimension: dim.to_string(),
                detail: detail.into(),
            }
        }

        if d.role.is_empty() {
            return Err(fail("role", "at least one role required"));
        }
        if d.language.is_empty() {
            return Err(fail("language", "at least one language required"));
        }
        for lang in &d.language {
            if !SUPPORTED_LANGUAGES.iter().any(|s| s == lang) {
                return Err(fail(
                    "language",
                    format!("unsupported language code `{lang}` (expected en, de, es)"),
                ));
            }
        }
        if d.location.is_empty() {
            return Err(fail("location", "at least one location required"));
        }
        if d.field.is_empty() {
            return Err(fail("field", "at least one field required"));
        }
        if d.seniority.is_empty() {
            return Err(fail("seniority", "at least one seniority required"));
        }
        if d.k.is_empty() {
            return Err(fail("k", "at least one k value required"));
        }
        if d.k.contains(&0) {
            return Err(fail("k", "k values must be positive"));
        }

        check_labels("role", d.role.iter().map(|v| (&v.id, &v.surface)), &d.language)?;
        check_labels("field", d.field.iter().map(|v| (&v.id, &v.surface)), &d.language)?;
        check_labels(
            "seniority",
            d.seniority.iter().map(|v| (&v.id, &v.surface)),
            &d.language,
        )?;
        check_labels(
            "location",
            d.location.iter().map(|v| (&v.id, &v.surface)),
            &d.language,
        )?;
        for loc in &d.location {
            if loc.iso.len() != 2 || !loc.iso.chars().all(|c| c.is_ascii_uppercase()) {
                return Err(fail(
                    "location",
                    format!("`{}` has invalid ISO code `{}`", loc.id, loc.iso),
                ));
            }
        }

        let field_ids: BTreeSet<&str> = d.field.iter().map(|f| f.id.as_str()).collect();
        for field in &d.field {
            let pair = d.subfield.get(&field.id).ok_or_else(|| {
                fail(
                    "subfield",
                    format!("field `{}` lacks a subfield pair", field.id),
                )
            })?;
            if pair.is_empty() || pair.len() > 2 {
                return Err(fail(
                    "subfield",
                    format!(
                        "field `{}` must declare 1 or 2 subfields, found {}",
                        field.id,
                        pair.len()
                    ),
                ));
            }
            check_labels("subfield", pair.iter().map(|v| (&v.id, &v.surface)), &d.language)?;
        }
        for key in d.subfield.keys() {
            if !field_ids.contains(key.as_str()) {
                return Err(fail(
                    "subfield",
                    format!("subfield entry `{key}` does not match any declared field"),
                ));
            }
        }

        for lang in &d.language {
            let template = self.templates.get(lang).ok_or_else(|| {
                fail("language", format!("no template for language `{lang}`"))
            })?;
            let missing: Vec<&str> = PLACEHOLDERS
                .iter()
                .copied()
                .filter(|p| !template.contains(p))
                .collect();
            if !missing.is_empty() {
                return Err(fail(
                    "language",
                    format!("template `{lang}` is missing placeholders: {}", missing.join(", ")),
                ));
            }
        }
        Ok(())
    }

    /// Maps every localized field surface form (lowercased) to its canonical
    /// English field id; used by field factuality.
    pub fn field_translations(&self) -> BTreeMap<String, String> {
        let mut table = BTreeMap::new();
        for field in &self.dimensions.field {
            table.insert(field.id.to_lowercase(), field.id.clone());
            for surface in field.surface.values() {
                table.insert(surface.to_lowercase(), field.id.clone());
            }
        }
        table
    }

    /// Maps location ids to ISO 3166-1 alpha-2 codes.
    pub fn location_iso(&self) -> BTreeMap<String, String> {
        self.dimensions
            .location
            .iter()
            .map(|l| (l.id.clone(), l.iso.clone()))
            .collect()
    }

    fn surface_of<'a>(
        &self,
        dim: &str,
        id: &str,
        surfaces: &'a BTreeMap<String, String>,
        language: &str,
    ) -> Result<&'a str> {
        surfaces.get(language).map(String::as_str).ok_or_else(|| {
            AuditError::Render(format!(
                "missing `{language}` translation for {dim} label `{id}`"
            ))
        })
    }

    /// Renders one prompt. Every placeholder must be present in the template
    /// and no `{...}` may survive substitution.
    pub fn render(&self, dims: &PromptDims) -> Result<PromptInstance> {
        let d = &self.dimensions;
        let template = self.templates.get(&dims.language).ok_or_else(|| {
            AuditError::Render(format!("no template for language `{}`", dims.language))
        })?;

        let missing: Vec<&str> = PLACEHOLDERS
            .iter()
            .copied()
            .filter(|p| !template.contains(p))
            .collect();
        if !missing.is_empty() {
            return Err(AuditError::Render(format!(
                "template `{}` is missing placeholders: {}",
                dims.language,
                missing.join(", ")
            )));
        }

        let role = d
            .role
            .iter()
            .find(|r| r.id == dims.role)
            .ok_or_else(|| AuditError::Render(format!("unknown role `{}`", dims.role)))?;
        let location = d
            .location
            .iter()
            .find(|l| l.id == dims.location)
            .ok_or_else(|| AuditError::Render(format!("unknown location `{}`", dims.location)))?;
        let field = d
            .field
            .iter()
            .find(|f| f.id == dims.field)
            .ok_or_else(|| AuditError::Render(format!("unknown field `{}`", dims.field)))?;
        let subfield = d
            .subfield
            .get(&dims.field)
            .and_then(|pair| pair.iter().find(|s| s.id == dims.subfield))
            .ok_or_else(|| {
                AuditError::Render(format!(
                    "unknown subfield `{}` for field `{}`",
                    dims.subfield, dims.field
                ))
            })?;
        let seniority = d
            .seniority
            .iter()
            .find(|s| s.id == dims.seniority)
            .ok_or_else(|| AuditError::Render(format!("unknown seniority `{}`", dims.seniority)))?;

        let lang = dims.language.as_str();
        let surfaces = PromptSurfaces {
            role: self.surface_of("role", &role.id, &role.surface, lang)?.to_string(),
            location: self
                .surface_of("location", &location.id, &location.surface, lang)?
                .to_string(),
            field: self.surface_of("field", &field.id, &field.surface, lang)?.to_string(),
            subfield: self
                .surface_of("subfield", &subfield.id, &subfield.surface, lang)?
                .to_string(),
            seniority: self
                .surface_of("seniority", &seniority.id, &seniority.surface, lang)?
                .to_string(),
        };

        let text = template
            .replace("{role-and-task}", &surfaces.role)
            .replace("{location}", &surfaces.location)
            .replace("{k}", &dims.k.to_string())
            .replace("{seniority}", &surfaces.seniority)
            .replace("{field}", &surfaces.field)
            .replace("{sub-field}", &surfaces.subfield);

        let unresolved = find_placeholders(&text);
        if !unresolved.is_empty() {
            return Err(AuditError::Render(format!(
                "unresolved placeholders after substitution: {}",
                unresolved.join(", ")
            )));
        }

        Ok(PromptInstance {
            prompt_id: dims.prompt_id(),
            dims: dims.clone(),
            surfaces,
            text,
        })
    }

    /// Enumerates the full Cartesian product in dimension declaration order
    /// (role, language, location, field, subfield-within-field, seniority, k).
    pub fn enumerate_grid(&self) -> Result<Vec<PromptInstance>> {
        let d = &self.dimensions;
        let mut out = Vec::with_capacity(self.grid_size());
        for role in &d.role {
            for language in &d.language {
                for location in &d.location {
                    for field in &d.field {
                        let pair = d.subfield.get(&field.id).ok_or_else(|| {
                            AuditError::Manifest {
                                dimension: "subfield".into(),
                                detail: format!("field `{}` lacks a subfield pair", field.id),
                            }
                        })?;
                        for subfield in pair {
                            for seniority in &d.seniority {
                                for &k in &d.k {
                                    let dims = PromptDims {
                                        role: role.id.clone(),
                                        language: language.clone(),
                                        location: location.id.clone(),
                                        field: field.id.clone(),
                                        subfield: subfield.id.clone(),
                                        seniority: seniority.id.clone(),
                                        k,
                                    };
                                    out.push(self.render(&dims)?);
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Product of the dimension cardinalities, with subfield counted per
    /// parent field.
    pub fn grid_size(&self) -> usize {
        let d = &self.dimensions;
        let sub_total: usize = d
            .field
            .iter()
            .map(|f| d.subfield.get(&f.id).map_or(0, Vec::len))
            .sum();
        d.role.len() * d.language.len() * d.location.len() * sub_total * d.seniority.len() * d.k.len()
    }
}

fn check_labels<'a>(
    dim: &str,
    labels: impl Iterator<Item = (&'a String, &'a BTreeMap<String, String>)>,
    languages: &[String],
) -> Result<()> {
    let mut seen = BTreeSet::new();
    for (id, surfaces) in labels {
        if id.trim().is_empty() {
            return Err(AuditError::Manifest {
                dimension: dim.to_string(),
                detail: "empty label id".to_string(),
            });
        }
        if !seen.insert(id.clone()) {
            return Err(AuditError::Manifest {
                dimension: dim.to_string(),
                detail: format!("duplicate label `{id}`"),
            });
        }
        for lang in languages {
            match surfaces.get(lang) {
                Some(surface) if !surface.trim().is_empty() => {}
                Some(_) => {
                    return Err(AuditError::Manifest {
                        dimension: dim.to_string(),
                        detail: format!("label `{id}` has an empty `{lang}` surface form"),
                    })
                }
                None => {
                    return Err(AuditError::Manifest {
                        dimension: dim.to_string(),
                        detail: format!("label `{id}` lacks a `{lang}` surface form"),
                    })
                }
            }
        }
    }
    Ok(())
}

/// Returns every `{...}` span found in the text.
pub fn find_placeholders(text: &str) -> Vec<String> {
    let mut found = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            if let Some(end) = text[i..].find('}') {
                found.push(text[i..i + end + 1].to_string());
                i += end + 1;
                continue;
            }
        }
        i += 1;
    }
    found
}
