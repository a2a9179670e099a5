//! Prompt templates for extraction, generalization and inference.
//!
//! Templates are plain text with `{name}` placeholders. Rendering is a single
//! pass, so substituted values are never re-scanned, and braces that do not
//! name a known placeholder are left untouched.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const PLACEHOLDERS: &[&str] = &[
    "character",
    "trait_name",
    "trait_definition",
    "chapter_body",
    "prior_text",
    "extracted_text",
    "stage_instruction",
    "language_tag",
    "persona",
];

const DEFAULT_EXTRACTION: &str = include_str!("../templates/extraction.txt");
const DEFAULT_GENERALIZATION: &str = include_str!("../templates/generalization.txt");
const DEFAULT_INFERENCE: &str = include_str!("../templates/inference.txt");

pub const EXTRACTION_FILE: &str = "extraction.txt";
pub const GENERALIZATION_FILE: &str = "generalization.txt";
pub const INFERENCE_FILE: &str = "inference.txt";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub extraction: String,
    pub generalization: String,
    pub inference: String,
    version_hash: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet::new(DEFAULT_EXTRACTION, DEFAULT_GENERALIZATION, DEFAULT_INFERENCE)
            .expect("bundled templates are valid")
    }
}

impl PromptSet {
    pub fn new(
        extraction: impl Into<String>,
        generalization: impl Into<String>,
        inference: impl Into<String>,
    ) -> Result<Self> {
        let (extraction, generalization, inference) = (extraction.into(), generalization.into(), inference.into());
        for (name, text) in [
            ("extraction", &extraction),
            ("generalization", &generalization),
            ("inference", &inference),
        ] {
            if text.trim().is_empty() {
                return Err(Error::validation(format!("{name} template is empty")));
            }
        }
        let mut hasher = Sha256::new();
        for text in [&extraction, &generalization, &inference] {
            hasher.update((text.len() as u64).to_le_bytes());
            hasher.update(text.as_bytes());
        }
        let version_hash = hex::encode(hasher.finalize());
        Ok(PromptSet {
            extraction,
            generalization,
            inference,
            version_hash,
        })
    }

    /// Loads `extraction.txt`, `generalization.txt` and `inference.txt` from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let path = dir.join(name);
            std::fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))
        };
        PromptSet::new(
            read(EXTRACTION_FILE)?,
            read(GENERALIZATION_FILE)?,
            read(INFERENCE_FILE)?,
        )
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        for (name, text) in [
            (EXTRACTION_FILE, &self.extraction),
            (GENERALIZATION_FILE, &self.generalization),
            (INFERENCE_FILE, &self.inference),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))?;
        }
        Ok(())
    }

    /// Full SHA-256 over the three templates.
    pub fn version_hash(&self) -> &str {
        &self.version_hash
    }

    /// First 16 hex digits of the version hash; names the store lineage.
    pub fn short_hash(&self) -> &str {
        &self.version_hash[..16]
    }
}

/// Substitutes known `{name}` placeholders from `vars`.
pub fn render(template: &str, vars: &HashMap<&str, &str>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if PLACEHOLDERS.contains(&&after[..close]) => {
                let name = &after[..close];
                match vars.get(name) {
                    Some(value) => out.push_str(value),
                    None => {
                        out.push('{');
                        out.push_str(name);
                        out.push('}');
                    }
                }
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}
