//! HTML extraction from raw model output, forgiving validation, and atomic
//! persistence of prototypes.

mod extract;
mod store;
pub mod tags;
mod validate;

pub use extract::{extract_html, ExtractionMethod, ExtractionReport};
pub use store::{prototype_dir, read_trace, store_prototype, write_atomic, StoredPaths};
pub use validate::{validate_html, ValidationReport};

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HtmlError {
    #[error("extraction failed: {0}")]
    Extraction(String),
    #[error("invalid html: {}", .0.join(", "))]
    Invalid(Vec<String>),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

/// A validated, non-empty HTML document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HtmlDocument {
    text: String,
    byte_length: usize,
}

impl HtmlDocument {
    pub fn new(text: impl Into<String>) -> Result<Self, HtmlError> {
        let text = text.into();
        let report = validate_html(&text);
        if !report.ok {
            return Err(HtmlError::Invalid(report.issues));
        }
        Ok(Self::from_validated(text))
    }

    pub(crate) fn from_validated(text: String) -> Self {
        Self {
            byte_length: text.len(),
            text,
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn byte_length(&self) -> usize {
        self.byte_length
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

impl<'de> Deserialize<'de> for HtmlDocument {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            text: String,
        }
        let raw = Raw::deserialize(d)?;
        HtmlDocument::new(raw.text).map_err(serde::de::Error::custom)
    }
}

impl std::fmt::Display for HtmlDocument {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.text)
    }
}
