//! Prompt templates. Each template is a text resource under `templates/` with
//! named `{PLACEHOLDER}` slots; rendering substitutes in one pass, so values
//! that themselves contain braces are never re-expanded.

use thiserror::Error;

/// Bumped whenever any template text changes.
pub const TEMPLATE_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Template {
    pub name: &'static str,
    pub text: &'static str,
}

macro_rules! templates {
    ($($ident:ident => $file:literal),* $(,)?) => {
        $(pub const $ident: Template = Template {
            name: $file,
            text: include_str!(concat!("../templates/", $file, ".txt")),
        };)*
        pub const ALL: &[Template] = &[$($ident),*];
    };
}

templates! {
    SYSTEM => "system",
    ZS => "zs",
    ZS_COT => "zs_cot",
    PDGG_STEP1 => "pdgg_step1",
    PDGG_STEP2 => "pdgg_step2",
    PDGG_STEP3 => "pdgg_step3",
    PDGG_STEP4 => "pdgg_step4",
    PDGG_FEATURES => "pdgg_features",
    PDGG_IDEAS => "pdgg_ideas",
    PDGG_DESIGN => "pdgg_design",
    PDGG_HTML => "pdgg_html",
    PDGG_COMBINED => "pdgg_combined",
    RAGG_DIRECT => "ragg_direct",
    RAGG_FEATURES => "ragg_features",
    RAGG_FEATURE_AGGREGATE => "ragg_feature_aggregate",
    RAGG_DESIGN => "ragg_design",
    RAGG_DESIGN_AGGREGATE => "ragg_design_aggregate",
    RAGG_HTML => "ragg_html",
    SCGG_CRITIQUE => "scgg_critique",
    SCGG_REFINE => "scgg_refine",
    RERANK_BINARY => "rerank_binary",
    RERANK_FINE => "rerank_fine",
    RERANK_FULL => "rerank_full",
    CONTENT_ENRICH => "content_enrich",
    CONTENT_IMAGES => "content_images",
    REASK => "reask",
}

/// The four decomposition step instructions, in order.
pub const PDGG_STEPS: [Template; 4] = [PDGG_STEP1, PDGG_STEP2, PDGG_STEP3, PDGG_STEP4];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template {template}: no value for placeholder {{{name}}}")]
    Missing { template: &'static str, name: String },
    #[error("template {template}: value for {name} is never used")]
    Unused { template: &'static str, name: String },
}

/// `{NAME}` spans with NAME = `[A-Z][A-Z0-9_]*`.
fn placeholder_spans(text: &str) -> Vec<(usize, usize)> {
    let b = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        if b[i] == b'{' && i + 1 < b.len() && b[i + 1].is_ascii_uppercase() {
            let mut j = i + 1;
            while j < b.len() && (b[j].is_ascii_uppercase() || b[j].is_ascii_digit() || b[j] == b'_')
            {
                j += 1;
            }
            if j < b.len() && b[j] == b'}' {
                out.push((i, j + 1));
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    out
}

impl Template {
    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Vec<&'static str> {
        let mut names: Vec<&'static str> = Vec::new();
        for (s, e) in placeholder_spans(self.text) {
            let name = &self.text[s + 1..e - 1];
            if !names.contains(&name) {
                names.push(name);
            }
        }
        names
    }

    /// Substitutes every placeholder. Every placeholder needs a value and
    /// every value must be used.
    pub fn render(&self, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
        for (name, _) in vars {
            if !self.placeholders().contains(name) {
                return Err(TemplateError::Unused {
                    template: self.name,
                    name: name.to_string(),
                });
            }
        }
        let text = self.text.trim_end();
        let mut out = String::with_capacity(text.len() + vars.iter().map(|v| v.1.len()).sum::<usize>());
        let mut last = 0;
        for (s, e) in placeholder_spans(text) {
            let name = &text[s + 1..e - 1];
            let value = vars
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| TemplateError::Missing {
                    template: self.name,
                    name: name.to_string(),
                })?;
            out.push_str(&text[last..s]);
            out.push_str(value);
            last = e;
        }
        out.push_str(&text[last..]);
        Ok(out)
    }

    /// Rendering for the built-in templates, whose placeholder sets are fixed
    /// and covered by tests.
    pub(crate) fn fill(&self, vars: &[(&str, &str)]) -> String {
        self.render(vars)
            .unwrap_or_else(|e| panic!("built-in template misuse: {e}"))
    }
}

pub(crate) fn system() -> String {
    SYSTEM.text.trim_end().to_string()
}

pub(crate) fn reask(problem: &str) -> String {
    REASK.fill(&[("PROBLEM", problem)])
}

/// The four step instructions joined for the combined decomposition prompt.
pub fn pdgg_steps_text() -> String {
    PDGG_STEPS
        .iter()
        .map(|t| t.text.trim_end())
        .collect::<Vec<_>>()
        .join("\n\n")
}
