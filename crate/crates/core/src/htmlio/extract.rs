use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::validate::validate_html;
use super::{HtmlDocument, HtmlError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractionMethod {
    FencedBlock,
    TagSpan,
    Passthrough,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub method: ExtractionMethod,
    /// Bytes of the raw response before the extracted document.
    pub stripped_prefix_len: usize,
    /// Bytes of the raw response after the extracted document.
    pub stripped_suffix_len: usize,
}

const FENCES: [&str; 2] = ["```", "~~~"];

struct FencedBlock {
    language: Option<String>,
    content: Range<usize>,
}

/// Line-oriented fence scan. Unterminated fences are not blocks.
fn fenced_blocks(raw: &str) -> Vec<FencedBlock> {
    let mut blocks = Vec::new();
    // (fence char, fence length, language, content start)
    let mut open: Option<(u8, usize, Option<String>, usize)> = None;
    let mut offset = 0;
    for line in raw.split_inclusive('\n') {
        let line_start = offset;
        offset += line.len();
        let body = line.trim_end_matches(['\n', '\r']);
        let trimmed = body.trim_start();
        let fence_char = trimmed.bytes().next();
        let run = match fence_char {
            Some(c @ (b'`' | b'~')) => trimmed.bytes().take_while(|&b| b == c).count(),
            _ => 0,
        };
        match &open {
            None if run >= 3 => {
                let info = trimmed[run..].trim();
                let language = info
                    .split_whitespace()
                    .next()
                    .map(|l| l.trim_matches(['"', '\'', '{', '}', '.']).to_ascii_lowercase())
                    .filter(|l| !l.is_empty());
                open = Some((fence_char.unwrap(), run, language, offset));
            }
            Some((c, len, _, _))
                if run >= *len && fence_char == Some(*c) && trimmed[run..].trim().is_empty() =>
            {
                let (_, _, language, start) = open.take().unwrap();
                // drop the newline that precedes the closing fence
                let mut end = line_start.max(start);
                if raw[start..end].ends_with('\n') {
                    end -= 1;
                    if raw[start..end].ends_with('\r') {
                        end -= 1;
                    }
                }
                blocks.push(FencedBlock {
                    language,
                    content: start..end,
                });
            }
            _ => {}
        }
    }
    blocks
}

fn find_ci(hay: &str, needle: &str) -> Option<usize> {
    let h = hay.as_bytes();
    let n = needle.as_bytes();
    if h.len() < n.len() {
        return None;
    }
    (0..=h.len() - n.len()).find(|&i| h[i..i + n.len()].eq_ignore_ascii_case(n))
}

fn rfind_ci(hay: &str, needle: &str) -> Option<usize> {
    let h = hay.as_bytes();
    let n = needle.as_bytes();
    if h.len() < n.len() {
        return None;
    }
    (0..=h.len() - n.len()).rev().find(|&i| h[i..i + n.len()].eq_ignore_ascii_case(n))
}

/// Offset of the first `<!doctype` or `<html` opener.
fn first_opener(s: &str) -> Option<usize> {
    let doctype = find_ci(s, "<!doctype");
    let mut html = None;
    let mut from = 0;
    while let Some(p) = find_ci(&s[from..], "<html") {
        let at = from + p;
        let next = s.as_bytes().get(at + 5);
        if next.is_none_or(|b| !b.is_ascii_alphanumeric() && *b != b'-') {
            html = Some(at);
            break;
        }
        from = at + 5;
    }
    match (doctype, html) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    }
}

fn has_opener(s: &str) -> bool {
    first_opener(s).is_some()
}

/// From the first opener to the end of the last `</html>`.
fn tag_span(s: &str) -> Option<Range<usize>> {
    let start = first_opener(s)?;
    let close = rfind_ci(s, "</html>")?;
    let end = close + "</html>".len();
    (end > start).then_some(start..end)
}

/// The document inside `region`: its tag span if it has one, otherwise the
/// trimmed region when that starts with a tag.
fn narrow(raw: &str, region: Range<usize>) -> Option<Range<usize>> {
    let s = &raw[region.clone()];
    if let Some(span) = tag_span(s) {
        return Some(region.start + span.start..region.start + span.end);
    }
    let lead = s.len() - s.trim_start().len();
    let trail = s.len() - s.trim_end().len();
    let inner = region.start + lead..region.end - trail;
    raw[inner.clone()].starts_with('<').then_some(inner)
}

fn acceptable(text: &str) -> bool {
    !FENCES.iter().any(|f| text.contains(f)) && validate_html(text).ok
}

/// Pulls an HTML document out of a raw model response.
///
/// Precedence: the first fenced block labeled `html` (or unlabeled but
/// containing a doctype/html opener), then the span from the first opener to
/// the last `</html>`, then the whole response when it already starts with a
/// tag. The result never contains a fence delimiter and always validates.
pub fn extract_html(raw: &str) -> Result<(HtmlDocument, ExtractionReport), HtmlError> {
    if raw.trim().is_empty() {
        return Err(HtmlError::Extraction("empty response".into()));
    }

    let mut candidates: Vec<(ExtractionMethod, Range<usize>)> = Vec::new();
    for block in fenced_blocks(raw) {
        let content = &raw[block.content.clone()];
        let eligible = match block.language.as_deref() {
            Some("html" | "htm" | "xhtml") => true,
            None => has_opener(content),
            Some(_) => false,
        };
        if eligible {
            if let Some(r) = narrow(raw, block.content) {
                candidates.push((ExtractionMethod::FencedBlock, r));
            }
        }
    }
    if let Some(span) = tag_span(raw) {
        candidates.push((ExtractionMethod::TagSpan, span));
    }
    if let Some(r) = narrow(raw, 0..raw.len()).filter(|r| tag_span(&raw[r.clone()]).is_none()) {
        candidates.push((ExtractionMethod::Passthrough, r));
    }

    for (method, range) in candidates {
        let text = &raw[range.clone()];
        if acceptable(text) {
            let report = ExtractionReport {
                method,
                stripped_prefix_len: range.start,
                stripped_suffix_len: raw.len() - range.end,
            };
            return Ok((HtmlDocument::from_validated(text.to_string()), report));
        }
    }
    Err(HtmlError::Extraction(
        "no HTML document found in the response".into(),
    ))
}
