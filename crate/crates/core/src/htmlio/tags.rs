//! Minimal forgiving tag scanner. It tokenizes tags and attributes with byte
//! spans so callers can rewrite attribute values without touching any other
//! byte of the document.

use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagKind {
    Open,
    Close,
    SelfClosing,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attr {
    /// Lowercased attribute name.
    pub name: String,
    pub value: Option<String>,
    /// Span of the raw value, excluding quotes.
    pub value_span: Option<Range<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tag {
    /// Lowercased element name.
    pub name: String,
    pub kind: TagKind,
    pub span: Range<usize>,
    pub attrs: Vec<Attr>,
    /// False when the input ended before the closing `>`.
    pub terminated: bool,
}

impl Tag {
    pub fn attr(&self, name: &str) -> Option<&Attr> {
        self.attrs.iter().find(|a| a.name == name)
    }
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Scan {
    pub tags: Vec<Tag>,
    pub unterminated_comment: bool,
}

const RAW_TEXT: [&str; 2] = ["script", "style"];

fn find_ci(hay: &[u8], from: usize, needle: &[u8]) -> Option<usize> {
    if needle.is_empty() || hay.len() < needle.len() {
        return None;
    }
    (from..=hay.len() - needle.len()).find(|&i| hay[i..i + needle.len()].eq_ignore_ascii_case(needle))
}

fn is_name_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b':' | b'.')
}

pub fn scan(html: &str) -> Scan {
    let bytes = html.as_bytes();
    let mut out = Scan::default();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'<' {
            i += 1;
            continue;
        }
        let rest = &bytes[i..];
        if rest.starts_with(b"<!--") {
            match find_ci(bytes, i + 4, b"-->") {
                Some(end) => i = end + 3,
                None => {
                    out.unterminated_comment = true;
                    break;
                }
            }
            continue;
        }
        if rest.len() > 1 && (rest[1] == b'!' || rest[1] == b'?') {
            // doctype or processing instruction
            i = bytes[i..].iter().position(|&b| b == b'>').map_or(bytes.len(), |p| i + p + 1);
            continue;
        }
        let closing = rest.len() > 1 && rest[1] == b'/';
        let name_start = i + if closing { 2 } else { 1 };
        if name_start >= bytes.len() || !bytes[name_start].is_ascii_alphabetic() {
            i += 1;
            continue;
        }
        let mut j = name_start;
        while j < bytes.len() && is_name_byte(bytes[j]) {
            j += 1;
        }
        let name = html[name_start..j].to_ascii_lowercase();
        let (attrs, end, self_closing, terminated) = parse_attrs(html, j);
        let kind = if closing {
            TagKind::Close
        } else if self_closing {
            TagKind::SelfClosing
        } else {
            TagKind::Open
        };
        out.tags.push(Tag {
            name: name.clone(),
            kind,
            span: i..end,
            attrs,
            terminated,
        });
        i = end;
        if kind == TagKind::Open && RAW_TEXT.contains(&name.as_str()) {
            let closer = format!("</{name}");
            match find_ci(bytes, i, closer.as_bytes()) {
                Some(p) => i = p,
                None => break,
            }
        }
    }
    out
}

/// Parses attributes starting right after the tag name. Returns the attributes,
/// the end offset (one past `>`), whether the tag is self-closing and whether
/// it was terminated.
fn parse_attrs(html: &str, mut i: usize) -> (Vec<Attr>, usize, bool, bool) {
    let bytes = html.as_bytes();
    let mut attrs = Vec::new();
    loop {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i >= bytes.len() {
            return (attrs, bytes.len(), false, false);
        }
        match bytes[i] {
            b'>' => return (attrs, i + 1, false, true),
            b'/' if bytes.get(i + 1) == Some(&b'>') => return (attrs, i + 2, true, true),
            b'/' => {
                i += 1;
                continue;
            }
            _ => {}
        }
        let name_start = i;
        while i < bytes.len()
            && !bytes[i].is_ascii_whitespace()
            && !matches!(bytes[i], b'=' | b'>' | b'/')
        {
            i += 1;
        }
        if i == name_start {
            // lone '=' or similar garbage
            i += 1;
            continue;
        }
        let name = html[name_start..i].to_ascii_lowercase();
        let mut j = i;
        while j < bytes.len() && bytes[j].is_ascii_whitespace() {
            j += 1;
        }
        if j < bytes.len() && bytes[j] == b'=' {
            j += 1;
            while j < bytes.len() && bytes[j].is_ascii_whitespace() {
                j += 1;
            }
            let (span, next) = match bytes.get(j) {
                Some(&q @ (b'"' | b'\'')) => {
                    let start = j + 1;
                    let end = bytes[start..]
                        .iter()
                        .position(|&b| b == q)
                        .map_or(bytes.len(), |p| start + p);
                    (start..end, (end + 1).min(bytes.len()))
                }
                _ => {
                    let start = j;
                    let mut end = j;
                    while end < bytes.len() && !bytes[end].is_ascii_whitespace() && bytes[end] != b'>'
                    {
                        end += 1;
                    }
                    (start..end, end)
                }
            };
            attrs.push(Attr {
                name,
                value: Some(html[span.clone()].to_string()),
                value_span: Some(span),
            });
            i = next;
        } else {
            attrs.push(Attr {
                name,
                value: None,
                value_span: None,
            });
        }
    }
}

/// All `<img>` tags in document order.
pub fn img_tags(html: &str) -> Vec<Tag> {
    scan(html)
        .tags
        .into_iter()
        .filter(|t| t.name == "img" && t.kind != TagKind::Close)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scans_attributes_with_spans() {
        let html = r#"<div class="a"><img id='x' src=foo.png alt="a > b"><br/></div>"#;
        let s = scan(html);
        let names: Vec<_> = s.tags.iter().map(|t| (t.name.as_str(), t.kind)).collect();
        assert_eq!(
            names,
            vec![
                ("div", TagKind::Open),
                ("img", TagKind::Open),
                ("br", TagKind::SelfClosing),
                ("div", TagKind::Close)
            ]
        );
        let img = &s.tags[1];
        let src = img.attr("src").unwrap();
        assert_eq!(&html[src.value_span.clone().unwrap()], "foo.png");
        assert_eq!(img.attr("alt").unwrap().value.as_deref(), Some("a > b"));
        assert_eq!(img.attr("id").unwrap().value.as_deref(), Some("x"));
    }

    #[test]
    fn skips_script_and_comments() {
        let html = "<!-- <body> --><script>if (a<b) { '<html>' }</script><p>";
        let s = scan(html);
        let names: Vec<_> = s.tags.iter().map(|t| t.name.as_str()).collect();
        assert_eq!(names, vec!["script", "script", "p"]);
    }

    #[test]
    fn ignores_text_less_than() {
        assert!(scan("a < b and 3<4").tags.is_empty());
    }

    #[test]
    fn boolean_and_uppercase_attrs() {
        let s = scan("<IMG ID=hero HIDDEN>");
        let t = &s.tags[0];
        assert_eq!(t.name, "img");
        assert_eq!(t.attr("id").unwrap().value.as_deref(), Some("hero"));
        assert!(t.attr("hidden").unwrap().value.is_none());
    }

    #[test]
    fn unterminated_tag() {
        let s = scan("<img src=\"x");
        assert!(!s.tags[0].terminated);
    }
}
