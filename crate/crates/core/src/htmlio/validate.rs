use serde::{Deserialize, Serialize};

use super::tags::{scan, TagKind};

const STRUCTURAL: [&str; 3] = ["html", "head", "body"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    /// Every violation found. Only some of them make `ok` false; the rest
    /// describe what a browser would silently repair.
    pub issues: Vec<String>,
}

/// Forgiving structural check.
///
/// Rejected: empty documents, NUL bytes, text without any tag, closing
/// `html`/`head`/`body` tags with no matching opener, and repeated structural
/// openers. Unclosed structural tags are accepted with an `auto-closed` issue.
pub fn validate_html(doc: &str) -> ValidationReport {
    let mut fatal = Vec::new();
    let mut soft = Vec::new();

    if doc.trim().is_empty() {
        return ValidationReport {
            ok: false,
            issues: vec!["empty".into()],
        };
    }
    if doc.contains('\0') {
        fatal.push("nul-byte".to_string());
    }

    let scanned = scan(doc);
    if scanned.tags.is_empty() && !doc.contains("<!") {
        fatal.push("no-markup".to_string());
    }
    if scanned.unterminated_comment {
        soft.push("auto-closed comment".to_string());
    }

    let mut open = [0usize; 3];
    let mut seen = [0usize; 3];
    for tag in &scanned.tags {
        if !tag.terminated {
            soft.push(format!("unterminated <{}>", tag.name));
        }
        let Some(slot) = STRUCTURAL.iter().position(|s| *s == tag.name) else {
            continue;
        };
        match tag.kind {
            TagKind::Open | TagKind::SelfClosing => {
                seen[slot] += 1;
                if seen[slot] > 1 {
                    fatal.push(format!("duplicate <{}>", tag.name));
                }
                if tag.kind == TagKind::Open {
                    open[slot] += 1;
                }
            }
            TagKind::Close => {
                if open[slot] == 0 {
                    fatal.push(format!("stray </{}>", tag.name));
                } else {
                    open[slot] -= 1;
                }
            }
        }
    }
    // report innermost first: body, head, html
    for slot in (0..3).rev() {
        if open[slot] > 0 {
            soft.push(format!("auto-closed {}", STRUCTURAL[slot]));
        }
    }

    let ok = fatal.is_empty();
    fatal.extend(soft);
    ValidationReport { ok, issues: fatal }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document() {
        let r = validate_html("<html><body></body></html>");
        assert!(r.ok);
        assert!(r.issues.is_empty());
    }

    #[test]
    fn empty_document() {
        let r = validate_html("");
        assert!(!r.ok);
        assert_eq!(r.issues, vec!["empty".to_string()]);
    }

    #[test]
    fn unclosed_body_is_repaired() {
        let r = validate_html("<html><body>");
        assert!(r.ok);
        assert!(r.issues.contains(&"auto-closed body".to_string()));
        assert!(r.issues.contains(&"auto-closed html".to_string()));
    }

    #[test]
    fn fatal_cases() {
        assert!(!validate_html("<html>\0</html>").ok);
        assert!(!validate_html("just words").ok);
        assert!(!validate_html("<p>x</p></body>").ok);
        assert!(!validate_html("<html><html></html></html>").ok);
    }

    #[test]
    fn fragments_are_accepted() {
        assert!(validate_html("<div>hello</div>").ok);
        assert!(validate_html("<!DOCTYPE html>").ok);
    }
}
