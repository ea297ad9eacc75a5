//! Content generation for a finished prototype: realistic data enrichment,
//! image descriptions, image generation, and src substitution by img id.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::htmlio::tags::{img_tags, scan, Tag, TagKind};
use crate::htmlio::{extract_html, write_atomic, HtmlDocument};
use crate::llm::http::HttpClient;
use crate::llm::{ChatMessage, HttpConfig, LlmError};
use crate::session::{GenerationError, GenerationTrace, Session};
use crate::strategies::Prototype;
use crate::templates;

pub const ENRICH_STAGE: &str = "content.enrich";
pub const IMAGES_STAGE: &str = "content.images";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSlot {
    pub slot_id: String,
    pub description: String,
    /// Set when the description was derived locally instead of by the model.
    #[serde(default)]
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetRef {
    pub slot_id: String,
    pub url: String,
    pub media_type: String,
    /// Set when generation or storage failed and `url` is a placeholder.
    #[serde(default)]
    pub failed: bool,
}

fn id_of(tag: &Tag) -> Option<&str> {
    tag.attr("id")
        .and_then(|a| a.value.as_deref())
        .map(str::trim)
        .filter(|v| !v.is_empty())
}

/// Img ids in document order, without repeats.
pub fn img_ids(html: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    img_tags(html)
        .iter()
        .filter_map(id_of)
        .filter(|id| seen.insert(id.to_string()))
        .map(str::to_string)
        .collect()
}

fn escape_attr(v: &str) -> String {
    v.replace('&', "&amp;")
        .replace('"', "&quot;")
        .replace('\'', "&#39;")
        .replace('<', "&lt;")
}

/// Applies `(range, replacement)` edits, which must not overlap.
fn splice(html: &str, mut edits: Vec<(std::ops::Range<usize>, String)>) -> String {
    edits.sort_by_key(|(r, _)| r.start);
    let mut out = String::with_capacity(html.len() + edits.iter().map(|e| e.1.len()).sum::<usize>());
    let mut last = 0;
    for (r, text) in edits {
        out.push_str(&html[last..r.start]);
        out.push_str(&text);
        last = r.end;
    }
    out.push_str(&html[last..]);
    out
}

/// Gives every img a unique id: missing, empty and repeated ids become
/// `img-<ordinal>` (bumped past ids already in use).
pub fn repair_img_ids(html: &str) -> (String, Vec<String>) {
    let tags = img_tags(html);
    let mut used: BTreeSet<String> = tags.iter().filter_map(id_of).map(str::to_string).collect();
    let mut seen = BTreeSet::new();
    let mut edits = Vec::new();
    let mut warnings = Vec::new();
    for (i, tag) in tags.iter().enumerate() {
        let current = id_of(tag);
        if let Some(id) = current {
            if seen.insert(id.to_string()) {
                continue;
            }
        }
        let mut n = i + 1;
        let mut fresh = format!("img-{n}");
        while used.contains(&fresh) {
            n += 1;
            fresh = format!("img-{n}");
        }
        used.insert(fresh.clone());
        seen.insert(fresh.clone());
        match (current, tag.attr("id").and_then(|a| a.value_span.clone())) {
            (Some(old), Some(span)) => {
                warnings.push(format!("img #{} repeats id {old:?}; renamed to {fresh}", i + 1));
                edits.push((span, fresh));
            }
            _ => {
                warnings.push(format!("img #{} has no id; assigned {fresh}", i + 1));
                let at = tag.span.start + "<img".len();
                edits.push((at..at, format!(" id=\"{fresh}\"")));
            }
        }
    }
    (splice(html, edits), warnings)
}

fn with_content_stage(prototype: &Prototype, html: HtmlDocument, trace: GenerationTrace) -> Prototype {
    Prototype {
        html,
        strategy: prototype.strategy,
        iteration: prototype.iteration,
        trace,
    }
}

/// Adds realistic data and img ids in one call; a repair pass fixes any img
/// the model left without a unique id.
pub fn enrich_content(session: &Session, prototype: &Prototype) -> Result<Prototype, GenerationError> {
    let prompt = templates::CONTENT_ENRICH.fill(&[("HTML", prototype.html.text())]);
    let messages = vec![ChatMessage::system(templates::system()), ChatMessage::user(prompt)];
    let staged = session.ask(ENRICH_STAGE, messages, |raw| {
        extract_html(raw).map(|(d, _)| d).map_err(|e| e.to_string())
    })?;
    let mut trace = prototype.trace.clone();
    trace.extend(staged.records);
    let (repaired, warnings) = repair_img_ids(staged.value.text());
    for w in warnings {
        trace.warn(format!("{ENRICH_STAGE}: {w}"));
    }
    let html = HtmlDocument::new(repaired)?;
    Ok(with_content_stage(prototype, html, trace))
}

#[derive(Deserialize)]
struct DescribedImage {
    id: String,
    description: String,
}

fn parse_descriptions(raw: &str) -> Result<Vec<DescribedImage>, String> {
    let (s, e) = match (raw.find('['), raw.rfind(']')) {
        (Some(s), Some(e)) if s < e => (s, e),
        _ => return Err("no JSON array in the answer".into()),
    };
    serde_json::from_str::<Vec<DescribedImage>>(&raw[s..=e]).map_err(|e| format!("invalid JSON array: {e}"))
}

/// Visible text of `html[range]`, whitespace collapsed.
fn visible_text(html: &str, range: std::ops::Range<usize>) -> String {
    let mut text = String::new();
    let mut last = range.start;
    for tag in scan(html).tags.iter().filter(|t| t.span.end > range.start && t.span.start < range.end) {
        if tag.span.start > last {
            text.push_str(&html[last..tag.span.start]);
        }
        text.push(' ');
        last = last.max(tag.span.end);
    }
    if last < range.end {
        text.push_str(&html[last..range.end]);
    }
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn floor_boundary(s: &str, mut i: usize) -> usize {
    while !s.is_char_boundary(i) {
        i -= 1;
    }
    i
}

/// Description for an img the model did not describe: its alt or title
/// text, else the nearest visible text after (then before) the tag.
fn fallback_description(html: &str, tag: &Tag) -> String {
    let own = ["alt", "title"]
        .iter()
        .filter_map(|a| tag.attr(a).and_then(|v| v.value.clone()))
        .map(|v| v.trim().to_string())
        .find(|v| !v.is_empty());
    let context = own.or_else(|| {
        let after_end = floor_boundary(html, (tag.span.end + 300).min(html.len()));
        let before_start = floor_boundary(html, tag.span.start.saturating_sub(300));
        [
            visible_text(html, tag.span.end..after_end),
            visible_text(html, before_start..tag.span.start),
        ]
        .into_iter()
        .find(|t| !t.is_empty())
        .map(|t| t.chars().take(120).collect())
    });
    match context {
        Some(c) => format!("Image for a mobile app page showing: {c}"),
        None => "Generic illustrative image for a mobile app page".to_string(),
    }
}

/// One slot per img id. Ids the model skips get a locally derived, flagged
/// description; an unparseable answer leaves only such slots.
pub fn extract_image_specs(
    session: &Session,
    html: &HtmlDocument,
) -> Result<(Vec<ImageSlot>, GenerationTrace), GenerationError> {
    let mut trace = GenerationTrace::new();
    let ids = img_ids(html.text());
    if ids.is_empty() {
        return Ok((Vec::new(), trace));
    }
    let prompt = templates::CONTENT_IMAGES.fill(&[("HTML", html.text())]);
    let messages = vec![ChatMessage::system(templates::system()), ChatMessage::user(prompt)];
    let (described, records, _) = session.ask_lenient(IMAGES_STAGE, messages, parse_descriptions)?;
    trace.extend(records);
    let mut by_id: HashMap<String, String> = HashMap::new();
    match described {
        Some(items) => {
            for item in items {
                let d = item.description.trim();
                if !ids.contains(&item.id) {
                    trace.warn(format!("{IMAGES_STAGE}: description for unknown id {:?} ignored", item.id));
                } else if !d.is_empty() {
                    by_id.entry(item.id).or_insert_with(|| d.to_string());
                }
            }
        }
        None => trace.warn(format!("{IMAGES_STAGE}: unusable answer; all descriptions derived locally")),
    }
    let tags = img_tags(html.text());
    let slots = ids
        .into_iter()
        .map(|id| match by_id.remove(&id) {
            Some(description) => ImageSlot {
                slot_id: id,
                description,
                fallback: false,
            },
            None => {
                let tag = tags.iter().find(|t| id_of(t) == Some(id.as_str())).expect("id came from a tag");
                trace.warn(format!("{IMAGES_STAGE}: no description for {id}; using nearby text"));
                ImageSlot {
                    description: fallback_description(html.text(), tag),
                    slot_id: id,
                    fallback: true,
                }
            }
        })
        .collect();
    Ok((slots, trace))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedImage {
    pub bytes: Vec<u8>,
    pub media_type: String,
    pub extension: String,
}

/// Text-to-image backend.
pub trait ImageProvider: Send + Sync {
    fn id(&self) -> &str;
    fn generate(&self, description: &str) -> Result<GeneratedImage, LlmError>;
}

fn short_hash(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..6])
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Offline provider: a deterministic SVG whose colour and caption come from
/// the description.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubImageProvider;

impl ImageProvider for StubImageProvider {
    fn id(&self) -> &str {
        "stub"
    }

    fn generate(&self, description: &str) -> Result<GeneratedImage, LlmError> {
        let h = Sha256::digest(description.as_bytes());
        let colour = format!("#{:02x}{:02x}{:02x}", h[0] / 2 + 96, h[1] / 2 + 96, h[2] / 2 + 96);
        let caption: String = description.chars().take(48).collect();
        let svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"512\" height=\"512\" viewBox=\"0 0 512 512\">\
             <rect width=\"512\" height=\"512\" fill=\"{colour}\"/>\
             <text x=\"256\" y=\"256\" font-size=\"18\" text-anchor=\"middle\" fill=\"#222\">{}</text>\
             </svg>\n",
            xml_escape(&caption)
        );
        Ok(GeneratedImage {
            bytes: svg.into_bytes(),
            media_type: "image/svg+xml".into(),
            extension: "svg".into(),
        })
    }
}

/// Live `images/generations` backend requesting base64 PNG output at a fixed
/// size.
pub struct HttpImageProvider {
    id: String,
    model: String,
    size: String,
    http: HttpClient,
}

impl HttpImageProvider {
    pub fn new(cfg: &HttpConfig, model: &str, size: &str) -> Result<Self, LlmError> {
        Ok(Self {
            id: format!("images:{}:{model}", cfg.endpoint),
            model: model.to_string(),
            size: size.to_string(),
            http: HttpClient::new(cfg)?,
        })
    }
}

impl ImageProvider for HttpImageProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, description: &str) -> Result<GeneratedImage, LlmError> {
        let body = self.http.post(&json!({
            "model": self.model,
            "prompt": description,
            "n": 1,
            "size": self.size,
            "response_format": "b64_json",
        }))?;
        let b64 = body["data"][0]["b64_json"]
            .as_str()
            .ok_or_else(|| LlmError::Retryable("image response has no b64_json".into()))?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(b64)
            .map_err(|e| LlmError::Fatal(format!("image payload: {e}")))?;
        Ok(GeneratedImage {
            bytes,
            media_type: "image/png".into(),
            extension: "png".into(),
        })
    }
}

/// Where generated images go; returns the URL to reference them by.
pub trait AssetSink: Send + Sync {
    fn store(&self, slot_id: &str, image: &GeneratedImage) -> Result<String, String>;
}

/// Writes `<root>/assets/<slot_id>.<ext>` and returns the relative URL
/// `assets/<slot_id>.<ext>?v=<hash>`, so a prototype stored in `root` finds it.
#[derive(Debug, Clone)]
pub struct LocalAssetSink {
    pub root: PathBuf,
}

impl LocalAssetSink {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
}

fn file_stem(slot_id: &str) -> String {
    slot_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

impl AssetSink for LocalAssetSink {
    fn store(&self, slot_id: &str, image: &GeneratedImage) -> Result<String, String> {
        let name = format!("{}.{}", file_stem(slot_id), image.extension);
        let path = self.root.join("assets").join(&name);
        write_atomic(&path, &image.bytes).map_err(|e| e.to_string())?;
        Ok(format!("assets/{name}?v={}", short_hash(&image.bytes)))
    }
}

/// Embeds images as `data:` URLs; nothing touches the filesystem.
#[derive(Debug, Clone, Copy, Default)]
pub struct DataUrlSink;

impl AssetSink for DataUrlSink {
    fn store(&self, _slot_id: &str, image: &GeneratedImage) -> Result<String, String> {
        Ok(format!(
            "data:{};base64,{}",
            image.media_type,
            base64::engine::general_purpose::STANDARD.encode(&image.bytes)
        ))
    }
}

const PLACEHOLDER_SVG: &str = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"64\" height=\"64\"><rect width=\"64\" height=\"64\" fill=\"#ccc\"/></svg>";

fn placeholder(slot_id: &str) -> AssetRef {
    AssetRef {
        slot_id: slot_id.to_string(),
        url: format!(
            "data:image/svg+xml;base64,{}",
            base64::engine::general_purpose::STANDARD.encode(PLACEHOLDER_SVG)
        ),
        media_type: "image/svg+xml".into(),
        failed: true,
    }
}

const IMAGE_WORKERS: usize = 4;

/// One asset per slot, in slot order. A slot whose generation or storage
/// fails gets a flagged placeholder.
pub fn generate_images(
    provider: &dyn ImageProvider,
    sink: &dyn AssetSink,
    slots: &[ImageSlot],
) -> (Vec<AssetRef>, Vec<String>) {
    let one = |slot: &ImageSlot| -> Result<AssetRef, String> {
        let image = provider.generate(&slot.description).map_err(|e| e.to_string())?;
        let url = sink.store(&slot.slot_id, &image)?;
        Ok(AssetRef {
            slot_id: slot.slot_id.clone(),
            url,
            media_type: image.media_type,
            failed: false,
        })
    };
    let mut results = Vec::with_capacity(slots.len());
    for chunk in slots.chunks(IMAGE_WORKERS) {
        let done: Vec<_> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk.iter().map(|s| scope.spawn(|| one(s))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("image worker panicked"))
                .collect()
        });
        results.extend(done);
    }
    let mut warnings = Vec::new();
    let assets = slots
        .iter()
        .zip(results)
        .map(|(slot, r)| {
            r.unwrap_or_else(|e| {
                warnings.push(format!("image for {} failed: {e}; using a placeholder", slot.slot_id));
                placeholder(&slot.slot_id)
            })
        })
        .collect();
    (assets, warnings)
}

/// Sets the `src` of each img whose id has an asset. Every other byte of the
/// document is preserved.
pub fn substitute_urls(html: &HtmlDocument, assets: &[AssetRef]) -> (HtmlDocument, Vec<String>) {
    let urls: BTreeMap<&str, &str> = assets.iter().map(|a| (a.slot_id.as_str(), a.url.as_str())).collect();
    let text = html.text();
    let mut warnings = Vec::new();
    let mut edits = Vec::new();
    let mut matched = BTreeSet::new();
    for tag in img_tags(text) {
        if tag.kind == TagKind::Close {
            continue;
        }
        let Some(id) = id_of(&tag) else { continue };
        let Some(url) = urls.get(id) else {
            warnings.push(format!("img {id} has no generated asset"));
            continue;
        };
        matched.insert(id.to_string());
        let escaped = escape_attr(url);
        match tag.attr("src").and_then(|a| a.value_span.clone()) {
            Some(span) => edits.push((span, escaped)),
            None => {
                let at = tag.span.start + "<img".len();
                edits.push((at..at, format!(" src=\"{escaped}\"")));
            }
        }
    }
    for a in assets {
        if !matched.contains(&a.slot_id) {
            warnings.push(format!("asset for unknown img id {:?} ignored", a.slot_id));
        }
    }
    if edits.is_empty() {
        return (html.clone(), warnings);
    }
    let out = splice(text, edits);
    let doc = HtmlDocument::new(out).expect("attribute rewrite keeps the document valid");
    (doc, warnings)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentOutcome {
    pub prototype: Prototype,
    pub slots: Vec<ImageSlot>,
    pub assets: Vec<AssetRef>,
}

/// Enrichment, image descriptions, image generation, substitution. When the
/// enriched page has no images only the enrichment call is made.
pub fn content_pipeline(
    session: &Session,
    images: &dyn ImageProvider,
    sink: &dyn AssetSink,
    prototype: &Prototype,
) -> Result<ContentOutcome, GenerationError> {
    let enriched = enrich_content(session, prototype)?;
    let (slots, t) = extract_image_specs(session, &enriched.html)?;
    let mut trace = enriched.trace.clone();
    trace.append(t);
    let (assets, warnings) = generate_images(images, sink, &slots);
    for w in warnings {
        trace.warn(w);
    }
    let (html, warnings) = substitute_urls(&enriched.html, &assets);
    for w in warnings {
        trace.warn(w);
    }
    Ok(ContentOutcome {
        prototype: with_content_stage(prototype, html, trace),
        slots,
        assets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(s: &str) -> HtmlDocument {
        HtmlDocument::new(s).unwrap()
    }

    #[test]
    fn repair_assigns_missing_and_duplicate_ids() {
        let (out, w) = repair_img_ids(r#"<img src="a"><img id="img-1"><img id="x"><img id="x">"#);
        assert_eq!(out, r#"<img id="img-2" src="a"><img id="img-1"><img id="x"><img id="img-4">"#);
        assert_eq!(w.len(), 2);
        let (same, w) = repair_img_ids("<p>none</p>");
        assert_eq!((same.as_str(), w.len()), ("<p>none</p>", 0));
    }

    #[test]
    fn substitution_touches_only_src() {
        let html = doc(r#"<html><body><img id="img-1" src="old.png" alt="a"><img id='img-2'></body></html>"#);
        let assets = vec![AssetRef {
            slot_id: "img-1".into(),
            url: "u1?a=1&b=2".into(),
            media_type: "image/png".into(),
            failed: false,
        }];
        let (out, w) = substitute_urls(&html, &assets);
        assert_eq!(
            out.text(),
            r#"<html><body><img id="img-1" src="u1?a=1&amp;b=2" alt="a"><img id='img-2'></body></html>"#
        );
        assert_eq!(w, vec!["img img-2 has no generated asset"]);
        let (same, _) = substitute_urls(&html, &[]);
        assert_eq!(same.text(), html.text());
    }

    #[test]
    fn asset_for_unknown_id_is_ignored() {
        let html = doc(r#"<div><img id="a"></div>"#);
        let asset = AssetRef {
            slot_id: "zzz".into(),
            url: "u".into(),
            media_type: "image/png".into(),
            failed: false,
        };
        let (out, w) = substitute_urls(&html, &[asset]);
        assert_eq!(out.text(), html.text());
        assert!(w.iter().any(|m| m.contains("zzz")));
    }

    #[test]
    fn stub_is_deterministic() {
        let a = StubImageProvider.generate("a red bike").unwrap();
        let b = StubImageProvider.generate("a red bike").unwrap();
        let c = StubImageProvider.generate("a blue bike").unwrap();
        assert_eq!(a, b);
        assert_ne!(a.bytes, c.bytes);
    }

    #[test]
    fn local_sink_urls_are_relative_and_stable() {
        let dir = tempfile::tempdir().unwrap();
        let sink = LocalAssetSink::new(dir.path());
        let img = StubImageProvider.generate("x").unwrap();
        let u1 = sink.store("img-1", &img).unwrap();
        let u2 = sink.store("img-1", &img).unwrap();
        assert_eq!(u1, u2);
        assert!(u1.starts_with("assets/img-1.svg?v="));
        assert!(dir.path().join("assets/img-1.svg").exists());
    }

    struct FailOn(&'static str);
    impl ImageProvider for FailOn {
        fn id(&self) -> &str {
            "fail"
        }
        fn generate(&self, d: &str) -> Result<GeneratedImage, LlmError> {
            if d == self.0 {
                Err(LlmError::Fatal("boom".into()))
            } else {
                StubImageProvider.generate(d)
            }
        }
    }

    #[test]
    fn failed_slot_gets_placeholder() {
        let slots: Vec<ImageSlot> = ["a", "b", "c"]
            .iter()
            .map(|s| ImageSlot {
                slot_id: s.to_string(),
                description: s.to_string(),
                fallback: false,
            })
            .collect();
        let (assets, warnings) = generate_images(&FailOn("b"), &DataUrlSink, &slots);
        assert_eq!(assets.len(), 3);
        assert_eq!(assets.iter().filter(|a| a.failed).count(), 1);
        assert!(assets[1].failed);
        assert_eq!(warnings.len(), 1);
        assert!(generate_images(&StubImageProvider, &DataUrlSink, &[]).0.is_empty());
    }

    #[test]
    fn fallback_uses_alt_then_nearby_text() {
        let html = r#"<div><img id="a" alt="Red bike"><img id="b"><span>Summer sale</span></div>"#;
        let tags = img_tags(html);
        assert!(fallback_description(html, &tags[0]).contains("Red bike"));
        assert!(fallback_description(html, &tags[1]).contains("Summer sale"));
    }
}
