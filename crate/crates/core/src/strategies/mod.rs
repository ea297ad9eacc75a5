//! The five GUI generation strategies and the prototype model they share.
//!
//! Every strategy is a sequence of [`Session`] stages; the trace of a returned
//! [`Prototype`] holds every LLM call that contributed to it, in causal order.

mod features;

pub use features::{Feature, FeatureCollection};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::htmlio::{extract_html, HtmlDocument};
use crate::llm::{ChatMessage, Part};
use crate::repository::GuiScreen;
use crate::session::{GenerationError, GenerationTrace, Session, TraceRecord};
use crate::templates;

/// A natural-language GUI requirement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawNlr")]
pub struct Nlr {
    pub id: String,
    pub text: String,
}

#[derive(Deserialize)]
struct RawNlr {
    id: String,
    text: String,
}

impl TryFrom<RawNlr> for Nlr {
    type Error = GenerationError;
    fn try_from(r: RawNlr) -> Result<Self, Self::Error> {
        Nlr::new(r.id, r.text)
    }
}

impl Nlr {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, GenerationError> {
        let (id, text) = (id.into(), text.into());
        if text.trim().is_empty() {
            return Err(GenerationError::Invalid(format!("requirement {id:?} has empty text")));
        }
        if id.trim().is_empty() {
            return Err(GenerationError::Invalid("requirement id is empty".into()));
        }
        Ok(Self { id, text })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Zs,
    ZsCot,
    Pdgg,
    PdggCombined,
    RaggDirect,
    RaggExtract,
    Scgg,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Zs,
        Strategy::ZsCot,
        Strategy::Pdgg,
        Strategy::PdggCombined,
        Strategy::RaggDirect,
        Strategy::RaggExtract,
        Strategy::Scgg,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Strategy::Zs => "zs",
            Strategy::ZsCot => "zs-cot",
            Strategy::Pdgg => "pdgg",
            Strategy::PdggCombined => "pdgg-combined",
            Strategy::RaggDirect => "ragg-direct",
            Strategy::RaggExtract => "ragg-extract",
            Strategy::Scgg => "scgg",
        }
    }

    pub fn needs_examples(self) -> bool {
        matches!(self, Strategy::RaggDirect | Strategy::RaggExtract)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.label() == s)
            .ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub html: HtmlDocument,
    pub strategy: Strategy,
    /// Refinement index; non-zero only for self-critique runs.
    pub iteration: u32,
    pub trace: GenerationTrace,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub layout_text: String,
    pub design_notes: String,
}

impl DesignSpec {
    /// Splits the `LAYOUT:` and `DESIGN NOTES:` sections. Without headings the
    /// whole text is taken as the layout.
    pub fn parse(raw: &str) -> Result<Self, String> {
        let upper = raw.to_uppercase();
        let layout_at = upper.find("LAYOUT:");
        let notes_at = upper.find("DESIGN NOTES:");
        let (layout, notes) = match (layout_at, notes_at) {
            (Some(l), Some(n)) if l < n => (&raw[l + 7..n], &raw[n + 13..]),
            (Some(l), Some(n)) => (&raw[l + 7..], &raw[n + 13..l]),
            (Some(l), None) => (&raw[l + 7..], ""),
            (None, Some(n)) => (&raw[..n], &raw[n + 13..]),
            (None, None) => (raw, ""),
        };
        let layout_text = layout.trim().to_string();
        if layout_text.is_empty() {
            return Err("layout section is empty".into());
        }
        Ok(Self {
            layout_text,
            design_notes: notes.trim().to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Critique {
    pub text: String,
    pub loop_index: u32,
    pub records: Vec<TraceRecord>,
    pub warnings: Vec<String>,
}

/// The prototypes of a self-critique run; `error` is set when the loop stopped
/// early, with every prototype produced before the failure kept.
#[derive(Debug)]
pub struct ScggOutcome {
    pub prototypes: Vec<Prototype>,
    pub error: Option<GenerationError>,
}

fn text_prompt(prompt: String) -> Vec<ChatMessage> {
    vec![ChatMessage::system(templates::system()), ChatMessage::user(prompt)]
}

fn image_prompt(prompt: String, screens: &[GuiScreen]) -> Result<Vec<ChatMessage>, GenerationError> {
    let mut parts = vec![Part::text(prompt)];
    for (i, screen) in screens.iter().enumerate() {
        parts.push(Part::text(format!("GUI #{}", i + 1)));
        parts.push(Part::Image(screen.load_screenshot()?));
    }
    Ok(vec![
        ChatMessage::system(templates::system()),
        ChatMessage::user_parts(parts),
    ])
}

fn parse_html(raw: &str) -> Result<HtmlDocument, String> {
    extract_html(raw).map(|(doc, _)| doc).map_err(|e| e.to_string())
}

fn non_empty(raw: &str) -> Result<String, String> {
    let t = raw.trim();
    if t.is_empty() {
        Err("the answer was empty".into())
    } else {
        Ok(t.to_string())
    }
}

fn single_shot(
    session: &Session,
    stage: &str,
    strategy: Strategy,
    messages: Vec<ChatMessage>,
) -> Result<Prototype, GenerationError> {
    let staged = session.ask(stage, messages, parse_html)?;
    let mut trace = GenerationTrace::new();
    trace.extend(staged.records);
    Ok(Prototype {
        html: staged.value,
        strategy,
        iteration: 0,
        trace,
    })
}

pub fn zs_instruct(session: &Session, nlr: &Nlr) -> Result<Prototype, GenerationError> {
    let prompt = templates::ZS.fill(&[("NLR", &nlr.text)]);
    single_shot(session, "zs", Strategy::Zs, text_prompt(prompt))
}

pub fn zs_cot(session: &Session, nlr: &Nlr) -> Result<Prototype, GenerationError> {
    let prompt = templates::ZS_COT.fill(&[("NLR", &nlr.text)]);
    single_shot(session, "zs-cot", Strategy::ZsCot, text_prompt(prompt))
}

pub fn pdgg_combined(session: &Session, nlr: &Nlr) -> Result<Prototype, GenerationError> {
    let steps = templates::pdgg_steps_text();
    let prompt = templates::PDGG_COMBINED.fill(&[("NLR", &nlr.text), ("STEPS", &steps)]);
    single_shot(session, "pdgg-combined", Strategy::PdggCombined, text_prompt(prompt))
}

/// Four chained stages: features, implementation ideas, layout and design,
/// HTML. Each prompt carries the requirement and every earlier answer.
pub fn pdgg_sequential(session: &Session, nlr: &Nlr) -> Result<Prototype, GenerationError> {
    let step = |i: usize| templates::PDGG_STEPS[i].text.trim_end();
    let mut trace = GenerationTrace::new();

    let prompt = templates::PDGG_FEATURES.fill(&[("STEP", step(0)), ("NLR", &nlr.text)]);
    let features = session.ask("pdgg.features", text_prompt(prompt), |raw| {
        FeatureCollection::parse_list(raw).map(|_| ())
    })?;
    trace.extend(features.records);

    let prompt = templates::PDGG_IDEAS.fill(&[
        ("STEP", step(1)),
        ("NLR", &nlr.text),
        ("FEATURES", &features.raw),
    ]);
    let ideas = session.ask("pdgg.ideas", text_prompt(prompt), non_empty)?;
    trace.extend(ideas.records);

    let prompt = templates::PDGG_DESIGN.fill(&[
        ("STEP", step(2)),
        ("NLR", &nlr.text),
        ("FEATURES", &features.raw),
        ("IDEAS", &ideas.raw),
    ]);
    let design = session.ask("pdgg.design", text_prompt(prompt), DesignSpec::parse)?;
    trace.extend(design.records);

    let prompt = templates::PDGG_HTML.fill(&[
        ("STEP", step(3)),
        ("NLR", &nlr.text),
        ("FEATURES", &features.raw),
        ("IDEAS", &ideas.raw),
        ("DESIGN", &design.raw),
    ]);
    let html = session.ask("pdgg.html", text_prompt(prompt), parse_html)?;
    trace.extend(html.records);

    Ok(Prototype {
        html: html.value,
        strategy: Strategy::Pdgg,
        iteration: 0,
        trace,
    })
}

fn take_examples(screens: &[GuiScreen], k: usize) -> Result<&[GuiScreen], GenerationError> {
    if k == 0 {
        return Err(GenerationError::Invalid("k must be at least 1".into()));
    }
    if screens.is_empty() {
        return Err(GenerationError::Fallback);
    }
    Ok(&screens[..screens.len().min(k)])
}

/// Puts up to `k` example screenshots into the context as inspiration.
pub fn ragg_direct(
    session: &Session,
    nlr: &Nlr,
    screens: &[GuiScreen],
    k: usize,
) -> Result<Prototype, GenerationError> {
    let screens = take_examples(screens, k)?;
    let count = screens.len().to_string();
    let prompt = templates::RAGG_DIRECT.fill(&[("NLR", &nlr.text), ("COUNT", &count)]);
    single_shot(session, "ragg-direct", Strategy::RaggDirect, image_prompt(prompt, screens)?)
}

/// Feature collection of one example GUI. An answer that stays unparseable
/// after the re-ask yields an empty collection and a warning.
pub fn extract_gui_features(
    session: &Session,
    screen: &GuiScreen,
    stage: &str,
) -> Result<(FeatureCollection, GenerationTrace), GenerationError> {
    let prompt = templates::RAGG_FEATURES.fill(&[("SCREEN_ID", &screen.screen_id)]);
    let messages = image_prompt(prompt, std::slice::from_ref(screen))?;
    let (value, records, _) = session.ask_lenient(stage, messages, FeatureCollection::parse_list)?;
    let mut trace = GenerationTrace::new();
    trace.extend(records);
    let collection = value.unwrap_or_else(|| {
        trace.warn(format!(
            "{stage}: no features could be parsed for screen {}",
            screen.screen_id
        ));
        FeatureCollection::default()
    });
    Ok((collection, trace))
}

/// Merges semantically similar features in one call. The answer must conserve
/// the total frequency; otherwise the exact-name merge is used.
pub fn aggregate_features(
    session: &Session,
    nlr: &Nlr,
    collections: &[FeatureCollection],
) -> Result<(FeatureCollection, GenerationTrace), GenerationError> {
    if collections.is_empty() {
        return Err(GenerationError::Invalid("no feature collections to aggregate".into()));
    }
    let total: u32 = collections.iter().map(FeatureCollection::total_frequency).sum();
    let listing = collections
        .iter()
        .enumerate()
        .map(|(i, c)| format!("GUI #{}:\n{}", i + 1, c.render_list()))
        .collect::<Vec<_>>()
        .join("\n\n");
    let prompt = templates::RAGG_FEATURE_AGGREGATE.fill(&[
        ("COUNT", &collections.len().to_string()),
        ("NLR", &nlr.text),
        ("FEATURES", &listing),
        ("TOTAL", &total.to_string()),
    ]);
    let (value, records, _) = session.ask_lenient("ragg.features.aggregate", text_prompt(prompt), |raw| {
        FeatureCollection::parse_aggregate(raw, total)
    })?;
    let mut trace = GenerationTrace::new();
    trace.extend(records);
    let merged = value.unwrap_or_else(|| {
        trace.warn("ragg.features.aggregate: unusable answer, merged features by exact name");
        FeatureCollection::merge_exact(collections)
    });
    Ok((merged, trace))
}

/// Per-screen feature extraction, feature aggregation, per-screen design
/// extraction, design aggregation, then HTML: `2k + 3` calls.
pub fn ragg_extract(
    session: &Session,
    nlr: &Nlr,
    screens: &[GuiScreen],
    k: usize,
) -> Result<Prototype, GenerationError> {
    let screens = take_examples(screens, k)?;
    let mut trace = GenerationTrace::new();

    let per_screen = fan_out(screens, |i, screen| {
        extract_gui_features(session, screen, &format!("ragg.features.{}", i + 1))
    })?;
    let mut collections = Vec::with_capacity(per_screen.len());
    for (c, t) in per_screen {
        trace.append(t);
        collections.push(c);
    }
    let (features, t) = aggregate_features(session, nlr, &collections)?;
    trace.append(t);

    let designs = fan_out(screens, |i, screen| {
        let stage = format!("ragg.design.{}", i + 1);
        let prompt = templates::RAGG_DESIGN.fill(&[("SCREEN_ID", &screen.screen_id)]);
        let messages = image_prompt(prompt, std::slice::from_ref(screen))?;
        let (value, records, _) = session.ask_lenient(&stage, messages, non_empty)?;
        let mut t = GenerationTrace::new();
        t.extend(records);
        let text = value.unwrap_or_else(|| {
            t.warn(format!("{stage}: empty design description for {}", screen.screen_id));
            String::new()
        });
        Ok((text, t))
    })?;
    let mut design_texts = Vec::with_capacity(designs.len());
    for (d, t) in designs {
        trace.append(t);
        design_texts.push(d);
    }
    let listing = design_texts
        .iter()
        .enumerate()
        .map(|(i, d)| format!("GUI #{}:\n{}", i + 1, d))
        .collect::<Vec<_>>()
        .join("\n\n");
    let prompt = templates::RAGG_DESIGN_AGGREGATE.fill(&[
        ("COUNT", &screens.len().to_string()),
        ("NLR", &nlr.text),
        ("DESIGN", &listing),
    ]);
    let (value, records, _) = session.ask_lenient("ragg.design.aggregate", text_prompt(prompt), non_empty)?;
    trace.extend(records);
    let design = value.unwrap_or_else(|| {
        trace.warn("ragg.design.aggregate: empty answer, using the per-screen descriptions");
        listing.clone()
    });

    let feature_text = features.render_ranked();
    let prompt = templates::RAGG_HTML.fill(&[
        ("NLR", &nlr.text),
        ("FEATURES", &feature_text),
        ("DESIGN", &design),
    ]);
    let html = session.ask("ragg.html", text_prompt(prompt), parse_html)?;
    trace.extend(html.records);

    Ok(Prototype {
        html: html.value,
        strategy: Strategy::RaggExtract,
        iteration: 0,
        trace,
    })
}

/// Runs `f` for every screen on scoped threads and returns results in screen
/// order; the first error (by screen order) wins.
fn fan_out<T, F>(screens: &[GuiScreen], f: F) -> Result<Vec<T>, GenerationError>
where
    T: Send,
    F: Fn(usize, &GuiScreen) -> Result<T, GenerationError> + Sync,
{
    if screens.len() == 1 {
        return Ok(vec![f(0, &screens[0])?]);
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = screens
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let f = &f;
                scope.spawn(move || f(i, s))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("extraction worker panicked"))
            .collect()
    })
}

/// Textual feedback on prototype `P_i`.
pub fn scgg_critique(
    session: &Session,
    nlr: &Nlr,
    prototype: &Prototype,
    loop_index: u32,
) -> Result<Critique, GenerationError> {
    let prompt = templates::SCGG_CRITIQUE.fill(&[("NLR", &nlr.text), ("HTML", prototype.html.text())]);
    let stage = format!("scgg.critique.{loop_index}");
    let staged = session.ask(&stage, text_prompt(prompt), non_empty)?;
    let mut warnings = Vec::new();
    if staged.value.contains("```") {
        let w = format!("{stage}: critique contains a code block");
        log::warn!("{w}");
        warnings.push(w);
    }
    Ok(Critique {
        text: staged.value,
        loop_index,
        records: staged.records,
        warnings,
    })
}

/// `P_{i+1}` from `P_i` and its critique. The new trace extends the prior one
/// with the critique calls and the refinement call.
pub fn scgg_refine(
    session: &Session,
    nlr: &Nlr,
    prototype: &Prototype,
    critique: &Critique,
) -> Result<Prototype, GenerationError> {
    if critique.text.trim().is_empty() {
        return Err(GenerationError::Invalid("critique is empty".into()));
    }
    let prompt = templates::SCGG_REFINE.fill(&[
        ("NLR", &nlr.text),
        ("HTML", prototype.html.text()),
        ("CRITIQUE", &critique.text),
    ]);
    let stage = format!("scgg.refine.{}", critique.loop_index);
    let staged = session.ask(&stage, text_prompt(prompt), parse_html)?;
    let mut trace = prototype.trace.clone();
    trace.extend(critique.records.iter().cloned());
    trace.warnings.extend(critique.warnings.iter().cloned());
    trace.extend(staged.records);
    Ok(Prototype {
        html: staged.value,
        strategy: Strategy::Scgg,
        iteration: prototype.iteration + 1,
        trace,
    })
}

/// `P_0` from the zero-shot instruction, then `k` critique/refine rounds.
pub fn scgg_loop(session: &Session, nlr: &Nlr, k: u32) -> ScggOutcome {
    let mut prototypes = Vec::with_capacity(k as usize + 1);
    if k == 0 {
        return ScggOutcome {
            prototypes,
            error: Some(GenerationError::Invalid("loop count must be at least 1".into())),
        };
    }
    match zs_instruct(session, nlr) {
        Ok(p0) => prototypes.push(Prototype {
            strategy: Strategy::Scgg,
            ..p0
        }),
        Err(e) => {
            return ScggOutcome {
                prototypes,
                error: Some(e),
            }
        }
    }
    for i in 1..=k {
        let current = prototypes.last().expect("P_0 present");
        let next = scgg_critique(session, nlr, current, i)
            .and_then(|c| scgg_refine(session, nlr, current, &c));
        match next {
            Ok(p) => prototypes.push(p),
            Err(e) => {
                return ScggOutcome {
                    prototypes,
                    error: Some(e),
                }
            }
        }
    }
    ScggOutcome {
        prototypes,
        error: None,
    }
}

/// Runs a strategy that yields a single prototype. Self-critique runs return
/// their final prototype; use [`scgg_loop`] for every iteration.
pub fn run_single(
    session: &Session,
    strategy: Strategy,
    nlr: &Nlr,
    screens: &[GuiScreen],
    k: usize,
) -> Result<Prototype, GenerationError> {
    match strategy {
        Strategy::Zs => zs_instruct(session, nlr),
        Strategy::ZsCot => zs_cot(session, nlr),
        Strategy::Pdgg => pdgg_sequential(session, nlr),
        Strategy::PdggCombined => pdgg_combined(session, nlr),
        Strategy::RaggDirect => ragg_direct(session, nlr, screens, k),
        Strategy::RaggExtract => ragg_extract(session, nlr, screens, k),
        Strategy::Scgg => {
            let out = scgg_loop(session, nlr, k as u32);
            match out.error {
                Some(e) => Err(e),
                None => Ok(out.prototypes.into_iter().last().expect("non-empty")),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_labels_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.label().parse::<Strategy>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{}\"", s.label()));
        }
        assert!("ragg".parse::<Strategy>().is_err());
    }

    #[test]
    fn nlr_rejects_blank_text() {
        assert!(Nlr::new("a", "  \n").is_err());
        assert!(serde_json::from_str::<Nlr>(r#"{"id":"a","text":" "}"#).is_err());
        assert!(serde_json::from_str::<Nlr>(r#"{"id":"a","text":"shop"}"#).is_ok());
    }

    #[test]
    fn design_sections() {
        let d = DesignSpec::parse("LAYOUT:\nheader, list\n\nDESIGN NOTES:\nblue").unwrap();
        assert_eq!(d.layout_text, "header, list");
        assert_eq!(d.design_notes, "blue");
        let d = DesignSpec::parse("just a layout").unwrap();
        assert_eq!(d.layout_text, "just a layout");
        assert!(DesignSpec::parse("LAYOUT:\n\nDESIGN NOTES: x").is_err());
    }
}
