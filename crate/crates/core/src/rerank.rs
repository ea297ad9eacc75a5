//! LLM re-ranking of retrieved screens: a critical binary relevance filter,
//! multi-sample 1-10 scores for the survivors, and whole-list re-ranking.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{ChatMessage, Part};
use crate::repository::{GuiScreen, Repository};
use crate::retrieval::{retrieve_top_n, EmbeddingProvider, RankedList, RetrievalError, RetrievalIndex};
use crate::scalar::{mean_and_population_std, Scalar};
use crate::session::{GenerationError, GenerationTrace, Session, Staged, TraceRecord};
use crate::templates;

pub const DEFAULT_SAMPLES: u32 = 3;
pub const FILTER_STAGE: &str = "rerank.filter";
pub const FINE_STAGE: &str = "rerank.fine";
pub const FULL_STAGE: &str = "rerank.full";

#[derive(Debug, Error)]
pub enum RerankError {
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevanceJudgment {
    pub screen_id: String,
    pub relevant: bool,
    pub rationale: String,
    pub raw_response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FineScore<T> {
    pub screen_id: String,
    pub samples: Vec<u8>,
    pub mean: T,
    pub std: T,
    pub sample_count: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl<T: Scalar> FineScore<T> {
    /// Mean and population standard deviation of `samples`.
    pub fn from_samples(screen_id: impl Into<String>, samples: Vec<u8>) -> Option<Self> {
        let values: Vec<T> = samples.iter().map(|&s| T::from_count(s as usize)).collect();
        let (mean, std) = mean_and_population_std(&values)?;
        Some(Self {
            screen_id: screen_id.into(),
            sample_count: samples.len() as u32,
            samples,
            mean,
            std,
            warnings: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RerankedItem<T> {
    pub screen_id: String,
    pub fine_mean: T,
    pub fine_std: T,
    pub retrieval_score: T,
}

/// What happened to one retrieved candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CandidateProvenance<T> {
    pub screen_id: String,
    pub retrieval_rank: usize,
    pub retrieval_score: T,
    pub relevant: bool,
    pub rationale: String,
    pub fine: Option<FineScore<T>>,
    pub stages: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Filter survivors ordered by fine mean, then retrieval score, then id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RerankedList<T> {
    pub query: String,
    pub items: Vec<RerankedItem<T>>,
    #[serde(default)]
    pub provenance: Vec<CandidateProvenance<T>>,
}

impl<T: Scalar> RerankedList<T> {
    pub fn screen_ids(&self) -> Vec<&str> {
        self.items.iter().map(|i| i.screen_id.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RerankOutcome<T> {
    pub retrieved: RankedList<T>,
    pub reranked: RerankedList<T>,
    pub trace: GenerationTrace,
}

fn screen_prompt(prompt: String, screen: &GuiScreen) -> Result<Vec<ChatMessage>, GenerationError> {
    Ok(vec![
        ChatMessage::system(templates::system()),
        ChatMessage::user_parts(vec![Part::text(prompt), Part::Image(screen.load_screenshot()?)]),
    ])
}

fn first_line(raw: &str) -> Option<&str> {
    raw.lines().map(str::trim).find(|l| !l.is_empty())
}

/// `RELEVANT` / `NOT_RELEVANT` (also `NOT RELEVANT`, `NOT-RELEVANT`) at the
/// start of the first line; the rest of the answer is the rationale.
pub fn parse_verdict(raw: &str) -> Result<(bool, String), String> {
    let line = first_line(raw).ok_or("the answer was empty")?;
    let cleaned = line.trim_start_matches(['*', '#', '"', '\'', '`', ' ']);
    let upper = cleaned.to_uppercase();
    let (relevant, token_len) = ["NOT_RELEVANT", "NOT RELEVANT", "NOT-RELEVANT"]
        .iter()
        .find(|t| upper.starts_with(*t))
        .map(|t| (false, t.len()))
        .or_else(|| upper.starts_with("RELEVANT").then_some((true, "RELEVANT".len())))
        .ok_or_else(|| format!("first line {line:?} is not RELEVANT or NOT_RELEVANT"))?;
    let tail = &cleaned[token_len..];
    if tail.chars().next().is_some_and(|c| c.is_alphanumeric() || c == '_') {
        // "RELEVANTLY" and similar words are not verdicts.
        return Err(format!("first line {line:?} is not RELEVANT or NOT_RELEVANT"));
    }
    let rest_of_line = tail
        .trim_start_matches(|c: char| c == '*' || c == '`' || c == '"' || c.is_whitespace())
        .trim_start_matches(['-', '–', '—', ':', '.', ','])
        .trim();
    let after: Vec<&str> = raw
        .lines()
        .skip_while(|l| l.trim().is_empty())
        .skip(1)
        .collect();
    let rationale = std::iter::once(rest_of_line)
        .chain(after.iter().map(|l| l.trim()))
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join("\n");
    Ok((relevant, rationale))
}

/// The first integer on the first line, e.g. `7`, `Score: 7`, `7/10`.
pub fn parse_score(raw: &str) -> Result<i64, String> {
    let line = first_line(raw).ok_or("the answer was empty")?;
    let start = line
        .find(|c: char| c.is_ascii_digit())
        .ok_or_else(|| format!("no score in {line:?}"))?;
    let digits: String = line[start..].chars().take_while(char::is_ascii_digit).collect();
    let negative = line[..start].ends_with('-');
    let v: i64 = digits.parse().map_err(|_| format!("score {digits:?} is too large"))?;
    Ok(if negative { -v } else { v })
}

/// Critical binary relevance judgment for one screen.
pub fn binary_filter(
    session: &Session,
    nlr: &str,
    screen: &GuiScreen,
) -> Result<Staged<RelevanceJudgment>, GenerationError> {
    let prompt = templates::RERANK_BINARY.fill(&[("SCREEN_ID", &screen.screen_id), ("NLR", nlr)]);
    let stage = format!("{FILTER_STAGE}.{}", screen.screen_id);
    let staged = session.ask(&stage, screen_prompt(prompt, screen)?, parse_verdict)?;
    let (relevant, rationale) = staged.value;
    Ok(Staged {
        value: RelevanceJudgment {
            screen_id: screen.screen_id.clone(),
            relevant,
            rationale,
            raw_response: staged.raw.clone(),
        },
        records: staged.records,
        raw: staged.raw,
    })
}

/// `sample_count` sampled 1-10 scores in one request. Each unparseable sample
/// is re-asked once; out-of-range scores are clamped with a warning.
pub fn fine_score<T: Scalar>(
    session: &Session,
    nlr: &str,
    screen: &GuiScreen,
    sample_count: u32,
) -> Result<(FineScore<T>, Vec<TraceRecord>), GenerationError> {
    if sample_count == 0 {
        return Err(GenerationError::Invalid("sample count must be at least 1".into()));
    }
    let prompt = templates::RERANK_FINE.fill(&[("SCREEN_ID", &screen.screen_id), ("NLR", nlr)]);
    let stage = format!("{FINE_STAGE}.{}", screen.screen_id);
    let messages = screen_prompt(prompt, screen)?;
    let first = session.call(&stage, messages.clone(), sample_count, false)?;
    let mut records = vec![first];
    let mut samples = Vec::with_capacity(sample_count as usize);
    let mut warnings = Vec::new();
    let answers = records[0].response.samples.clone();
    for (i, answer) in answers.iter().enumerate() {
        let score = match parse_score(answer) {
            Ok(s) => s,
            Err(problem) => {
                log::warn!("{stage}: sample {}: {problem}; asking again", i + 1);
                let mut follow = messages.clone();
                follow.push(ChatMessage::assistant(answer.clone()));
                follow.push(ChatMessage::user(templates::reask(&problem)));
                let again = session.call(&stage, follow, 1, true)?;
                let parsed = parse_score(again.response.first());
                records.push(again);
                parsed.map_err(|message| GenerationError::Parse {
                    stage: stage.clone(),
                    message,
                })?
            }
        };
        let clamped = score.clamp(1, 10);
        if clamped != score {
            let w = format!("{stage}: score {score} clamped to {clamped}");
            log::warn!("{w}");
            warnings.push(w);
        }
        samples.push(clamped as u8);
    }
    let mut fine = FineScore::from_samples(screen.screen_id.clone(), samples)
        .ok_or_else(|| GenerationError::Parse {
            stage: stage.clone(),
            message: "no samples returned".into(),
        })?;
    fine.warnings = warnings;
    Ok((fine, records))
}

fn rerank_order<T: Scalar>(a: &RerankedItem<T>, b: &RerankedItem<T>) -> Ordering {
    b.fine_mean
        .partial_cmp(&a.fine_mean)
        .unwrap_or(Ordering::Equal)
        .then_with(|| {
            b.retrieval_score
                .partial_cmp(&a.retrieval_score)
                .unwrap_or(Ordering::Equal)
        })
        .then_with(|| a.screen_id.cmp(&b.screen_id))
}

/// Sorts survivors by fine mean, then retrieval score (both descending), then
/// ascending id.
pub fn rerank_filtered<T: Scalar>(
    query: &str,
    survivors: &[(String, FineScore<T>, T)],
) -> RerankedList<T> {
    let mut items: Vec<RerankedItem<T>> = survivors
        .iter()
        .map(|(id, fine, score)| RerankedItem {
            screen_id: id.clone(),
            fine_mean: fine.mean,
            fine_std: fine.std,
            retrieval_score: *score,
        })
        .collect();
    items.sort_by(rerank_order);
    RerankedList {
        query: query.to_string(),
        items,
        provenance: Vec::new(),
    }
}

/// Runs `f` over the items on scoped threads, returning results in input
/// order. The provider's own in-flight bound limits actual concurrency.
fn par_map<I: Sync, O: Send>(items: &[I], f: impl Fn(&I) -> O + Sync) -> Vec<O> {
    if items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .iter()
            .map(|it| {
                let f = &f;
                scope.spawn(move || f(it))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("rerank worker panicked"))
            .collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RerankParams {
    pub n: usize,
    pub k: usize,
    pub sample_count: u32,
}

impl Default for RerankParams {
    fn default() -> Self {
        Self {
            n: 20,
            k: 5,
            sample_count: DEFAULT_SAMPLES,
        }
    }
}

/// Retrieve top-n, filter, fine-score the survivors, sort, keep the best k.
/// A candidate whose filter call fails is treated as non-relevant.
pub fn pipeline_rerank<T: Scalar>(
    session: &Session,
    embedder: &dyn EmbeddingProvider,
    index: &RetrievalIndex<T>,
    repo: &Repository,
    nlr: &str,
    params: RerankParams,
) -> Result<RerankOutcome<T>, RerankError> {
    let RerankParams { n, k, sample_count } = params;
    if k == 0 || n < k {
        return Err(RerankError::Invalid(format!("need n >= k >= 1, got n={n}, k={k}")));
    }
    let retrieved = retrieve_top_n(index, embedder, nlr, n)?;
    let mut candidates = Vec::with_capacity(retrieved.items.len());
    for item in &retrieved.items {
        let screen = repo.get(&item.screen_id).ok_or_else(|| {
            RerankError::Invalid(format!("screen {} is in the index but not the repository", item.screen_id))
        })?;
        candidates.push((screen, item.score));
    }

    let mut trace = GenerationTrace::new();
    let mut provenance: Vec<CandidateProvenance<T>> = Vec::with_capacity(candidates.len());
    let judgments = par_map(&candidates, |(screen, _)| binary_filter(session, nlr, screen));
    for (rank, ((screen, score), judged)) in candidates.iter().zip(judgments).enumerate() {
        let mut p = CandidateProvenance {
            screen_id: screen.screen_id.clone(),
            retrieval_rank: rank + 1,
            retrieval_score: *score,
            relevant: false,
            rationale: String::new(),
            fine: None,
            stages: vec![crate::retrieval::RETRIEVAL_STAGE.to_string(), FILTER_STAGE.to_string()],
            warning: None,
        };
        match judged {
            Ok(j) => {
                trace.extend(j.records);
                p.relevant = j.value.relevant;
                p.rationale = j.value.rationale;
            }
            Err(e) => {
                let w = format!("filter failed for {}: {e}; treated as not relevant", screen.screen_id);
                trace.warn(w.clone());
                p.warning = Some(w);
            }
        }
        provenance.push(p);
    }

    let survivors: Vec<(&GuiScreen, T)> = candidates
        .iter()
        .zip(&provenance)
        .filter(|(_, p)| p.relevant)
        .map(|(c, _)| *c)
        .collect();
    let scored = par_map(&survivors, |(screen, _)| fine_score::<T>(session, nlr, screen, sample_count));
    let mut rows = Vec::with_capacity(survivors.len());
    for ((screen, score), result) in survivors.iter().zip(scored) {
        let (fine, records) = result?;
        trace.extend(records);
        for w in &fine.warnings {
            trace.warnings.push(w.clone());
        }
        let p = provenance
            .iter_mut()
            .find(|p| p.screen_id == screen.screen_id)
            .expect("survivor has provenance");
        p.stages.push(FINE_STAGE.to_string());
        p.fine = Some(fine.clone());
        rows.push((screen.screen_id.clone(), fine, *score));
    }

    let mut reranked = rerank_filtered(nlr, &rows);
    reranked.items.truncate(k);
    reranked.provenance = provenance;
    Ok(RerankOutcome {
        retrieved,
        reranked,
        trace,
    })
}

/// A bracketed list of 1-based labels that is a permutation of `1..=n`.
pub fn parse_permutation(raw: &str, n: usize) -> Result<Vec<usize>, String> {
    let body = match (raw.find('['), raw.find(']')) {
        (Some(s), Some(e)) if s < e => &raw[s + 1..e],
        _ => first_line(raw).ok_or("the answer was empty")?,
    };
    let labels: Vec<usize> = body
        .split(|c: char| !c.is_ascii_digit())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<usize>().map_err(|_| format!("label {t:?} is not a number")))
        .collect::<Result<_, _>>()?;
    if labels.len() != n {
        return Err(format!("expected {n} labels, got {}", labels.len()));
    }
    let mut seen = vec![false; n];
    for &l in &labels {
        if l == 0 || l > n {
            return Err(format!("label {l} is not between 1 and {n}"));
        }
        if std::mem::replace(&mut seen[l - 1], true) {
            return Err(format!("label {l} appears more than once"));
        }
    }
    Ok(labels)
}

/// One request with every candidate screenshot labeled `GUI #i`; returns the
/// candidate ids in the model's order. A call is made even for one candidate
/// so the trace stays complete.
pub fn full_list_rerank(
    session: &Session,
    nlr: &str,
    candidates: &[GuiScreen],
) -> Result<Staged<Vec<String>>, GenerationError> {
    if candidates.is_empty() {
        return Err(GenerationError::Invalid("no candidates to rank".into()));
    }
    let n = candidates.len();
    let mut parts = vec![Part::text(
        templates::RERANK_FULL.fill(&[("N", &n.to_string()), ("NLR", nlr)]),
    )];
    for (i, screen) in candidates.iter().enumerate() {
        parts.push(Part::text(format!("GUI #{}", i + 1)));
        parts.push(Part::Image(screen.load_screenshot()?));
    }
    let messages = vec![ChatMessage::system(templates::system()), ChatMessage::user_parts(parts)];
    let staged = session.ask(FULL_STAGE, messages, |raw| parse_permutation(raw, n))?;
    Ok(Staged {
        value: staged
            .value
            .iter()
            .map(|&l| candidates[l - 1].screen_id.clone())
            .collect(),
        records: staged.records,
        raw: staged.raw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdicts() {
        assert_eq!(
            parse_verdict("RELEVANT — shows a login form").unwrap(),
            (true, "shows a login form".to_string())
        );
        assert_eq!(parse_verdict("NOT_RELEVANT").unwrap(), (false, String::new()));
        assert_eq!(parse_verdict("**Not relevant**\nwrong domain").unwrap().0, false);
        assert_eq!(parse_verdict("\nRELEVANT\n- has a cart").unwrap().1, "- has a cart");
        assert!(parse_verdict("maybe").is_err());
        assert!(parse_verdict("IRRELEVANT").is_err());
        assert!(parse_verdict("").is_err());
    }

    #[test]
    fn scores() {
        assert_eq!(parse_score("7").unwrap(), 7);
        assert_eq!(parse_score("Score: 8/10\nbecause").unwrap(), 8);
        assert_eq!(parse_score("-3").unwrap(), -3);
        assert!(parse_score("high").is_err());
    }

    #[test]
    fn fine_score_statistics() {
        let f = FineScore::<f64>::from_samples("s", vec![7, 8, 9]).unwrap();
        assert!((f.mean - 8.0).abs() < 1e-12);
        assert!((f.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        let one = FineScore::<f32>::from_samples("s", vec![10]).unwrap();
        assert_eq!((one.mean, one.std, one.sample_count), (10.0, 0.0, 1));
    }

    #[test]
    fn filtered_order_breaks_ties_by_retrieval_score() {
        let f = |id: &str, m: u8| FineScore::<f64>::from_samples(id, vec![m]).unwrap();
        let rows = vec![
            ("a".to_string(), f("a", 5), 0.1),
            ("b".to_string(), f("b", 9), 0.3),
            ("c".to_string(), f("c", 9), 0.7),
        ];
        assert_eq!(rerank_filtered("q", &rows).screen_ids(), vec!["c", "b", "a"]);
        assert!(rerank_filtered::<f64>("q", &[]).items.is_empty());
    }

    #[test]
    fn permutations() {
        assert_eq!(parse_permutation("[3, 1, 2]", 3).unwrap(), vec![3, 1, 2]);
        assert_eq!(parse_permutation("Ranking: [#2, #1]", 2).unwrap(), vec![2, 1]);
        assert!(parse_permutation("[1,1,2]", 3).is_err());
        assert!(parse_permutation("[1,2]", 3).is_err());
        assert!(parse_permutation("[1,2,4]", 3).is_err());
    }
}
