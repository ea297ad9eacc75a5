//! Batch generation over many requirements with per-NLR isolation and a run
//! manifest that is written whatever happens to individual NLRs.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use protogen::content::{content_pipeline, ImageProvider, LocalAssetSink};
use protogen::htmlio::{prototype_dir, store_prototype, write_atomic};
use protogen::llm::Usage;
use protogen::repository::{GuiScreen, Repository};
use protogen::rerank::{pipeline_rerank, RerankParams};
use protogen::retrieval::EmbeddingProvider;
use protogen::session::{GenerationError, GenerationTrace, Session};
use protogen::strategies::{run_single, scgg_loop, zs_instruct, Nlr, Prototype, Strategy};
use protogen::{templates, RetrievalIndex};

use crate::config::RunConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything retrieval-augmented strategies need to pick example screens.
pub struct Examples<'a> {
    pub embedder: &'a dyn EmbeddingProvider,
    pub index: &'a RetrievalIndex,
    pub repo: &'a Repository,
    pub n: usize,
    pub samples: u32,
}

pub struct Batch<'a> {
    pub session: Session<'a>,
    pub strategy: Strategy,
    pub k: u32,
    pub examples: Option<Examples<'a>>,
    pub images: Option<&'a dyn ImageProvider>,
    pub out: &'a Path,
    pub concurrency: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredPrototype {
    /// Directory relative to the run root.
    pub dir: String,
    pub iteration: u32,
    pub html_bytes: usize,
    pub llm_calls: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_dir: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Success,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlrOutcome {
    pub id: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_stage: Option<String>,
    /// Set when no example GUI survived re-ranking and the zero-shot
    /// instruction was used instead.
    #[serde(default)]
    pub fell_back_to_zs: bool,
    pub prototypes: Vec<StoredPrototype>,
    pub llm_calls: usize,
    pub usage: Usage,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub template_version: String,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub wall_clock_ms: u64,
    pub strategy: Strategy,
    pub k: u32,
    pub with_content: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nlr_file: Option<PathBuf>,
    pub config: RunConfig,
    pub succeeded: usize,
    pub failed: usize,
    pub llm_calls: usize,
    pub totals: Usage,
    pub outcomes: Vec<NlrOutcome>,
}

impl RunManifest {
    pub fn exit_code(&self) -> i32 {
        if self.failed == 0 {
            0
        } else {
            1
        }
    }
}

fn relative(out: &Path, p: &Path) -> String {
    p.strip_prefix(out).unwrap_or(p).display().to_string()
}

struct Work {
    outcome: NlrOutcome,
}

impl Work {
    fn new(id: &str) -> Self {
        Self {
            outcome: NlrOutcome {
                id: id.to_string(),
                status: Status::Success,
                error: None,
                error_stage: None,
                fell_back_to_zs: false,
                prototypes: Vec::new(),
                llm_calls: 0,
                usage: Usage::default(),
                warnings: Vec::new(),
            },
        }
    }

    fn fail(&mut self, error: &GenerationError) {
        self.outcome.status = Status::Error;
        self.outcome.error = Some(error.to_string());
        self.outcome.error_stage = error.stage().map(str::to_string);
    }

    fn fail_msg(&mut self, message: String) {
        self.outcome.status = Status::Error;
        self.outcome.error = Some(message);
    }

    fn count(&mut self, trace: &GenerationTrace) {
        self.outcome.llm_calls += trace.call_count();
        self.outcome.usage += trace.totals;
        self.outcome.warnings.extend(trace.warnings.iter().cloned());
    }
}

impl Batch<'_> {
    fn examples_for(&self, nlr: &Nlr, work: &mut Work) -> Result<(Vec<GuiScreen>, GenerationTrace), ()> {
        let ex = self.examples.as_ref().expect("validated before the batch starts");
        let k = (self.k as usize).min(ex.n);
        let params = RerankParams {
            n: ex.n,
            k,
            sample_count: ex.samples,
        };
        match pipeline_rerank(&self.session, ex.embedder, ex.index, ex.repo, &nlr.text, params) {
            Ok(outcome) => {
                let dir = self.out.join(&nlr.id);
                let json = serde_json::to_vec_pretty(&outcome.reranked).expect("rerank list serializes");
                if let Err(e) = write_atomic(&dir.join("rerank.json"), &json) {
                    work.outcome.warnings.push(format!("could not write rerank.json: {e}"));
                }
                let screens = outcome
                    .reranked
                    .items
                    .iter()
                    .filter_map(|i| ex.repo.get(&i.screen_id).cloned())
                    .collect();
                Ok((screens, outcome.trace))
            }
            Err(e) => {
                work.fail_msg(format!("re-ranking failed: {e}"));
                Err(())
            }
        }
    }

    fn store(&self, work: &mut Work, prototype: Prototype, dir: PathBuf) {
        let paths = match store_prototype(&prototype, &dir) {
            Ok(p) => p,
            Err(e) => {
                work.fail_msg(format!("storing {}: {e}", dir.display()));
                return;
            }
        };
        let mut entry = StoredPrototype {
            dir: relative(self.out, &dir),
            iteration: prototype.iteration,
            html_bytes: prototype.html.byte_length(),
            llm_calls: prototype.trace.call_count(),
            content_dir: None,
        };
        debug_assert!(paths.html.starts_with(&dir));
        if let Some(images) = self.images {
            let content_dir = dir.join("content");
            let sink = LocalAssetSink::new(&content_dir);
            match content_pipeline(&self.session, images, &sink, &prototype) {
                Ok(c) => {
                    let extra = c.prototype.trace.call_count() - prototype.trace.call_count();
                    work.outcome.llm_calls += extra;
                    let mut delta = c.prototype.trace.totals;
                    delta.prompt_tokens -= prototype.trace.totals.prompt_tokens;
                    delta.output_tokens -= prototype.trace.totals.output_tokens;
                    work.outcome.usage += delta;
                    work.outcome
                        .warnings
                        .extend(c.prototype.trace.warnings[prototype.trace.warnings.len()..].iter().cloned());
                    let listing = serde_json::json!({"slots": c.slots, "assets": c.assets});
                    let stored = store_prototype(&c.prototype, &content_dir).and_then(|_| {
                        write_atomic(
                            &content_dir.join("content.json"),
                            &serde_json::to_vec_pretty(&listing).expect("content listing serializes"),
                        )
                    });
                    match stored {
                        Ok(()) => entry.content_dir = Some(relative(self.out, &content_dir)),
                        Err(e) => work.fail_msg(format!("storing content for {}: {e}", dir.display())),
                    }
                }
                Err(e) => work.fail(&e),
            }
        }
        work.outcome.prototypes.push(entry);
    }

    fn run_one(&self, nlr: &Nlr) -> NlrOutcome {
        let mut work = Work::new(&nlr.id);
        let label = self.strategy.label();
        match self.strategy {
            Strategy::Scgg => {
                let run = scgg_loop(&self.session, nlr, self.k);
                if let Some(last) = run.prototypes.last() {
                    work.count(&last.trace);
                }
                for p in run.prototypes {
                    let dir = prototype_dir(self.out, &nlr.id, label, Some(p.iteration));
                    self.store(&mut work, p, dir);
                }
                if let Some(e) = run.error {
                    work.fail(&e);
                }
            }
            s => {
                let (screens, pre) = if s.needs_examples() {
                    match self.examples_for(nlr, &mut work) {
                        Ok(x) => x,
                        Err(()) => return work.outcome,
                    }
                } else {
                    (Vec::new(), GenerationTrace::new())
                };
                let result = match run_single(&self.session, s, nlr, &screens, self.k as usize) {
                    Err(GenerationError::Fallback) => {
                        work.outcome.fell_back_to_zs = true;
                        work.outcome
                            .warnings
                            .push("no example GUI survived re-ranking; used the zero-shot instruction".into());
                        zs_instruct(&self.session, nlr)
                    }
                    other => other,
                };
                match result {
                    Ok(p) => {
                        let mut trace = pre;
                        trace.append(p.trace);
                        let p = Prototype { trace, ..p };
                        work.count(&p.trace);
                        let k = s.needs_examples().then_some(self.k);
                        let dir = prototype_dir(self.out, &nlr.id, label, k);
                        self.store(&mut work, p, dir);
                    }
                    Err(e) => {
                        work.count(&pre);
                        work.fail(&e);
                    }
                }
            }
        }
        work.outcome
    }

    /// Runs every NLR (at most `concurrency` at once), then writes
    /// `manifest.json` at the run root. Outcomes keep the input order.
    pub fn run(&self, nlrs: &[Nlr], config: &RunConfig, nlr_file: Option<&Path>) -> std::io::Result<RunManifest> {
        let started_at = Utc::now();
        let clock = Instant::now();
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<NlrOutcome>>> = nlrs.iter().map(|_| Mutex::new(None)).collect();
        let workers = self.concurrency.clamp(1, nlrs.len().max(1));
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(nlr) = nlrs.get(i) else { break };
                    log::info!("generating {} with {}", nlr.id, self.strategy);
                    let outcome = self.run_one(nlr);
                    if let Some(e) = &outcome.error {
                        log::error!("{}: {e}", nlr.id);
                    }
                    *slots[i].lock().unwrap() = Some(outcome);
                });
            }
        });
        let outcomes: Vec<NlrOutcome> = slots
            .into_iter()
            .map(|m| m.into_inner().unwrap().expect("every NLR was processed"))
            .collect();
        let mut totals = Usage::default();
        for o in &outcomes {
            totals += o.usage;
        }
        let failed = outcomes.iter().filter(|o| o.status == Status::Error).count();
        let manifest = RunManifest {
            tool: "protogen".into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            template_version: templates::TEMPLATE_VERSION.into(),
            started_at,
            finished_at: Utc::now(),
            wall_clock_ms: clock.elapsed().as_millis() as u64,
            strategy: self.strategy,
            k: self.k,
            with_content: self.images.is_some(),
            nlr_file: nlr_file.map(Path::to_path_buf),
            config: config.clone(),
            succeeded: outcomes.len() - failed,
            failed,
            llm_calls: outcomes.iter().map(|o| o.llm_calls).sum(),
            totals,
            outcomes,
        };
        let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        write_atomic(&self.out.join(MANIFEST_FILE), &json).map_err(std::io::Error::other)?;
        Ok(manifest)
    }
}
