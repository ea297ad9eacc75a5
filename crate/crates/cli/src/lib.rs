//! The `protogen` command line: repository ingestion, index building,
//! retrieval and re-ranking, prototype generation, content enrichment and
//! evaluation.
//!
//! Exit codes: 0 on success, 1 when some items of a batch failed (the
//! manifest says which), 2 on usage or configuration errors.

pub mod batch;
pub mod config;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use protogen::content::{content_pipeline, LocalAssetSink};
use protogen::htmlio::{store_prototype, write_atomic, HtmlDocument};
use protogen::llm::LlmProvider;
use protogen::metrics::{
    eval_ranking_suite, load_runs, precision_recall_f1, read_score_file, wilcoxon_signed_rank, BinaryGroundTruth,
    Gain, GoldStandard, TestMode, VoteRecord,
};
use protogen::repository::{FilterRules, Repository};
use protogen::rerank::{pipeline_rerank, RerankParams};
use protogen::retrieval::{bm25_retrieve, build_index, resume_index, retrieve_top_n, Bm25Params, BuildOptions};
use protogen::session::{GenerationTrace, Session};
use protogen::strategies::{Nlr, Prototype, Strategy};
use protogen::{PairedSamples, Prf, Real, RetrievalIndex};

use batch::{Batch, Examples};
use config::{ImageBackend, LlmBackend, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "protogen", version, about = "Generate GUI prototypes from natural-language requirements")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Use the scripted mock LLM instead of the configured backend.
    #[arg(long, global = true, value_name = "FILE")]
    pub mock_script: Option<PathBuf>,
    #[arg(long, global = true)]
    pub model_id: Option<String>,
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read screen and caption records into a repository archive.
    Ingest(IngestArgs),
    /// Embed every caption of a repository into a retrieval index.
    Index(IndexArgs),
    /// Top-n screens for a query.
    Retrieve(RetrieveArgs),
    /// Retrieve, filter and fine-score candidates for a query.
    Rerank(RerankArgs),
    /// Generate prototypes for every requirement of an NLR file.
    Generate(GenerateArgs),
    /// Fill a prototype with realistic data and generated images.
    Content(ContentArgs),
    #[command(subcommand)]
    Eval(EvalCommand),
    #[command(subcommand)]
    Stats(StatsCommand),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FilterChoice {
    None,
    Retrieval,
    Description,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Line-delimited screen records.
    #[arg(long)]
    pub screens: PathBuf,
    /// Line-delimited caption records.
    #[arg(long)]
    pub captions: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "none")]
    pub filter: FilterChoice,
    /// Repository archive to write.
    #[arg(long)]
    pub repo: PathBuf,
    /// Ingestion report (JSON); printed when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub repo: PathBuf,
    /// Index file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from the entries already in `--out`.
    #[arg(long)]
    pub resume: bool,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 4)]
    pub parallelism: usize,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub query: String,
    #[arg(long)]
    pub n: Option<usize>,
    /// Rank captions lexically instead of by embedding; needs `--repo`.
    #[arg(long)]
    pub bm25: bool,
    #[arg(long)]
    pub repo: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RerankArgs {
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Repository holding the candidate screenshots.
    #[arg(long)]
    pub repo: Option<PathBuf>,
    #[arg(long)]
    pub query: String,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long)]
    pub samples: Option<u32>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Strategy,
    /// Line-delimited `{id, text}` requirements.
    #[arg(long)]
    pub nlr_file: PathBuf,
    /// Examples for retrieval-augmented strategies, loops for scgg.
    #[arg(long)]
    pub k: Option<u32>,
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub repo: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub samples: Option<u32>,
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Run the content pipeline on every prototype.
    #[arg(long)]
    pub with_content: bool,
    #[arg(long, value_enum)]
    pub image_provider: Option<ImageChoice>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ImageChoice {
    Stub,
    Live,
}

#[derive(Debug, Args)]
pub struct ContentArgs {
    #[arg(long)]
    pub html: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub image_provider: Option<ImageChoice>,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Ranking metrics of runs against a graded gold standard.
    Rank {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        runs: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "3,5,7,10")]
        ks: Vec<usize>,
        #[arg(long, value_enum, default_value = "linear")]
        gain: GainChoice,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Paired significance test between two score files.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, value_enum, default_value = "wilcoxon")]
        test: TestChoice,
        #[arg(long, value_enum, default_value = "auto")]
        mode: ModeChoice,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum StatsCommand {
    /// Fleiss' kappa over binary votes, optionally scoring predictions
    /// against the majority vote.
    Agreement {
        /// Line-delimited `{query_id, screen_id, votes: [bool]}`.
        #[arg(long)]
        votes: PathBuf,
        /// Line-delimited `{query_id, screen_id, relevant}`.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GainChoice {
    Linear,
    Exponential,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TestChoice {
    Wilcoxon,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeChoice {
    Exact,
    Approx,
    Auto,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse::<Strategy>().map_err(|e| e.to_string())
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn execute(cli: Cli) -> Result<i32> {
    let mut config = RunConfig::load_or_default(cli.config.as_deref())?;
    if let Some(script) = &cli.mock_script {
        config.llm = Some(LlmBackend::Mock { script: script.clone() });
    }
    if let Some(m) = &cli.model_id {
        config.model_id = m.clone();
    }
    if let Some(t) = cli.temperature {
        config.temperature = t;
    }
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Index(a) => index(a, &config),
        Command::Retrieve(a) => retrieve(a, config),
        Command::Rerank(a) => rerank(a, config),
        Command::Generate(a) => generate(a, config),
        Command::Content(a) => content(a, config),
        Command::Eval(c) => eval(c),
        Command::Stats(c) => stats(c),
    }
}

fn emit<S: Serialize>(value: &S, out: Option<&Path>) -> Result<()> {
    let json = serde_json::to_vec_pretty(value)?;
    match out {
        Some(p) => write_atomic(p, &json).with_context(|| format!("writing {}", p.display()))?,
        None => println!("{}", String::from_utf8(json)?),
    }
    Ok(())
}

fn ingest(a: IngestArgs) -> Result<i32> {
    let (repo, report) = Repository::ingest_screens(&a.screens)?;
    let (repo, captions) = match &a.captions {
        Some(c) => {
            let (r, rep) = repo.ingest_captions(c)?;
            (r, Some(rep))
        }
        None => (repo, None),
    };
    let rules = match a.filter {
        FilterChoice::None => FilterRules::default(),
        FilterChoice::Retrieval => FilterRules::retrieval(),
        FilterChoice::Description => FilterRules::description_dataset(),
    };
    let (repo, filter) = repo.filter(&rules);
    repo.save(&a.repo)?;
    emit(
        &serde_json::json!({"screens": report, "captions": captions, "filter": filter, "repo": a.repo}),
        a.out.as_deref(),
    )?;
    Ok(0)
}

fn index(a: IndexArgs, config: &RunConfig) -> Result<i32> {
    let repo = Repository::load(&a.repo)?;
    let embedder = config.embedder()?;
    let opts = BuildOptions {
        batch_size: a.batch_size.max(1),
        parallelism: a.parallelism.max(1),
    };
    let built = if a.resume && a.out.exists() {
        let partial = RetrievalIndex::load(&a.out)?;
        resume_index(partial, &repo, embedder.as_ref(), opts)
    } else {
        build_index(&repo, embedder.as_ref(), opts)
    };
    match built {
        Ok(index) => {
            index.save(&a.out)?;
            eprintln!("indexed {} captions of {} screens", index.len(), index.screen_count());
            Ok(0)
        }
        Err(e) => {
            e.partial.save(&a.out)?;
            eprintln!(
                "error: {}; saved {} entries, rerun with --resume to continue",
                e.source,
                e.partial.len()
            );
            Ok(if e.partial.is_empty() { 2 } else { 1 })
        }
    }
}

fn require<'a>(value: &'a Option<PathBuf>, flag: &str, why: &str) -> Result<&'a PathBuf> {
    value.as_ref().with_context(|| format!("--{flag} is required {why}"))
}

fn retrieve(a: RetrieveArgs, mut config: RunConfig) -> Result<i32> {
    if let Some(n) = a.n {
        config.retrieval.n = n;
    }
    config.validate()?;
    let n = config.retrieval.n;
    let list = if a.bm25 {
        let repo = Repository::load(require(&a.repo, "repo", "for --bm25")?)?;
        bm25_retrieve::<Real>(&repo, &a.query, n, Bm25Params::default())?
    } else {
        let path = a.index.as_ref().or(config.retrieval.index.as_ref());
        let index = RetrievalIndex::load(require(&path.cloned(), "index", "for retrieval")?)?;
        let embedder = config.embedder()?;
        retrieve_top_n(&index, embedder.as_ref(), &a.query, n)?
    };
    emit(&list, a.out.as_deref())?;
    Ok(0)
}

struct Loaded {
    index: RetrievalIndex,
    repo: Repository,
}

fn load_examples(config: &RunConfig, why: &str) -> Result<Loaded> {
    let index = require(&config.retrieval.index, "index", why)?;
    let repo = require(&config.retrieval.repo, "repo", why)?;
    Ok(Loaded {
        index: RetrievalIndex::load(index)?,
        repo: Repository::load(repo)?,
    })
}

fn rerank(a: RerankArgs, mut config: RunConfig) -> Result<i32> {
    if a.index.is_some() {
        config.retrieval.index = a.index.clone();
    }
    if a.repo.is_some() {
        config.retrieval.repo = a.repo.clone();
    }
    if let Some(n) = a.n {
        config.retrieval.n = n;
    }
    if let Some(s) = a.samples {
        config.retrieval.samples = s;
    }
    config.validate()?;
    let loaded = load_examples(&config, "for re-ranking")?;
    let provider = config.llm_provider()?;
    let embedder = config.embedder()?;
    let settings = config.settings();
    let session = Session::new(provider.as_ref(), &settings);
    let params = RerankParams {
        n: config.retrieval.n,
        k: a.k,
        sample_count: config.retrieval.samples,
    };
    let outcome = pipeline_rerank(&session, embedder.as_ref(), &loaded.index, &loaded.repo, &a.query, params)?;
    emit(&outcome, a.out.as_deref())?;
    Ok(0)
}

fn read_nlrs(path: &Path) -> Result<Vec<Nlr>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut nlrs = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let nlr: Nlr = serde_json::from_str(line).with_context(|| format!("{} line {}", path.display(), i + 1))?;
        if !seen.insert(nlr.id.clone()) {
            bail!("{} line {}: duplicate id {}", path.display(), i + 1, nlr.id);
        }
        nlrs.push(nlr);
    }
    if nlrs.is_empty() {
        bail!("{} holds no requirements", path.display());
    }
    Ok(nlrs)
}

fn generate(a: GenerateArgs, mut config: RunConfig) -> Result<i32> {
    if let Some(k) = a.k {
        config.k = k;
    }
    if a.index.is_some() {
        config.retrieval.index = a.index.clone();
    }
    if a.repo.is_some() {
        config.retrieval.repo = a.repo.clone();
    }
    if let Some(n) = a.n {
        config.retrieval.n = n;
    }
    if let Some(s) = a.samples {
        config.retrieval.samples = s;
    }
    if let Some(c) = a.concurrency {
        config.concurrency = c;
    }
    config.with_content |= a.with_content;
    if a.image_provider == Some(ImageChoice::Stub) {
        config.image = ImageBackend::Stub;
    }
    config.validate()?;
    if a.strategy.needs_examples() && config.k == 0 {
        bail!("--k must be at least 1 for {}", a.strategy);
    }
    let why = format!("for --strategy {}", a.strategy);
    let loaded = if a.strategy.needs_examples() {
        Some(load_examples(&config, &why)?)
    } else {
        None
    };
    if a.image_provider == Some(ImageChoice::Live) && !matches!(config.image, ImageBackend::Live { .. }) {
        bail!("--image-provider live needs an \"image\" backend in --config");
    }
    let nlrs = read_nlrs(&a.nlr_file)?;
    let provider = config.llm_provider()?;
    let embedder = config.embedder()?;
    let images = if config.with_content {
        Some(config.image_provider()?)
    } else {
        None
    };
    let settings = config.settings();
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let batch = Batch {
        session: Session::new(provider.as_ref() as &dyn LlmProvider, &settings),
        strategy: a.strategy,
        k: config.k,
        examples: loaded.as_ref().map(|l| Examples {
            embedder: embedder.as_ref(),
            index: &l.index,
            repo: &l.repo,
            n: config.retrieval.n,
            samples: config.retrieval.samples,
        }),
        images: images.as_deref(),
        out: &a.out,
        concurrency: config.concurrency,
    };
    let manifest = batch.run(&nlrs, &config, Some(&a.nlr_file))?;
    eprintln!(
        "{} succeeded, {} failed; manifest at {}",
        manifest.succeeded,
        manifest.failed,
        a.out.join(batch::MANIFEST_FILE).display()
    );
    Ok(manifest.exit_code())
}

fn content(a: ContentArgs, mut config: RunConfig) -> Result<i32> {
    match a.image_provider {
        Some(ImageChoice::Stub) => config.image = ImageBackend::Stub,
        Some(ImageChoice::Live) if !matches!(config.image, ImageBackend::Live { .. }) => {
            bail!("--image-provider live needs an \"image\" backend in --config")
        }
        _ => {}
    }
    config.validate()?;
    let text = fs::read_to_string(&a.html).with_context(|| format!("reading {}", a.html.display()))?;
    let html = HtmlDocument::new(text).with_context(|| format!("{} is not a valid prototype", a.html.display()))?;
    let provider = config.llm_provider()?;
    let images = config.image_provider()?;
    let settings = config.settings();
    let session = Session::new(provider.as_ref(), &settings);
    // The input page has no generation history; the strategy label is only
    // carried through to trace.json.
    let prototype = Prototype {
        html,
        strategy: Strategy::Zs,
        iteration: 0,
        trace: GenerationTrace::new(),
    };
    let sink = LocalAssetSink::new(&a.out);
    let outcome = content_pipeline(&session, images.as_ref(), &sink, &prototype)?;
    store_prototype(&outcome.prototype, &a.out)?;
    emit(
        &serde_json::json!({"slots": outcome.slots, "assets": outcome.assets}),
        Some(&a.out.join("content.json")),
    )?;
    let failed = outcome.assets.iter().filter(|x| x.failed).count();
    if failed > 0 {
        eprintln!("{failed} image(s) could not be generated; placeholders were used");
        return Ok(1);
    }
    Ok(0)
}

#[derive(Serialize)]
struct CompareReport {
    test: &'static str,
    pairs: usize,
    only_in_a: Vec<String>,
    only_in_b: Vec<String>,
    result: protogen::WilcoxonResult,
}

fn eval(c: EvalCommand) -> Result<i32> {
    match c {
        EvalCommand::Rank {
            gold,
            runs,
            ks,
            gain,
            out,
        } => {
            let gold = GoldStandard::load(&gold)?;
            let runs = load_runs(&runs)?;
            let gain = match gain {
                GainChoice::Linear => Gain::Linear,
                GainChoice::Exponential => Gain::Exponential,
            };
            let report = eval_ranking_suite::<Real>(&gold, &runs, &ks, gain)?;
            emit(&report, out.as_deref())?;
            Ok(0)
        }
        EvalCommand::Compare {
            a,
            b,
            test: TestChoice::Wilcoxon,
            mode,
            out,
        } => {
            let sa = read_score_file::<Real>(&a)?;
            let sb = read_score_file::<Real>(&b)?;
            let shared: Vec<&String> = sa.keys().filter(|k| sb.contains_key(*k)).collect();
            let only_in_a: Vec<String> = sa.keys().filter(|k| !sb.contains_key(*k)).cloned().collect();
            let only_in_b: Vec<String> = sb.keys().filter(|k| !sa.contains_key(*k)).cloned().collect();
            if !only_in_a.is_empty() || !only_in_b.is_empty() {
                log::warn!(
                    "{} items are not in both files and were ignored",
                    only_in_a.len() + only_in_b.len()
                );
            }
            let xs: Vec<Real> = shared.iter().map(|k| sa[*k]).collect();
            let ys: Vec<Real> = shared.iter().map(|k| sb[*k]).collect();
            let samples = PairedSamples::from_columns(&xs, &ys)?;
            let mode = match mode {
                ModeChoice::Exact => TestMode::Exact,
                ModeChoice::Approx => TestMode::Approx,
                ModeChoice::Auto => TestMode::Auto,
            };
            let result = wilcoxon_signed_rank(&samples, mode)?;
            emit(
                &CompareReport {
                    test: "wilcoxon",
                    pairs: shared.len(),
                    only_in_a,
                    only_in_b,
                    result,
                },
                out.as_deref(),
            )?;
            Ok(0)
        }
    }
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect()
}

#[derive(Deserialize)]
struct Prediction {
    query_id: String,
    screen_id: String,
    relevant: bool,
}

#[derive(Serialize)]
struct AgreementReport {
    items: usize,
    annotators: usize,
    relevant_by_majority: usize,
    kappa: Real,
    #[serde(skip_serializing_if = "Option::is_none")]
    predictions: Option<Prf>,
}

fn stats(c: StatsCommand) -> Result<i32> {
    let StatsCommand::Agreement {
        votes,
        predictions,
        out,
    } = c;
    let records: Vec<VoteRecord> = read_jsonl(&votes)?;
    let truth = BinaryGroundTruth::from_votes(&records)?;
    let kappa = truth.kappa::<Real>()?;
    let relevant: HashSet<(String, String)> = truth
        .judgments
        .iter()
        .filter(|j| j.2)
        .map(|(q, s, _)| (q.clone(), s.clone()))
        .collect();
    let prf = match predictions {
        Some(p) => {
            let preds: Vec<Prediction> = read_jsonl(&p)?;
            let known: BTreeMap<(String, String), ()> = truth
                .judgments
                .iter()
                .map(|(q, s, _)| ((q.clone(), s.clone()), ()))
                .collect();
            let predicted: HashSet<(String, String)> = preds
                .into_iter()
                .filter(|p| p.relevant)
                .map(|p| (p.query_id, p.screen_id))
                .filter(|key| {
                    let ok = known.contains_key(key);
                    if !ok {
                        log::warn!("prediction for unjudged pair {}/{} ignored", key.0, key.1);
                    }
                    ok
                })
                .collect();
            Some(precision_recall_f1::<Real, _>(&predicted, &relevant)?)
        }
        None => None,
    };
    emit(
        &AgreementReport {
            items: truth.judgments.len(),
            annotators: truth.annotators,
            relevant_by_majority: relevant.len(),
            kappa,
            predictions: prf,
        },
        out.as_deref(),
    )?;
    Ok(0)
}
