//! Run configuration: a JSON document given with `--config`, overridden by
//! command-line flags.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use protogen::content::{HttpImageProvider, ImageProvider, StubImageProvider};
use protogen::llm::{ChatEndpoint, HttpConfig, Limited, LlmProvider, MockProvider, RetryPolicy, DEFAULT_IN_FLIGHT};
use protogen::retrieval::{EmbeddingProvider, HttpEmbedder, MockEmbedder};
use protogen::session::Settings;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum LlmBackend {
    Mock {
        script: PathBuf,
    },
    Live {
        #[serde(flatten)]
        http: HttpConfig,
        #[serde(default = "yes")]
        supports_n: bool,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum EmbeddingBackend {
    Mock {
        #[serde(default = "default_dim")]
        dim: usize,
        /// Optional `{"dim", "vectors": {text: [..]}}` file of fixed vectors.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        vectors: Option<PathBuf>,
    },
    Live {
        #[serde(flatten)]
        http: HttpConfig,
        model: String,
        dim: usize,
    },
}

impl Default for EmbeddingBackend {
    fn default() -> Self {
        EmbeddingBackend::Mock {
            dim: default_dim(),
            vectors: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum ImageBackend {
    Stub,
    Live {
        #[serde(flatten)]
        http: HttpConfig,
        model: String,
        /// Every image is requested at this fixed size.
        #[serde(default = "default_size")]
        size: String,
    },
}

impl Default for ImageBackend {
    fn default() -> Self {
        ImageBackend::Stub
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub index: Option<PathBuf>,
    pub repo: Option<PathBuf>,
    pub n: usize,
    pub samples: u32,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            index: None,
            repo: None,
            n: 20,
            samples: protogen::rerank::DEFAULT_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub llm: Option<LlmBackend>,
    pub embedding: EmbeddingBackend,
    pub image: ImageBackend,
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub retrieval: RetrievalConfig,
    /// Example count for retrieval-augmented strategies, loop count for
    /// self-critique.
    pub k: u32,
    /// NLRs processed at once in a batch.
    pub concurrency: usize,
    pub seed: u64,
    pub retry: RetryPolicy,
    pub with_content: bool,
}

fn yes() -> bool {
    true
}
fn default_in_flight() -> usize {
    DEFAULT_IN_FLIGHT
}
fn default_dim() -> usize {
    64
}
fn default_size() -> String {
    "1024x1024".into()
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = Settings::default();
        Self {
            llm: None,
            embedding: EmbeddingBackend::default(),
            image: ImageBackend::default(),
            model_id: s.model_id,
            temperature: s.temperature,
            max_output_tokens: s.max_output_tokens,
            retrieval: RetrievalConfig::default(),
            k: 3,
            concurrency: 4,
            seed: 0,
            retry: s.retry,
            with_content: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=2.0).contains(&self.temperature) {
            bail!("temperature must be between 0 and 2, got {}", self.temperature);
        }
        if self.concurrency == 0 {
            bail!("concurrency must be at least 1");
        }
        if self.retrieval.n == 0 {
            bail!("retrieval.n must be at least 1");
        }
        if self.retrieval.samples == 0 {
            bail!("retrieval.samples must be at least 1");
        }
        Ok(())
    }

    pub fn settings(&self) -> Settings {
        Settings {
            model_id: self.model_id.clone(),
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
            stage_max_tokens: Default::default(),
            retry: self.retry.clone(),
        }
    }

    pub fn llm_provider(&self) -> Result<Arc<dyn LlmProvider>> {
        match &self.llm {
            None => bail!("no LLM backend configured; pass --mock-script or set \"llm\" in --config"),
            Some(LlmBackend::Mock { script }) => Ok(Arc::new(MockProvider::from_file(script)?)),
            Some(LlmBackend::Live {
                http,
                supports_n,
                max_in_flight,
            }) => Ok(Arc::new(Limited::new(ChatEndpoint::new(http, *supports_n)?, *max_in_flight))),
        }
    }

    pub fn embedder(&self) -> Result<Box<dyn EmbeddingProvider>> {
        Ok(match &self.embedding {
            EmbeddingBackend::Mock { dim, vectors: None } => Box::new(MockEmbedder::new(*dim)),
            EmbeddingBackend::Mock {
                dim,
                vectors: Some(path),
            } => {
                let m = MockEmbedder::from_file(path)?;
                if m.dim() != *dim {
                    bail!("vector file {} has dim {}, config says {dim}", path.display(), m.dim());
                }
                Box::new(m)
            }
            EmbeddingBackend::Live { http, model, dim } => Box::new(HttpEmbedder::new(http, model, *dim)?),
        })
    }

    pub fn image_provider(&self) -> Result<Box<dyn ImageProvider>> {
        Ok(match &self.image {
            ImageBackend::Stub => Box::new(StubImageProvider),
            ImageBackend::Live { http, model, size } => Box::new(HttpImageProvider::new(http, model, size)?),
        })
    }
}
