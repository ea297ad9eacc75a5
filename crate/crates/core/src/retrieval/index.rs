use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{embed, EmbeddingProvider, EmbeddingVector, RetrievalError};
use crate::htmlio::write_atomic;
use crate::repository::Repository;
use crate::scalar::Scalar;

const FORMAT: &str = "protogen-index";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct IndexEntry<T: Scalar> {
    pub screen_id: String,
    pub caption_ordinal: usize,
    pub vector: EmbeddingVector<T>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    dim: usize,
    provider_id: String,
    scalar: String,
    entries: usize,
}

/// Caption embeddings keyed by `(screen_id, caption_ordinal)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex<T: Scalar> {
    dim: usize,
    provider_id: String,
    entries: Vec<IndexEntry<T>>,
    keys: HashSet<(String, usize)>,
}

impl<T: Scalar> RetrievalIndex<T> {
    pub fn new(dim: usize, provider_id: impl Into<String>) -> Self {
        Self {
            dim,
            provider_id: provider_id.into(),
            entries: Vec::new(),
            keys: HashSet::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn entries(&self) -> &[IndexEntry<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, screen_id: &str, caption_ordinal: usize) -> bool {
        self.keys.contains(&(screen_id.to_string(), caption_ordinal))
    }

    pub fn screen_count(&self) -> usize {
        self.entries
            .iter()
            .map(|e| e.screen_id.as_str())
            .collect::<HashSet<_>>()
            .len()
    }

    pub fn insert(&mut self, entry: IndexEntry<T>) -> Result<(), RetrievalError> {
        if entry.vector.dim() != self.dim {
            return Err(RetrievalError::DimMismatch {
                expected: self.dim,
                got: entry.vector.dim(),
            });
        }
        let key = (entry.screen_id.clone(), entry.caption_ordinal);
        if !self.keys.insert(key) {
            return Err(RetrievalError::Invalid(format!(
                "duplicate index entry ({}, {})",
                entry.screen_id, entry.caption_ordinal
            )));
        }
        self.entries.push(entry);
        Ok(())
    }

    fn sort(&mut self) {
        self.entries.sort_by(|a, b| {
            a.screen_id
                .cmp(&b.screen_id)
                .then(a.caption_ordinal.cmp(&b.caption_ordinal))
        });
    }

    /// Fails when `provider` is not the one the index was built with.
    pub fn check_provider(&self, provider: &dyn EmbeddingProvider) -> Result<(), RetrievalError> {
        if provider.id() != self.provider_id {
            return Err(RetrievalError::ProviderMismatch {
                index: self.provider_id.clone(),
                query: provider.id().to_string(),
            });
        }
        if provider.dim() != self.dim {
            return Err(RetrievalError::DimMismatch {
                expected: self.dim,
                got: provider.dim(),
            });
        }
        Ok(())
    }

    /// Line-JSON: a header line, then one entry per line.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            dim: self.dim,
            provider_id: self.provider_id.clone(),
            scalar: std::any::type_name::<T>().into(),
            entries: self.entries.len(),
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        for e in &self.entries {
            out.extend(serde_json::to_vec(e).expect("entry serializes"));
            out.push(b'\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        write_atomic(path, &self.to_bytes()).map_err(|e| RetrievalError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let p = path.display().to_string();
        let file = std::fs::File::open(path).map_err(|e| RetrievalError::Io {
            path: p.clone(),
            message: e.to_string(),
        })?;
        let format_err = |line: usize, message: String| RetrievalError::Format {
            path: p.clone(),
            message: format!("line {line}: {message}"),
        };
        let mut lines = BufReader::new(file).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| format_err(1, "missing header".into()))?
            .map_err(|e| format_err(1, e.to_string()))?;
        let header: Header =
            serde_json::from_str(&header_line).map_err(|e| format_err(1, e.to_string()))?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(format_err(
                1,
                format!("unsupported format {} v{}", header.format, header.version),
            ));
        }
        let mut index = Self::new(header.dim, header.provider_id);
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| format_err(i + 2, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: IndexEntry<T> =
                serde_json::from_str(&line).map_err(|e| format_err(i + 2, e.to_string()))?;
            index.insert(entry).map_err(|e| format_err(i + 2, e.to_string()))?;
        }
        if index.len() != header.entries {
            return Err(format_err(
                1,
                format!("header announces {} entries, found {}", header.entries, index.len()),
            ));
        }
        Ok(index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    /// Captions per embedding request.
    pub batch_size: usize,
    /// Embedding requests in flight at once.
    pub parallelism: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            batch_size: 64,
            parallelism: 4,
        }
    }
}

/// A failed build. `partial` holds every entry embedded before the failure
/// and can be passed to [`resume_index`].
#[derive(Debug)]
pub struct IndexBuildError<T: Scalar> {
    pub source: RetrievalError,
    pub partial: RetrievalIndex<T>,
}

impl<T: Scalar> IndexBuildError<T> {
    /// The last entry that was completed, if any.
    pub fn last_completed(&self) -> Option<(&str, usize)> {
        self.partial
            .entries
            .last()
            .map(|e| (e.screen_id.as_str(), e.caption_ordinal))
    }
}

impl<T: Scalar> fmt::Display for IndexBuildError<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "index build stopped after {} entries: {}",
            self.partial.len(),
            self.source
        )
    }
}

impl<T: Scalar> std::error::Error for IndexBuildError<T> {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

/// Embeds every caption of every screen.
pub fn build_index<T: Scalar>(
    repo: &Repository,
    provider: &dyn EmbeddingProvider,
    options: BuildOptions,
) -> Result<RetrievalIndex<T>, IndexBuildError<T>> {
    resume_index(RetrievalIndex::new(provider.dim(), provider.id()), repo, provider, options)
}

/// Continues a build, embedding only the captions `partial` lacks.
pub fn resume_index<T: Scalar>(
    partial: RetrievalIndex<T>,
    repo: &Repository,
    provider: &dyn EmbeddingProvider,
    options: BuildOptions,
) -> Result<RetrievalIndex<T>, IndexBuildError<T>> {
    let mut index = partial;
    if let Err(source) = index.check_provider(provider) {
        return Err(IndexBuildError {
            source,
            partial: index,
        });
    }
    let pending: Vec<(String, usize, String)> = repo
        .screens()
        .flat_map(|s| {
            s.captions
                .iter()
                .enumerate()
                .filter(|(_, c)| !c.trim().is_empty())
                .map(move |(i, c)| (s.screen_id.clone(), i, c.clone()))
        })
        .filter(|(id, i, _)| !index.contains(id, *i))
        .collect();

    let batches: Vec<&[(String, usize, String)]> = pending.chunks(options.batch_size.max(1)).collect();
    for wave in batches.chunks(options.parallelism.max(1)) {
        let results: Vec<Result<Vec<EmbeddingVector<T>>, RetrievalError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = wave
                .iter()
                .map(|batch| {
                    scope.spawn(move || {
                        let texts: Vec<String> = batch.iter().map(|(_, _, c)| c.clone()).collect();
                        embed::<T>(provider, &texts)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("embedding worker panicked"))
                .collect()
        });
        for (batch, result) in wave.iter().zip(results) {
            let vectors = match result {
                Ok(v) => v,
                Err(source) => {
                    index.sort();
                    return Err(IndexBuildError {
                        source,
                        partial: index,
                    });
                }
            };
            for ((screen_id, ordinal, _), vector) in batch.iter().zip(vectors) {
                let entry = IndexEntry {
                    screen_id: screen_id.clone(),
                    caption_ordinal: *ordinal,
                    vector,
                };
                if let Err(source) = index.insert(entry) {
                    index.sort();
                    return Err(IndexBuildError {
                        source,
                        partial: index,
                    });
                }
            }
        }
    }
    index.sort();
    Ok(index)
}
