use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

use super::HtmlError;
use crate::session::GenerationTrace;
use crate::strategies::Prototype;

pub const PROTOTYPE_FILE: &str = "prototype.html";
pub const TRACE_FILE: &str = "trace.json";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredPaths {
    pub html: PathBuf,
    pub trace: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HtmlError + '_ {
    move |source| HtmlError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn staged(dir: &Path, bytes: &[u8]) -> Result<NamedTempFile, HtmlError> {
    let mut tmp = NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(tmp.path()))?;
    tmp.as_file().sync_all().map_err(io_err(dir))?;
    Ok(tmp)
}

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// so readers see either the old or the new content.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HtmlError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let tmp = staged(dir, bytes)?;
    tmp.persist(path).map_err(|e| io_err(path)(e.error))?;
    Ok(())
}

/// `<out>/<nlr_id>/<strategy>[-k<k>]`.
pub fn prototype_dir(out: &Path, nlr_id: &str, strategy: &str, k: Option<u32>) -> PathBuf {
    let leaf = match k {
        Some(k) => format!("{strategy}-k{k}"),
        None => strategy.to_string(),
    };
    out.join(nlr_id).join(leaf)
}

/// Writes `prototype.html` (the exact document bytes) and `trace.json` into
/// `dir`. Both files are staged before either is moved into place.
pub fn store_prototype(prototype: &Prototype, dir: &Path) -> Result<StoredPaths, HtmlError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let paths = StoredPaths {
        html: dir.join(PROTOTYPE_FILE),
        trace: dir.join(TRACE_FILE),
    };
    let trace_json = serde_json::to_vec_pretty(&prototype.trace)?;
    let html_tmp = staged(dir, prototype.html.text().as_bytes())?;
    let trace_tmp = staged(dir, &trace_json)?;
    html_tmp
        .persist(&paths.html)
        .map_err(|e| io_err(&paths.html)(e.error))?;
    if let Err(e) = trace_tmp.persist(&paths.trace) {
        let _ = fs::remove_file(&paths.html);
        return Err(io_err(&paths.trace)(e.error));
    }
    Ok(paths)
}

pub fn read_trace(path: &Path) -> Result<GenerationTrace, HtmlError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(serde_json::from_slice(&bytes)?)
}
