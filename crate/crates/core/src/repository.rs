//! GUI repository: ingestion of line-delimited screen and caption records, the
//! quality-filtering pipeline, and archive persistence.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::ImageData;

#[derive(Debug, Error)]
pub enum RepositoryError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Unwritable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed repository archive {path}: {message}")]
    Archive { path: String, message: String },
    #[error("screenshot of {screen_id} unavailable: {message}")]
    Screenshot { screen_id: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentNode {
    #[serde(rename = "type")]
    pub component_type: String,
    /// left, top, right, bottom in screen pixels
    pub bounds: [u32; 4],
    #[serde(default)]
    pub children: Vec<ComponentNode>,
}

impl ComponentNode {
    pub fn leaf(component_type: &str) -> Self {
        Self {
            component_type: component_type.to_string(),
            bounds: [0, 0, 0, 0],
            children: Vec::new(),
        }
    }

    pub fn with_children(mut self, children: Vec<ComponentNode>) -> Self {
        self.children = children;
        self
    }

    /// Pre-order traversal.
    pub fn iter(&self) -> impl Iterator<Item = &ComponentNode> {
        let mut stack = vec![self];
        std::iter::from_fn(move || {
            let node = stack.pop()?;
            stack.extend(node.children.iter().rev());
            Some(node)
        })
    }

    pub fn node_count(&self) -> usize {
        self.iter().count()
    }

    fn check(&self) -> Result<(), String> {
        for node in self.iter() {
            if node.component_type.trim().is_empty() {
                return Err("node without component type".into());
            }
            let [l, t, r, b] = node.bounds;
            if l > r || t > b {
                return Err(format!("inverted bounds {:?}", node.bounds));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuiScreen {
    pub screen_id: String,
    /// File path, or an inline `data:<media>;base64,...` reference.
    pub screenshot: String,
    pub hierarchy: ComponentNode,
    #[serde(default)]
    pub captions: Vec<String>,
    #[serde(default)]
    pub app_package: String,
    #[serde(default)]
    pub flags: BTreeSet<String>,
}

impl GuiScreen {
    /// A screen with a single root node and no captions.
    pub fn new(screen_id: impl Into<String>, screenshot: impl Into<String>) -> Self {
        Self {
            screen_id: screen_id.into(),
            screenshot: screenshot.into(),
            hierarchy: ComponentNode::leaf("Root"),
            captions: Vec::new(),
            app_package: String::new(),
            flags: BTreeSet::new(),
        }
    }

    pub fn component_type_count(&self) -> usize {
        component_type_count(self)
    }

    /// Loads the screenshot bytes.
    pub fn load_screenshot(&self) -> Result<ImageData, RepositoryError> {
        let err = |message: String| RepositoryError::Screenshot {
            screen_id: self.screen_id.clone(),
            message,
        };
        if let Some(rest) = self.screenshot.strip_prefix("data:") {
            let (media, payload) = rest
                .split_once(";base64,")
                .ok_or_else(|| err("inline screenshot is not base64 data".into()))?;
            let bytes = base64::engine::general_purpose::STANDARD
                .decode(payload)
                .map_err(|e| err(e.to_string()))?;
            return Ok(ImageData::new(media, bytes));
        }
        let bytes = fs::read(&self.screenshot).map_err(|e| err(format!("{}: {e}", self.screenshot)))?;
        Ok(ImageData::new(media_type_for(&self.screenshot), bytes))
    }
}

fn media_type_for(path: &str) -> &'static str {
    let ext = Path::new(path)
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        Some("gif") => "image/gif",
        Some("svg") => "image/svg+xml",
        _ => "image/png",
    }
}

/// Number of distinct component-type labels in the screen's hierarchy.
pub fn component_type_count(screen: &GuiScreen) -> usize {
    screen
        .hierarchy
        .iter()
        .map(|n| n.component_type.as_str())
        .collect::<BTreeSet<_>>()
        .len()
}

/// Immutable collection of screens keyed by id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Repository {
    screens: BTreeMap<String, GuiScreen>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub records: usize,
    pub accepted: usize,
    pub skipped: usize,
    /// One message per skipped record, with file and line.
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionReport {
    pub appended: usize,
    pub unknown_screen: usize,
    pub malformed: usize,
}

#[derive(Deserialize)]
struct ScreenRecord {
    screen_id: String,
    screenshot_path: String,
    hierarchy: ComponentNode,
    #[serde(default)]
    app_package: String,
    #[serde(default)]
    flags: Vec<String>,
}

#[derive(Deserialize)]
struct CaptionRecord {
    screen_id: String,
    caption: String,
}

fn unreadable(path: &Path) -> impl FnOnce(std::io::Error) -> RepositoryError + '_ {
    move |source| RepositoryError::Unreadable {
        path: path.display().to_string(),
        source,
    }
}

/// A directory expands to its `*.jsonl` / `*.json` files in name order.
fn record_files(source: &Path) -> Result<Vec<PathBuf>, RepositoryError> {
    let meta = fs::metadata(source).map_err(unreadable(source))?;
    if meta.is_file() {
        return Ok(vec![source.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(source)
        .map_err(unreadable(source))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("jsonl" | "json" | "ndjson")
                )
        })
        .collect();
    files.sort();
    Ok(files)
}

impl Repository {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a repository from in-memory screens. Later duplicates of a
    /// screen id replace earlier ones.
    pub fn from_screens(screens: impl IntoIterator<Item = GuiScreen>) -> Self {
        Self {
            screens: screens
                .into_iter()
                .map(|s| (s.screen_id.clone(), s))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.screens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.screens.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&GuiScreen> {
        self.screens.get(id)
    }

    /// Screens in ascending id order.
    pub fn screens(&self) -> impl Iterator<Item = &GuiScreen> {
        self.screens.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.screens.keys().map(String::as_str)
    }

    /// Reads line-delimited screen records from a file or a directory of
    /// files. Malformed lines are skipped and reported; an unreadable source
    /// is an error. Relative screenshot paths resolve against the record
    /// file's directory.
    pub fn ingest_screens(source: &Path) -> Result<(Self, IngestReport), RepositoryError> {
        let mut repo = Repository::new();
        let mut report = IngestReport::default();
        for file in record_files(source)? {
            let text = fs::read_to_string(&file).map_err(unreadable(&file))?;
            let base = file.parent().map(Path::to_path_buf).unwrap_or_default();
            for (lineno, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                report.records += 1;
                let mut skip = |why: String| {
                    let msg = format!("{}:{}: {why}", file.display(), lineno + 1);
                    log::warn!("skipping screen record {msg}");
                    report.warnings.push(msg);
                    report.skipped += 1;
                };
                let rec: ScreenRecord = match serde_json::from_str(line) {
                    Ok(r) => r,
                    Err(e) => {
                        skip(e.to_string());
                        continue;
                    }
                };
                if rec.screen_id.trim().is_empty() {
                    skip("empty screen_id".into());
                    continue;
                }
                if let Err(why) = rec.hierarchy.check() {
                    skip(why);
                    continue;
                }
                if repo.screens.contains_key(&rec.screen_id) {
                    skip(format!("duplicate screen_id {}", rec.screen_id));
                    continue;
                }
                let screenshot = if rec.screenshot_path.starts_with("data:")
                    || Path::new(&rec.screenshot_path).is_absolute()
                {
                    rec.screenshot_path
                } else {
                    base.join(&rec.screenshot_path).display().to_string()
                };
                repo.screens.insert(
                    rec.screen_id.clone(),
                    GuiScreen {
                        screen_id: rec.screen_id,
                        screenshot,
                        hierarchy: rec.hierarchy,
                        captions: Vec::new(),
                        app_package: rec.app_package,
                        flags: rec.flags.into_iter().collect(),
                    },
                );
                report.accepted += 1;
            }
        }
        Ok((repo, report))
    }

    /// Appends captions to matching screens. Captions for unknown ids are
    /// dropped and counted; duplicates are kept.
    pub fn ingest_captions(self, source: &Path) -> Result<(Self, CaptionReport), RepositoryError> {
        let mut repo = self;
        let mut report = CaptionReport::default();
        for file in record_files(source)? {
            let text = fs::read_to_string(&file).map_err(unreadable(&file))?;
            for (lineno, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CaptionRecord = match serde_json::from_str(line) {
                    Ok(r) => r,
                    Err(e) => {
                        log::warn!("skipping caption {}:{}: {e}", file.display(), lineno + 1);
                        report.malformed += 1;
                        continue;
                    }
                };
                if rec.caption.trim().is_empty() {
                    report.malformed += 1;
                    continue;
                }
                match repo.screens.get_mut(&rec.screen_id) {
                    Some(screen) => {
                        screen.captions.push(rec.caption);
                        report.appended += 1;
                    }
                    None => report.unknown_screen += 1,
                }
            }
        }
        Ok((repo, report))
    }

    /// Keeps the screens that satisfy every rule.
    pub fn filter(&self, rules: &FilterRules) -> (Repository, FilterReport) {
        let mut report = FilterReport {
            input_count: self.len(),
            ..FilterReport::default()
        };
        let mut kept = BTreeMap::new();
        for screen in self.screens() {
            let violations = rules.violations(screen);
            for rule in &violations {
                *report.per_rule_exclusions.entry(rule.to_string()).or_default() += 1;
            }
            if violations.is_empty() {
                kept.insert(screen.screen_id.clone(), screen.clone());
            }
        }
        report.retained_count = kept.len();
        (Repository { screens: kept }, report)
    }

    pub fn save(&self, path: &Path) -> Result<(), RepositoryError> {
        let archive = Archive {
            format: ARCHIVE_FORMAT.into(),
            version: ARCHIVE_VERSION,
            screens: self.screens.values().cloned().collect(),
        };
        let bytes = serde_json::to_vec(&archive).expect("repository serializes");
        crate::htmlio::write_atomic(path, &bytes).map_err(|e| RepositoryError::Unwritable {
            path: path.display().to_string(),
            source: std::io::Error::other(e.to_string()),
        })
    }

    pub fn load(path: &Path) -> Result<Self, RepositoryError> {
        let text = fs::read_to_string(path).map_err(unreadable(path))?;
        let bad = |message: String| RepositoryError::Archive {
            path: path.display().to_string(),
            message,
        };
        let archive: Archive = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        if archive.format != ARCHIVE_FORMAT {
            return Err(bad(format!("unexpected format tag {}", archive.format)));
        }
        if archive.version != ARCHIVE_VERSION {
            return Err(bad(format!("unsupported version {}", archive.version)));
        }
        let mut screens = BTreeMap::new();
        for s in archive.screens {
            if screens.contains_key(&s.screen_id) {
                return Err(bad(format!("duplicate screen_id {}", s.screen_id)));
            }
            screens.insert(s.screen_id.clone(), s);
        }
        Ok(Repository { screens })
    }
}

const ARCHIVE_FORMAT: &str = "protogen-repository";
const ARCHIVE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Archive {
    format: String,
    version: u32,
    screens: Vec<GuiScreen>,
}

/// Quality rules. The default rule set keeps everything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterRules {
    /// Minimum number of distinct component types; 0 disables the rule.
    #[serde(default)]
    pub min_component_types: usize,
    /// Screens carrying any of these flags are excluded.
    #[serde(default)]
    pub excluded_flags: BTreeSet<String>,
    #[serde(default)]
    pub require_caption: bool,
}

/// Flag used for screens with an overlaying menu.
pub const OVERLAY_MENU_FLAG: &str = "overlay-menu";

impl FilterRules {
    /// Rules for the retrieval repository: drop overlay menus, require a
    /// caption to match against.
    pub fn retrieval() -> Self {
        Self {
            min_component_types: 0,
            excluded_flags: [OVERLAY_MENU_FLAG.to_string()].into_iter().collect(),
            require_caption: true,
        }
    }

    /// Rules for sampling descriptions: at least seven distinct component
    /// types.
    pub fn description_dataset() -> Self {
        Self {
            min_component_types: 7,
            ..Self::retrieval()
        }
    }

    fn violations(&self, screen: &GuiScreen) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.min_component_types > 0 && component_type_count(screen) < self.min_component_types {
            v.push("min_component_types");
        }
        if screen.flags.iter().any(|f| self.excluded_flags.contains(f)) {
            v.push("excluded_flags");
        }
        if self.require_caption && screen.captions.is_empty() {
            v.push("require_caption");
        }
        v
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input_count: usize,
    pub retained_count: usize,
    /// A screen violating several rules is counted under each.
    pub per_rule_exclusions: BTreeMap<String, usize>,
}

/// Free-function form of [`Repository::filter`].
pub fn filter_pipeline(repo: &Repository, rules: &FilterRules) -> (Repository, FilterReport) {
    repo.filter(rules)
}
