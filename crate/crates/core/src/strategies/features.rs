use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub description: String,
    pub frequency: u32,
}

/// Features ordered by frequency (descending) then name; names are unique
/// case-insensitively.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureCollection {
    features: Vec<Feature>,
}

fn key(name: &str) -> String {
    name.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Strips a list marker (`-`, `*`, `•`, `1.`, `2)`); `None` if the line is not
/// a list item.
fn list_item(line: &str) -> Option<&str> {
    let t = line.trim();
    for bullet in ["- ", "* ", "• ", "+ "] {
        if let Some(rest) = t.strip_prefix(bullet) {
            return Some(rest.trim());
        }
    }
    let digits = t.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            return Some(r.trim());
        }
    }
    None
}

/// Splits `name: description` (also `name - description`), removing markdown
/// emphasis around the name.
fn split_item(item: &str) -> (String, String) {
    let (name, desc) = match item.split_once(':') {
        Some((n, d)) => (n, d),
        None => match item.split_once(" - ").or_else(|| item.split_once(" – ")) {
            Some((n, d)) => (n, d),
            None => (item, ""),
        },
    };
    let name = name.trim().trim_matches(['*', '_', '`']).trim();
    let desc = desc.trim().trim_start_matches(['*', '_']).trim();
    (name.to_string(), desc.to_string())
}

/// `name (3)`, `name (x3)`, `name (3x)`, `name [3]` → (`name`, 3).
fn split_frequency(name: &str) -> (String, Option<u32>) {
    let t = name.trim();
    for (open, close) in [('(', ')'), ('[', ']')] {
        if let Some(stripped) = t.strip_suffix(close) {
            if let Some(pos) = stripped.rfind(open) {
                let inner = stripped[pos + 1..]
                    .trim()
                    .trim_start_matches(['x', '×'])
                    .trim_end_matches(['x', '×'])
                    .trim();
                if let Ok(n) = inner.parse::<u32>() {
                    return (stripped[..pos].trim().to_string(), Some(n));
                }
            }
        }
    }
    (t.to_string(), None)
}

impl FeatureCollection {
    /// Merges duplicate names (summing frequencies, keeping the first
    /// description) and sorts.
    pub fn new(features: impl IntoIterator<Item = Feature>) -> Self {
        let mut merged: BTreeMap<String, Feature> = BTreeMap::new();
        for f in features {
            if f.name.trim().is_empty() || f.frequency == 0 {
                continue;
            }
            let k = key(&f.name);
            match merged.get_mut(&k) {
                Some(existing) => {
                    existing.frequency += f.frequency;
                    if existing.description.is_empty() {
                        existing.description = f.description;
                    }
                }
                None => {
                    merged.insert(k, f);
                }
            }
        }
        let mut features: Vec<(String, Feature)> = merged.into_iter().collect();
        features.sort_by(|(ka, a), (kb, b)| b.frequency.cmp(&a.frequency).then_with(|| ka.cmp(kb)));
        Self {
            features: features.into_iter().map(|(_, f)| f).collect(),
        }
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn total_frequency(&self) -> u32 {
        self.features.iter().map(|f| f.frequency).sum()
    }

    pub fn names(&self) -> Vec<&str> {
        self.features.iter().map(|f| f.name.as_str()).collect()
    }

    /// Parses a bulleted `- name: description` list; every item gets
    /// frequency 1 before merging. Fails when no list item is present.
    pub fn parse_list(raw: &str) -> Result<Self, String> {
        let items: Vec<Feature> = raw
            .lines()
            .filter_map(list_item)
            .map(split_item)
            .filter(|(n, _)| !n.is_empty())
            .map(|(name, description)| Feature {
                name,
                description,
                frequency: 1,
            })
            .collect();
        if items.is_empty() {
            return Err("no feature list items found".into());
        }
        Ok(Self::new(items))
    }

    /// Parses an aggregated `- name (frequency): description` list whose
    /// frequencies must sum to `expected_total`.
    pub fn parse_aggregate(raw: &str, expected_total: u32) -> Result<Self, String> {
        let mut items = Vec::new();
        for item in raw.lines().filter_map(list_item) {
            let (name, description) = split_item(item);
            let (name, freq) = split_frequency(&name);
            let Some(frequency) = freq else {
                return Err(format!("feature {name:?} has no frequency"));
            };
            if !name.is_empty() && frequency > 0 {
                items.push(Feature {
                    name,
                    description,
                    frequency,
                });
            }
        }
        if items.is_empty() && expected_total > 0 {
            return Err("no aggregated feature items found".into());
        }
        let c = Self::new(items);
        if c.total_frequency() != expected_total {
            return Err(format!(
                "frequencies sum to {}, expected {expected_total}",
                c.total_frequency()
            ));
        }
        Ok(c)
    }

    /// Deterministic aggregation by case-insensitive exact name.
    pub fn merge_exact(collections: &[FeatureCollection]) -> Self {
        Self::new(collections.iter().flat_map(|c| c.features.iter().cloned()))
    }

    /// `- name: description` lines.
    pub fn render_list(&self) -> String {
        self.features
            .iter()
            .map(|f| {
                if f.description.is_empty() {
                    format!("- {}", f.name)
                } else {
                    format!("- {}: {}", f.name, f.description)
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// `- name (frequency): description` lines.
    pub fn render_ranked(&self) -> String {
        self.features
            .iter()
            .map(|f| format!("- {} ({}): {}", f.name, f.frequency, f.description).trim_end_matches([':', ' ']).to_string())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_bullets_and_numbers() {
        let raw = "Here are the features:\n- Search bar: find items\n2. **Cart**: shows items\n* Filters - narrow results\n";
        let c = FeatureCollection::parse_list(raw).unwrap();
        assert_eq!(c.len(), 3);
        assert!(c.features().iter().all(|f| f.frequency == 1));
        assert_eq!(c.names(), vec!["Cart", "Filters", "Search bar"]);
    }

    #[test]
    fn duplicates_merge() {
        let c = FeatureCollection::parse_list("- Login: a\n- login: b\n- Help: c").unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.features()[0].name, "Login");
        assert_eq!(c.features()[0].frequency, 2);
        assert_eq!(c.features()[0].description, "a");
    }

    #[test]
    fn empty_list_is_error() {
        assert!(FeatureCollection::parse_list("Nothing to list.").is_err());
    }

    #[test]
    fn aggregate_with_frequencies() {
        let c = FeatureCollection::parse_aggregate("- Search bar (2): top\n- Map (x1): map view", 3).unwrap();
        assert_eq!(c.names(), vec!["Search bar", "Map"]);
        assert!(FeatureCollection::parse_aggregate("- Search bar (2): top", 3).is_err());
        assert!(FeatureCollection::parse_aggregate("- Search bar: top", 1).is_err());
    }

    #[test]
    fn exact_merge_fallback() {
        let ab = FeatureCollection::parse_list("- a\n- b").unwrap();
        let bc = FeatureCollection::parse_list("- b\n- c").unwrap();
        let m = FeatureCollection::merge_exact(&[ab, bc]);
        assert_eq!(m.names(), vec!["b", "a", "c"]);
        assert_eq!(m.total_frequency(), 4);
    }

    #[test]
    fn ranked_render_round_trips() {
        let c = FeatureCollection::parse_aggregate("- x (3): d\n- y (1)", 4).unwrap();
        let again = FeatureCollection::parse_aggregate(&c.render_ranked(), 4).unwrap();
        assert_eq!(c, again);
    }
}
