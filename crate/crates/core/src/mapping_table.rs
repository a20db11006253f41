//! Abbreviation/expansion dictionaries and the ambiguity filter.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::Serialize;

use crate::error::{Error, Result};

/// One abbreviation/expansion pair.
///
/// The expansion is stored normalized: lowercase, single spaces between words.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Mapping {
    abbreviation: String,
    expansion: String,
}

impl Mapping {
    pub fn new(abbreviation: &str, expansion: &str) -> Result<Self, String> {
        let abbreviation = abbreviation.trim();
        if abbreviation.is_empty() {
            return Err("empty abbreviation".into());
        }
        if abbreviation.chars().any(char::is_whitespace) {
            return Err(format!("abbreviation {abbreviation:?} contains whitespace"));
        }
        let expansion = normalize_expansion(expansion);
        if expansion.is_empty() {
            return Err("empty expansion".into());
        }
        Ok(Self {
            abbreviation: abbreviation.to_string(),
            expansion,
        })
    }

    pub fn abbreviation(&self) -> &str {
        &self.abbreviation
    }

    pub fn expansion(&self) -> &str {
        &self.expansion
    }

    pub fn expansion_words(&self) -> impl Iterator<Item = &str> {
        self.expansion.split(' ')
    }
}

pub fn normalize_expansion(raw: &str) -> String {
    raw.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FilterMode {
    /// Both discard rules evaluated once against the input table.
    #[default]
    OnePass,
    /// Repeat the one-pass filter until nothing changes.
    Fixpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MappingStats {
    pub pair_count: usize,
    pub abbreviation_count: usize,
    pub mean_expansions_per_abbreviation: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MappingTable {
    entries: BTreeSet<Mapping>,
    by_abbreviation: BTreeMap<String, Vec<String>>,
    by_expansion: BTreeMap<String, Vec<String>>,
}

impl FromIterator<Mapping> for MappingTable {
    fn from_iter<I: IntoIterator<Item = Mapping>>(iter: I) -> Self {
        let entries: BTreeSet<Mapping> = iter.into_iter().collect();
        let mut by_abbreviation: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut by_expansion: BTreeMap<String, Vec<String>> = BTreeMap::new();
        // entries iterate in (abbreviation, expansion) order, so both index
        // lists come out sorted.
        for m in &entries {
            by_abbreviation
                .entry(m.abbreviation.clone())
                .or_default()
                .push(m.expansion.clone());
            by_expansion
                .entry(m.expansion.clone())
                .or_default()
                .push(m.abbreviation.clone());
        }
        Self {
            entries,
            by_abbreviation,
            by_expansion,
        }
    }
}

impl MappingTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Mapping> {
        self.entries.iter()
    }

    pub fn contains(&self, abbreviation: &str, expansion: &str) -> bool {
        self.by_abbreviation
            .get(abbreviation)
            .is_some_and(|e| e.binary_search_by(|x| x.as_str().cmp(expansion)).is_ok())
    }

    pub fn expansions_of(&self, abbreviation: &str) -> &[String] {
        self.by_abbreviation
            .get(abbreviation)
            .map_or(&[], Vec::as_slice)
    }

    pub fn abbreviations_of(&self, expansion: &str) -> &[String] {
        self.by_expansion.get(expansion).map_or(&[], Vec::as_slice)
    }

    pub fn abbreviation_count(&self) -> usize {
        self.by_abbreviation.len()
    }

    /// Whether every abbreviation has at least two expansions and every
    /// expansion belongs to exactly one abbreviation.
    pub fn is_valid_filtered(&self) -> bool {
        self.by_abbreviation.values().all(|e| e.len() >= 2)
            && self.by_expansion.values().all(|a| a.len() == 1)
    }

    /// Drops pairs whose abbreviation has a single expansion or whose
    /// expansion is shared by several abbreviations.
    pub fn filter_ambiguous(&self, mode: FilterMode) -> MappingTable {
        let mut current = self.filter_once();
        if mode == FilterMode::Fixpoint {
            loop {
                let next = current.filter_once();
                if next.len() == current.len() {
                    break;
                }
                current = next;
            }
        }
        current
    }

    fn filter_once(&self) -> MappingTable {
        self.entries
            .iter()
            .filter(|m| {
                self.by_abbreviation[&m.abbreviation].len() >= 2
                    && self.by_expansion[&m.expansion].len() == 1
            })
            .cloned()
            .collect()
    }

    pub fn stats(&self) -> MappingStats {
        let pair_count = self.len();
        let abbreviation_count = self.abbreviation_count();
        let mean = if abbreviation_count == 0 {
            0.0
        } else {
            pair_count as f64 / abbreviation_count as f64
        };
        MappingStats {
            pair_count,
            abbreviation_count,
            mean_expansions_per_abbreviation: mean,
        }
    }

    /// Writes `ABBREV\tEXPANSION\n` lines sorted by (abbreviation, expansion).
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for m in &self.entries {
            writeln!(out, "{}\t{}", m.abbreviation, m.expansion)?;
        }
        out.flush()
    }

    pub fn to_tsv(&self) -> String {
        let mut buf = Vec::new();
        self.write_tsv(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("table contents are UTF-8")
    }
}

/// Reads a tab-separated dictionary: abbreviation, expansion, then any
/// number of ignored fields. Blank lines are skipped.
pub fn load_mappings<R: BufRead>(source: R) -> Result<MappingTable> {
    let mut entries = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(abbrev), Some(expansion)) = (fields.next(), fields.next()) else {
            return Err(Error::MalformedRecord {
                line: idx + 1,
                reason: "expected at least 2 tab-separated fields".into(),
            });
        };
        let mapping = Mapping::new(abbrev, expansion).map_err(|reason| Error::MalformedRecord {
            line: idx + 1,
            reason,
        })?;
        entries.push(mapping);
    }
    Ok(entries.into_iter().collect())
}
