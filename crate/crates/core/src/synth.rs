//! Deterministic synthetic corpora with planted expansions.
//!
//! Filler words, expansion words and abbreviations come from disjoint
//! vocabularies, and planted expansions are always separated by filler, so
//! the expected matches of every document are known exactly. Each document
//! is a pure function of `(seed, ordinal)` and can be generated lazily.

use std::collections::HashSet;
use std::io::Write;

use serde::Serialize;

use crate::corpus_io::Document;
use crate::mapping_table::{Mapping, MappingTable};
use crate::rng::{derive_seed, SplitMix64};

const CONSONANTS: &[u8] = b"bcdfghklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

fn pseudo_word(rng: &mut SplitMix64, syllables: usize) -> String {
    let mut w = String::with_capacity(syllables * 2);
    for _ in 0..syllables {
        w.push(CONSONANTS[rng.below(CONSONANTS.len() as u64) as usize] as char);
        w.push(VOWELS[rng.below(VOWELS.len() as u64) as usize] as char);
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CorpusParams {
    pub documents: u64,
    /// Approximate words per document, planted expansions included.
    pub words_per_document: usize,
    /// Planted expansions per document are drawn uniformly from this range.
    pub min_plants: usize,
    pub max_plants: usize,
    pub abbreviations: usize,
    /// Expansions per abbreviation are drawn uniformly from `2..=max`.
    pub max_expansions: usize,
    pub seed: u64,
}

impl Default for CorpusParams {
    fn default() -> Self {
        Self {
            documents: 1000,
            words_per_document: 80,
            min_plants: 0,
            max_plants: 6,
            abbreviations: 60,
            max_expansions: 5,
            seed: 7,
        }
    }
}

/// Vocabularies and mapping table behind a synthetic corpus.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub params: CorpusParams,
    table: MappingTable,
    expansions: Vec<Mapping>,
    filler: Vec<String>,
}

impl SyntheticCorpus {
    pub fn new(params: CorpusParams) -> Self {
        let mut rng = SplitMix64::new(derive_seed(params.seed, b"vocabulary"));
        let mut used = HashSet::new();
        // A collision lengthens the next attempt, so short words can run out.
        let mut fresh = |rng: &mut SplitMix64, mut syllables: usize| loop {
            let w = pseudo_word(rng, syllables);
            if used.insert(w.clone()) {
                return w;
            }
            syllables += 1;
        };
        let filler: Vec<String> = (0..2000)
            .map(|_| {
                let syl = 1 + rng.below(3) as usize;
                fresh(&mut rng, syl)
            })
            .collect();

        let mut expansions = Vec::new();
        for a in 0..params.abbreviations {
            let abbrev = format!("{}{}", ["A", "C", "D", "H", "M", "P", "R", "T"][a % 8], a);
            let k = 2 + rng.below(params.max_expansions.max(2) as u64 - 1) as usize;
            for _ in 0..k {
                let words: Vec<String> = (0..1 + rng.below(3))
                    .map(|_| {
                        let syl = 2 + rng.below(3) as usize;
                        fresh(&mut rng, syl)
                    })
                    .collect();
                expansions.push(
                    Mapping::new(&abbrev, &words.join(" ")).expect("valid synthetic mapping"),
                );
            }
        }
        let table = expansions.iter().cloned().collect();
        Self {
            params,
            table,
            expansions,
            filler,
        }
    }

    /// Already satisfies the filtered-table invariants.
    pub fn table(&self) -> &MappingTable {
        &self.table
    }

    /// The document at `ordinal` and the planted expansions it contains, in
    /// order.
    pub fn document_with_plants(&self, ordinal: u64) -> (Document, Vec<&Mapping>) {
        let params = &self.params;
        let mut rng = SplitMix64::new(derive_seed(params.seed, ordinal.to_string().as_bytes()));
        let span = (params.max_plants - params.min_plants + 1) as u64;
        let plants = params.min_plants + rng.below(span) as usize;
        let mut chosen = Vec::with_capacity(plants);
        for _ in 0..plants {
            // Squaring a uniform skews class frequencies towards low indices.
            let u = rng.below(1 << 20) as f64 / (1u64 << 20) as f64;
            let idx = ((u * u) * self.expansions.len() as f64) as usize;
            chosen.push(&self.expansions[idx.min(self.expansions.len() - 1)]);
        }
        let planted_words: usize = chosen.iter().map(|m| m.expansion_words().count()).sum();
        let filler_words = params
            .words_per_document
            .saturating_sub(planted_words)
            .max(plants + 1);
        // One plant may follow each filler slot; slots are distinct so plants
        // never touch.
        let mut slots: Vec<usize> = (0..filler_words).collect();
        for i in 0..plants.min(filler_words) {
            let j = i + rng.below((filler_words - i) as u64) as usize;
            slots.swap(i, j);
        }
        let mut after: Vec<Option<&Mapping>> = vec![None; filler_words];
        for (slot, m) in slots.iter().zip(&chosen) {
            after[*slot] = Some(m);
        }
        let planted: Vec<&Mapping> = after.iter().flatten().copied().collect();

        let mut text = String::with_capacity(params.words_per_document * 8);
        let mut sentence_start = true;
        for (i, next) in after.iter().enumerate() {
            if i > 0 {
                text.push(' ');
            }
            let w = &self.filler[rng.below(self.filler.len() as u64) as usize];
            if sentence_start {
                let mut c = w.chars();
                let first = c.next().expect("non-empty word");
                text.extend(first.to_uppercase());
                text.push_str(c.as_str());
                sentence_start = false;
            } else {
                text.push_str(w);
            }
            if let Some(m) = next {
                text.push(' ');
                if rng.below(4) == 0 {
                    // Mixed case exercises case-insensitive matching.
                    text.push_str(&m.expansion().to_uppercase());
                } else {
                    text.push_str(m.expansion());
                }
            }
            match rng.below(12) {
                0 => text.push(','),
                1 if i + 1 < after.len() => {
                    text.push('.');
                    sentence_start = true;
                }
                _ => {}
            }
        }
        text.push('.');
        let doc = Document {
            id: format!("syn-{ordinal}"),
            ordinal,
            text,
        };
        (doc, planted)
    }

    pub fn document(&self, ordinal: u64) -> Document {
        self.document_with_plants(ordinal).0
    }

    pub fn documents(&self) -> impl Iterator<Item = Document> + '_ {
        (0..self.params.documents).map(|i| self.document(i))
    }

    /// Writes the corpus as `{"id", "text"}` JSONL.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<u64> {
        #[derive(Serialize)]
        struct Row<'a> {
            id: &'a str,
            text: &'a str,
        }
        for doc in self.documents() {
            serde_json::to_writer(
                &mut out,
                &Row {
                    id: &doc.id,
                    text: &doc.text,
                },
            )?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(self.params.documents)
    }
}
