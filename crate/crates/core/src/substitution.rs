//! Tokenization, expansion matching and reverse substitution.

use std::borrow::Cow;
use std::collections::HashMap;

use crate::corpus_io::{AbbrevSample, Document};
use crate::error::{invalid, Result};
use crate::mapping_table::{Mapping, MappingTable};
use crate::rng::{derive_seed, SplitMix64};

/// A document split into tokens. Tokens are byte ranges into the original
/// text, so separators (punctuation, whitespace) stay recoverable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedDoc {
    pub doc: Document,
    spans: Vec<(usize, usize)>,
}

#[inline]
fn is_joiner(c: char) -> bool {
    c == '-' || c == '\''
}

/// Byte spans of maximal alphanumeric runs, where a hyphen or apostrophe
/// between two alphanumerics stays inside the token.
pub fn token_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some((start, c)) = chars.next() {
        if !c.is_alphanumeric() {
            continue;
        }
        let mut end = start + c.len_utf8();
        while let Some(&(i, c)) = chars.peek() {
            if c.is_alphanumeric() {
                end = i + c.len_utf8();
                chars.next();
            } else if is_joiner(c) {
                let after = text[i + c.len_utf8()..].chars().next();
                if after.is_some_and(char::is_alphanumeric) {
                    chars.next();
                    end = i + c.len_utf8();
                } else {
                    break;
                }
            } else {
                break;
            }
        }
        spans.push((start, end));
    }
    spans
}

pub fn tokenize(doc: Document) -> TokenizedDoc {
    let spans = token_spans(&doc.text);
    TokenizedDoc { doc, spans }
}

/// Tokenizes a bare string, for callers that only need the words.
pub fn tokenize_str(text: &str) -> Vec<&str> {
    token_spans(text)
        .into_iter()
        .map(|(s, e)| &text[s..e])
        .collect()
}

fn lowercase(token: &str) -> Cow<'_, str> {
    if token.is_ascii() {
        if token.bytes().any(|b| b.is_ascii_uppercase()) {
            Cow::Owned(token.to_ascii_lowercase())
        } else {
            Cow::Borrowed(token)
        }
    } else {
        Cow::Owned(token.to_lowercase())
    }
}

impl TokenizedDoc {
    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn token(&self, i: usize) -> &str {
        let (s, e) = self.spans[i];
        &self.doc.text[s..e]
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> + '_ {
        self.spans.iter().map(|&(s, e)| &self.doc.text[s..e])
    }

    pub fn token_starts(&self) -> impl Iterator<Item = usize> + '_ {
        self.spans.iter().map(|&(s, _)| s)
    }

    /// Lowercased copy of the token stream, as used for matching.
    pub fn lowered(&self) -> Vec<String> {
        self.tokens().map(|t| lowercase(t).into_owned()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchSpan<'a> {
    pub start: usize,
    pub length: usize,
    pub mapping: &'a Mapping,
}

const ROOT: u32 = 0;

/// Token-level trie over every expansion in a table.
///
/// Edges live in one hash map keyed by `(node, token id)`; a node is terminal
/// when some expansion ends there.
#[derive(Debug, Clone)]
pub struct ExpansionMatcher {
    vocab: HashMap<String, u32>,
    edges: HashMap<(u32, u32), u32>,
    terminal: Vec<Option<u32>>,
    mappings: Vec<Mapping>,
    max_len: usize,
}

impl ExpansionMatcher {
    pub fn new(table: &MappingTable) -> Self {
        let mut m = Self {
            vocab: HashMap::new(),
            edges: HashMap::new(),
            terminal: vec![None],
            mappings: Vec::new(),
            max_len: 0,
        };
        // Table order is (abbreviation, expansion), so the first mapping to
        // claim a token sequence has the smallest abbreviation.
        for mapping in table.iter() {
            let words: Vec<String> = tokenize_str(mapping.expansion())
                .into_iter()
                .map(|w| lowercase(w).into_owned())
                .collect();
            if words.is_empty() {
                continue;
            }
            let mut node = ROOT;
            for w in &words {
                let next_id = m.vocab.len() as u32;
                let id = *m.vocab.entry(w.clone()).or_insert(next_id);
                node = match m.edges.get(&(node, id)) {
                    Some(&child) => child,
                    None => {
                        let child = m.terminal.len() as u32;
                        m.terminal.push(None);
                        m.edges.insert((node, id), child);
                        child
                    }
                };
            }
            let slot = &mut m.terminal[node as usize];
            if slot.is_none() {
                *slot = Some(m.mappings.len() as u32);
                m.mappings.push(mapping.clone());
                m.max_len = m.max_len.max(words.len());
            }
        }
        m
    }

    pub fn pattern_count(&self) -> usize {
        self.mappings.len()
    }

    /// Left-to-right greedy longest match over the lowercased tokens.
    pub fn find_matches(&self, tdoc: &TokenizedDoc) -> Vec<MatchSpan<'_>> {
        let ids: Vec<Option<u32>> = tdoc
            .tokens()
            .map(|t| self.vocab.get(lowercase(t).as_ref()).copied())
            .collect();
        self.find_in_ids(&ids)
    }

    /// Same as [`find_matches`](Self::find_matches) over pre-lowered words.
    pub fn find_matches_in<S: AsRef<str>>(&self, words: &[S]) -> Vec<MatchSpan<'_>> {
        let ids: Vec<Option<u32>> = words
            .iter()
            .map(|w| self.vocab.get(w.as_ref()).copied())
            .collect();
        self.find_in_ids(&ids)
    }

    fn find_in_ids(&self, ids: &[Option<u32>]) -> Vec<MatchSpan<'_>> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < ids.len() {
            let mut node = ROOT;
            let mut best: Option<(usize, u32)> = None;
            for (offset, id) in ids[i..].iter().enumerate() {
                let Some(id) = id else { break };
                match self.edges.get(&(node, *id)) {
                    Some(&child) => node = child,
                    None => break,
                }
                if let Some(mapping) = self.terminal[node as usize] {
                    best = Some((offset + 1, mapping));
                }
            }
            match best {
                Some((length, mapping)) => {
                    out.push(MatchSpan {
                        start: i,
                        length,
                        mapping: &self.mappings[mapping as usize],
                    });
                    i += length;
                }
                None => i += 1,
            }
        }
        out
    }
}

/// `splitmix64(global_seed ^ fnv1a64(decimal ordinal))`.
pub fn per_document_seed(global_seed: u64, ordinal: u64) -> u64 {
    derive_seed(global_seed, ordinal.to_string().as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubstitutionConfig {
    probability: f64,
    pub global_seed: u64,
}

impl SubstitutionConfig {
    pub fn new(probability: f64, global_seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&probability) {
            return Err(invalid(format!(
                "substitution probability {probability} is outside [0, 1]"
            )));
        }
        Ok(Self {
            probability,
            global_seed,
        })
    }

    pub fn probability(&self) -> f64 {
        self.probability
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Substitution {
    /// Post-substitution tokens joined by single spaces.
    pub text: String,
    pub samples: Vec<AbbrevSample>,
}

/// Replaces each match with its abbreviation with probability `p`, one draw
/// per match in left-to-right order.
pub fn substitute(
    tdoc: &TokenizedDoc,
    matches: &[MatchSpan<'_>],
    cfg: &SubstitutionConfig,
) -> Substitution {
    let mut rng = SplitMix64::new(per_document_seed(cfg.global_seed, tdoc.doc.ordinal));
    let mut tokens: Vec<&str> = Vec::with_capacity(tdoc.len());
    let mut hits: Vec<(usize, &Mapping)> = Vec::new();
    let mut next = 0;
    for m in matches {
        tokens.extend((next..m.start).map(|i| tdoc.token(i)));
        if rng.bernoulli(cfg.probability) {
            hits.push((tokens.len(), m.mapping));
            tokens.push(m.mapping.abbreviation());
        } else {
            tokens.extend((m.start..m.start + m.length).map(|i| tdoc.token(i)));
        }
        next = m.start + m.length;
    }
    tokens.extend((next..tdoc.len()).map(|i| tdoc.token(i)));
    let text = tokens.join(" ");
    let samples = hits
        .into_iter()
        .map(|(location, mapping)| AbbrevSample {
            text: text.clone(),
            location,
            label: mapping.expansion().to_string(),
            abbreviation: mapping.abbreviation().to_string(),
            doc_id: tdoc.doc.id.clone(),
        })
        .collect();
    Substitution { text, samples }
}
