//! Order-preserving parallel reverse substitution over a document stream.
//!
//! Documents are read in fixed-size chunks, each chunk is processed on a
//! worker pool and the results are drained in input order. Every document
//! draws from its own seeded generator, so the output does not depend on the
//! number of workers.

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus_io::{AbbrevSample, Document};
use crate::error::{invalid, Result};
use crate::substitution::{substitute, tokenize, ExpansionMatcher, SubstitutionConfig};

pub const DEFAULT_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GenerateCounts {
    pub documents: u64,
    pub tokens: u64,
    pub matches: u64,
    pub samples: u64,
    pub documents_with_samples: u64,
}

/// Per-document result, in the order documents were read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentOutput {
    pub ordinal: u64,
    pub doc_id: String,
    pub tokens: usize,
    pub matches: usize,
    pub samples: Vec<AbbrevSample>,
}

pub fn process_document(
    doc: Document,
    matcher: &ExpansionMatcher,
    cfg: &SubstitutionConfig,
) -> DocumentOutput {
    let tdoc = tokenize(doc);
    let spans = matcher.find_matches(&tdoc);
    let sub = substitute(&tdoc, &spans, cfg);
    DocumentOutput {
        ordinal: tdoc.doc.ordinal,
        tokens: tdoc.len(),
        matches: spans.len(),
        samples: sub.samples,
        doc_id: tdoc.doc.id,
    }
}

pub struct Generator<'a> {
    matcher: &'a ExpansionMatcher,
    cfg: SubstitutionConfig,
    pool: Option<rayon::ThreadPool>,
    chunk: usize,
}

impl<'a> Generator<'a> {
    /// `workers == 1` runs inline without a pool.
    pub fn new(
        matcher: &'a ExpansionMatcher,
        cfg: SubstitutionConfig,
        workers: usize,
    ) -> Result<Self> {
        if workers == 0 {
            return Err(invalid("worker count must be at least 1"));
        }
        let pool = if workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .map_err(|e| invalid(format!("cannot start worker pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Self {
            matcher,
            cfg,
            pool,
            chunk: DEFAULT_CHUNK,
        })
    }

    pub fn with_chunk_size(mut self, chunk: usize) -> Self {
        self.chunk = chunk.max(1);
        self
    }

    /// Streams `docs` through substitution, handing each document's output to
    /// `sink` in input order.
    pub fn run<I, F>(&self, docs: I, mut sink: F) -> Result<GenerateCounts>
    where
        I: IntoIterator<Item = Result<Document>>,
        F: FnMut(&DocumentOutput) -> Result<()>,
    {
        let mut counts = GenerateCounts::default();
        let mut docs = docs.into_iter();
        let mut batch = Vec::with_capacity(self.chunk);
        loop {
            batch.clear();
            for doc in docs.by_ref().take(self.chunk) {
                batch.push(doc?);
            }
            if batch.is_empty() {
                break;
            }
            let outputs = self.process_batch(&mut batch);
            for out in &outputs {
                counts.documents += 1;
                counts.tokens += out.tokens as u64;
                counts.matches += out.matches as u64;
                counts.samples += out.samples.len() as u64;
                counts.documents_with_samples += u64::from(!out.samples.is_empty());
                sink(out)?;
            }
        }
        Ok(counts)
    }

    fn process_batch(&self, batch: &mut Vec<Document>) -> Vec<DocumentOutput> {
        let work = std::mem::take(batch);
        match &self.pool {
            Some(pool) => pool.install(|| {
                work.into_par_iter()
                    .map(|d| process_document(d, self.matcher, &self.cfg))
                    .collect()
            }),
            None => work
                .into_iter()
                .map(|d| process_document(d, self.matcher, &self.cfg))
                .collect(),
        }
    }
}
