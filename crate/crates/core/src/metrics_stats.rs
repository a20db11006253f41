//! Evaluation metrics and corpus statistics.

use std::collections::{BTreeMap, HashSet};
use std::hash::Hash;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Result};

/// A model's ranked output for one admission, best first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedPrediction<T> {
    pub admission_id: String,
    ranking: Vec<T>,
}

impl<T: Eq + Hash + Clone> RankedPrediction<T> {
    pub fn new(admission_id: impl Into<String>, ranking: Vec<T>) -> Result<Self> {
        let admission_id = admission_id.into();
        let mut seen = HashSet::with_capacity(ranking.len());
        if !ranking.iter().all(|c| seen.insert(c)) {
            return Err(invalid(format!(
                "ranking for {admission_id} contains duplicates"
            )));
        }
        Ok(Self {
            admission_id,
            ranking,
        })
    }

    pub fn ranking(&self) -> &[T] {
        &self.ranking
    }
}

/// Fraction of the true codes found among the first `k` ranked codes.
pub fn top_k_recall<T: Eq + Hash>(ranking: &[T], truth: &HashSet<T>, k: usize) -> Result<f64> {
    if truth.is_empty() {
        return Err(invalid("truth set is empty"));
    }
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    let hits = ranking.iter().take(k).filter(|c| truth.contains(c)).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Unweighted mean of per-admission recalls. Per-admission values are summed
/// in index order, so the result does not depend on the thread count.
pub fn mean_top_k_recall<T: Eq + Hash + Sync>(
    rankings: &[&[T]],
    truths: &[HashSet<T>],
    k: usize,
) -> Result<f64> {
    if rankings.len() != truths.len() {
        return Err(invalid(format!(
            "{} predictions for {} truth sets",
            rankings.len(),
            truths.len()
        )));
    }
    if truths.is_empty() {
        return Err(invalid("no admissions to evaluate"));
    }
    let per: Vec<f64> = rankings
        .par_iter()
        .zip(truths.par_iter())
        .map(|(r, t)| top_k_recall(r, t, k))
        .collect::<Result<_>>()?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Best achievable mean recall: `mean(min(k, |Y|) / |Y|)`.
pub fn max_top_k_recall<T>(truths: &[HashSet<T>], k: usize) -> Result<f64> {
    if truths.is_empty() {
        return Err(invalid("no truth sets"));
    }
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    let mut sum = 0.0;
    for t in truths {
        if t.is_empty() {
            return Err(invalid("truth set is empty"));
        }
        sum += k.min(t.len()) as f64 / t.len() as f64;
    }
    Ok(sum / truths.len() as f64)
}

pub fn accuracy<T: PartialEq>(predicted: &[T], truth: &[T]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(invalid(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(invalid("no labels"));
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub median: u64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub article_count: u64,
    pub words: Summary,
    pub abbreviations: Summary,
    /// `(bin_start, count)` with bins of width 10.
    pub word_histogram: Vec<(u64, u64)>,
    /// `(bin_start, count)` with bins of width 1.
    pub abbreviation_histogram: Vec<(u64, u64)>,
}

pub const WORD_BIN: u64 = 10;

/// Exact value counts; medians and histograms are derived from them.
#[derive(Debug, Clone, Default)]
pub struct StatsAccumulator {
    words: BTreeMap<u64, u64>,
    abbreviations: BTreeMap<u64, u64>,
    word_sum: u128,
    abbreviation_sum: u128,
    articles: u64,
}

fn lower_median(counts: &BTreeMap<u64, u64>, n: u64) -> u64 {
    if n == 0 {
        return 0;
    }
    let target = (n - 1) / 2;
    let mut seen = 0;
    for (&value, &c) in counts {
        seen += c;
        if seen > target {
            return value;
        }
    }
    unreachable!("counts sum to n")
}

fn binned(counts: &BTreeMap<u64, u64>, width: u64) -> Vec<(u64, u64)> {
    let mut bins: BTreeMap<u64, u64> = BTreeMap::new();
    for (&v, &c) in counts {
        *bins.entry(v / width * width).or_default() += c;
    }
    bins.into_iter().collect()
}

impl StatsAccumulator {
    pub fn add(&mut self, words: u64, abbreviations: u64) {
        *self.words.entry(words).or_default() += 1;
        *self.abbreviations.entry(abbreviations).or_default() += 1;
        self.word_sum += u128::from(words);
        self.abbreviation_sum += u128::from(abbreviations);
        self.articles += 1;
    }

    pub fn report(&self) -> StatsReport {
        let n = self.articles;
        let mean = |sum: u128| if n == 0 { 0.0 } else { sum as f64 / n as f64 };
        StatsReport {
            article_count: n,
            words: Summary {
                median: lower_median(&self.words, n),
                mean: mean(self.word_sum),
            },
            abbreviations: Summary {
                median: lower_median(&self.abbreviations, n),
                mean: mean(self.abbreviation_sum),
            },
            word_histogram: binned(&self.words, WORD_BIN),
            abbreviation_histogram: binned(&self.abbreviations, 1),
        }
    }
}

/// Statistics over `(word count, abbreviation count)` per document.
pub fn corpus_stats<I: IntoIterator<Item = (u64, u64)>>(documents: I) -> StatsReport {
    let mut acc = StatsAccumulator::default();
    for (w, a) in documents {
        acc.add(w, a);
    }
    acc.report()
}

/// `bin_start,count` CSV lines with a header.
pub fn histogram_csv(bins: &[(u64, u64)]) -> String {
    let mut out = String::from("bin_start,count\n");
    for (start, count) in bins {
        out.push_str(&format!("{start},{count}\n"));
    }
    out
}
