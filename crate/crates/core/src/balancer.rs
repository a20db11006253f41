//! Class-frequency capping and train/validation/test partitioning.
//!
//! The cap `T` comes from a sorted sweep over class frequencies: classes are
//! removed smallest first, and the sweep stops at the first class at least as
//! large as the even share `round(N' / L)` of what remains. Every class then
//! contributes `min(F_C, T)` samples.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus_io::AbbrevSample;
use crate::error::{invalid, Error, Result};
use crate::rng::{derive_seed, shuffle};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ClassHistogram {
    counts: BTreeMap<String, u64>,
    total: u64,
}

impl ClassHistogram {
    pub fn add(&mut self, label: &str) {
        match self.counts.get_mut(label) {
            Some(c) => *c += 1,
            None => {
                self.counts.insert(label.to_string(), 1);
            }
        }
        self.total += 1;
    }

    pub fn merge(mut self, other: ClassHistogram) -> ClassHistogram {
        for (label, n) in other.counts {
            *self.counts.entry(label).or_default() += n;
        }
        self.total += other.total;
        self
    }

    pub fn from_labels<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut h = Self::default();
        for l in labels {
            h.add(l.as_ref());
        }
        h
    }

    /// Map-reduce over shards; the merged result is independent of sharding.
    pub fn par_from_labels<S: AsRef<str> + Sync>(labels: &[S]) -> Self {
        labels
            .par_chunks(1 << 14)
            .map(|chunk| Self::from_labels(chunk))
            .reduce(Self::default, Self::merge)
    }

    pub fn get(&self, label: &str) -> u64 {
        self.counts.get(label).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.counts.iter().map(|(l, &n)| (l.as_str(), n))
    }

    pub fn frequencies(&self) -> Vec<u64> {
        self.counts.values().copied().collect()
    }
}

pub fn class_histogram<'a, I>(samples: I) -> ClassHistogram
where
    I: IntoIterator<Item = &'a AbbrevSample>,
{
    ClassHistogram::from_labels(samples.into_iter().map(|s| s.label.as_str()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rounding {
    #[default]
    HalfAway,
    HalfEven,
}

impl FromStr for Rounding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "half-away" => Ok(Self::HalfAway),
            "half-even" => Ok(Self::HalfEven),
            other => Err(invalid(format!(
                "unknown rounding mode {other:?} (expected half-away or half-even)"
            ))),
        }
    }
}

impl fmt::Display for Rounding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::HalfAway => "half-away",
            Self::HalfEven => "half-even",
        })
    }
}

/// `num / den` rounded to an integer, `den > 0`, computed exactly.
pub fn round_div(num: i64, den: i64, mode: Rounding) -> i64 {
    debug_assert!(den > 0);
    let q = num.div_euclid(den);
    let twice_rem = 2 * i128::from(num.rem_euclid(den));
    let den = i128::from(den);
    if twice_rem > den {
        q + 1
    } else if twice_rem < den {
        q
    } else {
        match mode {
            // q is the floor, so for negative ties it is already the one
            // further from zero.
            Rounding::HalfAway => {
                if num >= 0 {
                    q + 1
                } else {
                    q
                }
            }
            Rounding::HalfEven => {
                if q % 2 == 0 {
                    q
                } else {
                    q + 1
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The sweep returned `r + 1` with `r + 1 >= 1`.
    Returned,
    /// Every class was removed (`L` reached 0); `T = max(f)`.
    Exhausted,
    /// The sweep returned `r + 1 < 1`; clamped to 1.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ThresholdStep {
    pub frequency: u64,
    pub remaining: i64,
    pub labels_left: u64,
    /// `None` on the step where `labels_left` hits zero.
    pub rate: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ThresholdTrace {
    pub sorted_frequencies: Vec<u64>,
    pub target: u64,
    pub rounding: Rounding,
    pub steps: Vec<ThresholdStep>,
    /// Value the unguarded sweep returned, if it returned at all.
    pub raw_return: Option<i64>,
    pub threshold: u64,
    pub termination: Termination,
}

impl ThresholdTrace {
    /// `Σ min(f_C, T)` for the chosen threshold.
    pub fn kept_total(&self) -> u64 {
        capped_total(&self.sorted_frequencies, self.threshold)
    }
}

pub fn capped_total(frequencies: &[u64], threshold: u64) -> u64 {
    frequencies.iter().map(|&f| f.min(threshold)).sum()
}

/// Computes the per-class cap for a target sample count `target`.
pub fn compute_threshold(
    frequencies: &[u64],
    target: u64,
    rounding: Rounding,
) -> Result<(u64, ThresholdTrace)> {
    if frequencies.is_empty() {
        return Err(invalid("frequency array is empty"));
    }
    if target < 1 {
        return Err(invalid("target sample count must be at least 1"));
    }
    if frequencies.contains(&0) {
        return Err(invalid("class frequencies must be at least 1"));
    }
    let total: u128 = frequencies.iter().map(|&f| u128::from(f)).sum();
    if total > i64::MAX as u128 || target > i64::MAX as u64 {
        return Err(invalid("counts exceed the supported range"));
    }

    let mut sorted = frequencies.to_vec();
    sorted.sort_unstable();
    let mut labels_left = sorted.len() as u64;
    let mut remaining = target as i64;
    let mut steps = Vec::new();
    let mut outcome = None;

    for &f in &sorted {
        remaining -= f as i64;
        labels_left -= 1;
        if labels_left == 0 {
            steps.push(ThresholdStep {
                frequency: f,
                remaining,
                labels_left,
                rate: None,
            });
            break;
        }
        let rate = round_div(remaining, labels_left as i64, rounding);
        steps.push(ThresholdStep {
            frequency: f,
            remaining,
            labels_left,
            rate: Some(rate),
        });
        if f as i64 >= rate {
            outcome = Some(rate + 1);
            break;
        }
    }

    let (threshold, termination) = match outcome {
        Some(t) if t >= 1 => (t as u64, Termination::Returned),
        Some(_) => (1, Termination::Degenerate),
        None => (*sorted.last().expect("non-empty"), Termination::Exhausted),
    };
    let trace = ThresholdTrace {
        sorted_frequencies: sorted,
        target,
        rounding,
        steps,
        raw_return: outcome,
        threshold,
        termination,
    };
    Ok((threshold, trace))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClassSelection {
    pub frequency: u64,
    /// Positions in the input sample stream, ascending.
    pub kept: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BalancedSubset {
    pub threshold: u64,
    pub seed: u64,
    pub classes: BTreeMap<String, ClassSelection>,
}

impl BalancedSubset {
    pub fn kept_total(&self) -> u64 {
        self.classes.values().map(|c| c.kept.len() as u64).sum()
    }

    /// All kept positions, ascending.
    pub fn kept_positions(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self
            .classes
            .values()
            .flat_map(|c| c.kept.iter().copied())
            .collect();
        all.sort_unstable();
        all
    }

    pub fn kept_per_class(&self) -> BTreeMap<&str, u64> {
        self.classes
            .iter()
            .map(|(l, c)| (l.as_str(), c.kept.len() as u64))
            .collect()
    }
}

/// Keeps a uniformly random `min(F_C, threshold)` samples of every class.
///
/// `labels[i]` is the label of sample `i`. Each class shuffles its positions
/// with its own seed derived from the label, so the result does not depend
/// on class iteration order.
pub fn balanced_sample<S: AsRef<str>>(
    labels: &[S],
    threshold: u64,
    seed: u64,
) -> Result<BalancedSubset> {
    if threshold < 1 {
        return Err(invalid("threshold must be at least 1"));
    }
    let mut positions: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        positions.entry(l.as_ref()).or_default().push(i);
    }
    let classes = positions
        .into_iter()
        .map(|(label, mut pos)| {
            let frequency = pos.len() as u64;
            let keep = frequency.min(threshold) as usize;
            if keep < pos.len() {
                shuffle(&mut pos, derive_seed(seed, label.as_bytes()));
                pos.truncate(keep);
                pos.sort_unstable();
            }
            (
                label.to_string(),
                ClassSelection {
                    frequency,
                    kept: pos,
                },
            )
        })
        .collect();
    Ok(BalancedSubset {
        threshold,
        seed,
        classes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const PRETRAIN: SplitRatios = SplitRatios {
        train: 0.6,
        validation: 0.2,
        test: 0.2,
    };
    pub const CLINICAL: SplitRatios = SplitRatios {
        train: 0.75,
        validation: 0.10,
        test: 0.15,
    };

    pub fn new(train: f64, validation: f64, test: f64) -> Result<Self> {
        let all = [train, validation, test];
        if all.iter().any(|r| !r.is_finite() || *r <= 0.0) {
            return Err(invalid(format!(
                "split ratios must be positive, got {all:?}"
            )));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("split ratios must sum to 1, got {all:?}")));
        }
        Ok(Self {
            train,
            validation,
            test,
        })
    }

    /// `floor(n * r)` for validation and test, the rest to train.
    pub fn floor_sizes(&self, n: usize) -> (usize, usize, usize) {
        let val = floor_share(n, self.validation);
        let test = floor_share(n, self.test);
        let (val, test) = if val + test > n { (0, 0) } else { (val, test) };
        (n - val - test, val, test)
    }
}

/// `floor(n * r)`, tolerant of products like 0.29 * 100 = 28.999999999999996.
pub(crate) fn floor_share(n: usize, r: f64) -> usize {
    (n as f64 * r + 1e-9).floor() as usize
}

impl FromStr for SplitRatios {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| invalid(format!("bad ratio list {s:?}: {e}")))?;
        match parts[..] {
            [a, b, c] => Self::new(a, b, c),
            _ => Err(invalid(format!("expected three ratios, got {s:?}"))),
        }
    }
}

impl fmt::Display for SplitRatios {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.train, self.validation, self.test)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
}

/// Shuffles with `seed` and slices contiguously: train, validation, test.
pub fn partition_samples<T>(
    mut items: Vec<T>,
    ratios: &SplitRatios,
    seed: u64,
) -> Result<Partition<T>> {
    if items.len() < 3 {
        return Err(invalid(format!(
            "need at least 3 samples to partition, got {}",
            items.len()
        )));
    }
    let (n_train, n_val, _) = ratios.floor_sizes(items.len());
    shuffle(&mut items, seed);
    let mut rest = items.split_off(n_train);
    let test = rest.split_off(n_val);
    Ok(Partition {
        train: items,
        validation: rest,
        test,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BalanceReport {
    pub target: u64,
    pub threshold: u64,
    pub trace: ThresholdTrace,
    pub class_count: usize,
    pub input_samples: u64,
    pub kept_total: u64,
    pub kept_per_class: BTreeMap<String, u64>,
    /// `kept_total - target` when the two differ.
    pub discrepancy: Option<i64>,
    pub seed: u64,
}

impl BalanceReport {
    pub fn new(hist: &ClassHistogram, trace: ThresholdTrace, subset: &BalancedSubset) -> Self {
        let kept_total = subset.kept_total();
        let discrepancy =
            (kept_total != trace.target).then(|| kept_total as i64 - trace.target as i64);
        Self {
            target: trace.target,
            threshold: trace.threshold,
            class_count: hist.len(),
            input_samples: hist.total(),
            kept_total,
            kept_per_class: subset
                .kept_per_class()
                .into_iter()
                .map(|(l, n)| (l.to_string(), n))
                .collect(),
            discrepancy,
            seed: subset.seed,
            trace,
        }
    }
}
