//! Mortality and diagnosis dataset construction from clinical notes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::balancer::SplitRatios;
use crate::corpus_io::{NoteCategory, NoteRecord};
use crate::error::{invalid, Result};
use crate::rng::{derive_seed, shuffle};

pub const DAY_SECONDS: i64 = 86_400;
pub const SURVIVOR_NOTE_CAP: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MortalitySample {
    #[serde(flatten)]
    pub note: NoteRecord,
    pub label: bool,
}

/// Physician or nursing note charted at least 24 hours before discharge.
pub fn is_eligible(note: &NoteRecord) -> bool {
    matches!(
        note.category,
        NoteCategory::Physician | NoteCategory::Nursing
    ) && note.chart_time <= note.discharge_time.saturating_sub(DAY_SECONDS)
}

/// Patient-level outcome: a patient counts as died if any of their records
/// says so.
pub fn patient_outcomes<'a, I>(records: I) -> BTreeMap<String, bool>
where
    I: IntoIterator<Item = &'a NoteRecord>,
{
    let mut out: BTreeMap<String, bool> = BTreeMap::new();
    for r in records {
        *out.entry(r.patient_id.clone()).or_default() |= r.died;
    }
    out
}

/// Keeps every eligible note of patients who died and at most four eligible
/// notes, chosen uniformly, of every surviving patient. Output preserves
/// input order.
pub fn select_mortality_notes(records: Vec<NoteRecord>, seed: u64) -> Vec<MortalitySample> {
    let outcomes = patient_outcomes(&records);
    let mut by_patient: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        if is_eligible(r) {
            by_patient.entry(r.patient_id.as_str()).or_default().push(i);
        }
    }
    let mut keep = vec![false; records.len()];
    for (patient, mut idx) in by_patient {
        if !outcomes[patient] && idx.len() > SURVIVOR_NOTE_CAP {
            shuffle(&mut idx, derive_seed(seed, patient.as_bytes()));
            idx.truncate(SURVIVOR_NOTE_CAP);
        }
        for i in idx {
            keep[i] = true;
        }
    }
    records
        .into_iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(note, _)| MortalitySample {
            label: note.died,
            note,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitAssignment {
    pub assignment: BTreeMap<String, Split>,
    pub ratios: SplitRatios,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn get(&self, patient_id: &str) -> Option<Split> {
        self.assignment.get(patient_id).copied()
    }

    pub fn count(&self, split: Split) -> usize {
        self.assignment.values().filter(|s| **s == split).count()
    }
}

/// Largest-remainder allocation of `n` items: every split gets `floor(n r)`
/// or one more, leftovers going to the largest fractional parts (ties to
/// train, then validation).
pub fn allocate(n: usize, ratios: &SplitRatios) -> [usize; 3] {
    let quotas = [ratios.train, ratios.validation, ratios.test].map(|r| n as f64 * r);
    let mut sizes = quotas.map(|q| (q + 1e-9).floor() as usize);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - sizes[a] as f64;
        let fb = quotas[b] - sizes[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut k = 0;
    while sizes.iter().sum::<usize>() < n {
        sizes[order[k % 3]] += 1;
        k += 1;
    }
    while sizes.iter().sum::<usize>() > n {
        let i = (0..3)
            .rev()
            .find(|&i| sizes[i] > 0)
            .expect("sum is positive");
        sizes[i] -= 1;
    }
    sizes
}

/// Splits patients (not notes) within each outcome stratum.
pub fn stratified_patient_split(
    outcomes: &BTreeMap<String, bool>,
    ratios: &SplitRatios,
    seed: u64,
) -> Result<SplitAssignment> {
    if outcomes.is_empty() {
        return Err(invalid("no patients to split"));
    }
    let mut assignment = BTreeMap::new();
    for (stratum, key) in [(true, &b"died"[..]), (false, &b"survived"[..])] {
        let mut patients: Vec<&String> = outcomes
            .iter()
            .filter(|(_, died)| **died == stratum)
            .map(|(p, _)| p)
            .collect();
        shuffle(&mut patients, derive_seed(seed, key));
        let [n_train, n_val, _] = allocate(patients.len(), ratios);
        for (i, p) in patients.into_iter().enumerate() {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Validation
            } else {
                Split::Test
            };
            assignment.insert(p.clone(), split);
        }
    }
    Ok(SplitAssignment {
        assignment,
        ratios: *ratios,
        seed,
    })
}

/// Collapses an ICD-9 code to its category: four characters for E and V
/// codes, three otherwise.
pub fn group_icd(code: &str) -> Result<String> {
    let code = code.trim();
    if code.is_empty() {
        return Err(invalid("empty ICD code"));
    }
    if !code.chars().all(|c| c.is_ascii_alphanumeric()) {
        return Err(invalid(format!("ICD code {code:?} is not alphanumeric")));
    }
    let upper = code.to_ascii_uppercase();
    let cut = if upper.starts_with('E') || upper.starts_with('V') {
        4
    } else {
        3
    };
    Ok(upper.chars().take(cut).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DiagnosisLabelSet {
    pub admission_id: String,
    pub grouped_codes: BTreeSet<String>,
}

/// Sorted grouped codes; a code's id is its position.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CodeVocabulary {
    pub codes: Vec<String>,
}

impl CodeVocabulary {
    pub fn id(&self, code: &str) -> Option<usize> {
        self.codes.binary_search_by(|c| c.as_str().cmp(code)).ok()
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DiagnosisLabels {
    pub labels: BTreeMap<String, DiagnosisLabelSet>,
    pub vocabulary: CodeVocabulary,
    pub dropped_admissions: Vec<String>,
    pub invalid_codes: u64,
}

pub fn build_diagnosis_labels(raw: &BTreeMap<String, Vec<String>>) -> DiagnosisLabels {
    let mut labels = BTreeMap::new();
    let mut dropped = Vec::new();
    let mut vocab = BTreeSet::new();
    let mut invalid_codes = 0;
    for (admission, codes) in raw {
        let mut grouped = BTreeSet::new();
        for c in codes {
            match group_icd(c) {
                Ok(g) => {
                    grouped.insert(g);
                }
                Err(_) => invalid_codes += 1,
            }
        }
        if grouped.is_empty() {
            dropped.push(admission.clone());
            continue;
        }
        vocab.extend(grouped.iter().cloned());
        labels.insert(
            admission.clone(),
            DiagnosisLabelSet {
                admission_id: admission.clone(),
                grouped_codes: grouped,
            },
        );
    }
    DiagnosisLabels {
        labels,
        vocabulary: CodeVocabulary {
            codes: vocab.into_iter().collect(),
        },
        dropped_admissions: dropped,
        invalid_codes,
    }
}
