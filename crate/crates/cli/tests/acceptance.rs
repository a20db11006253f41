//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Every reference value here is recomputed by code written independently
//! of the library (float transcriptions, brute-force oracles, hand-derived
//! fixtures). Runs without the libtest harness so the report is always shown.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{fixture, ok, p};
use medalforge::attention_ref::{
    attention_forward, finite_difference_check, softmax_rows, AttentionConfig, AttentionOperands,
    GradientCheck, Matrix,
};
use medalforge::balancer::{compute_threshold, Rounding, SplitRatios, Termination};
use medalforge::corpus_io::{Document, NoteCategory, NoteRecord};
use medalforge::mapping_table::{Mapping, MappingTable};
use medalforge::metrics_stats::{max_top_k_recall, top_k_recall};
use medalforge::pipeline::Generator;
use medalforge::splits_tasks::{
    group_icd, is_eligible, select_mortality_notes, stratified_patient_split, Split,
};
use medalforge::substitution::{ExpansionMatcher, SubstitutionConfig};
use medalforge::synth::{CorpusParams, SyntheticCorpus};
use serde_json::Value;

/// Small xorshift generator for drawing test instances.
struct Draw(u64);

impl Draw {
    fn next(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }

    /// Uniform-ish in `lo..=hi`.
    fn range(&mut self, lo: u64, hi: u64) -> u64 {
        lo + self.next() % (hi - lo + 1)
    }

    fn unit(&mut self) -> f64 {
        (self.next() >> 11) as f64 / (1u64 << 53) as f64
    }
}

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    if elapsed > Duration::from_secs(limit_s) {
        Err(format!(
            "took {:.2}s, limit {limit_s}s",
            elapsed.as_secs_f64()
        ))
    } else {
        Ok(())
    }
}

// Criterion 1

#[derive(Debug, PartialEq)]
struct LiteralRun {
    steps: Vec<(i64, i64, Option<i64>)>,
    raw: Option<i64>,
    t: u64,
    termination: Termination,
}

/// Line-by-line transcription of the printed pseudocode, in floating point,
/// with the two guards applied afterwards.
fn algorithm1_transcription(f: &[u64], n: u64) -> LiteralRun {
    let mut f: Vec<u64> = f.to_vec();
    f.sort();
    let mut l = f.len() as f64;
    let mut n_prime = n as f64;
    let mut steps = Vec::new();
    let mut raw = None;
    for &fc in &f {
        n_prime -= fc as f64;
        l -= 1.0;
        if l == 0.0 {
            steps.push((n_prime as i64, 0, None));
            break;
        }
        // f64::round rounds half away from zero.
        let r = (n_prime / l).round();
        steps.push((n_prime as i64, l as i64, Some(r as i64)));
        if fc as f64 >= r {
            raw = Some(r as i64 + 1);
            break;
        }
    }
    let (t, termination) = match raw {
        Some(t) if t >= 1 => (t as u64, Termination::Returned),
        Some(_) => (1, Termination::Degenerate),
        None => (*f.iter().max().unwrap(), Termination::Exhausted),
    };
    LiteralRun {
        steps,
        raw,
        t,
        termination,
    }
}

fn brute_force_t_star(f: &[u64], n: u64) -> Option<u64> {
    let max = *f.iter().max()?;
    (1..=max).find(|&t| f.iter().map(|&x| x.min(t)).sum::<u64>() >= n)
}

fn library_run(f: &[u64], n: u64) -> LiteralRun {
    let (t, trace) = compute_threshold(f, n, Rounding::HalfAway).expect("valid instance");
    LiteralRun {
        steps: trace
            .steps
            .iter()
            .map(|s| (s.remaining, s.labels_left as i64, s.rate))
            .collect(),
        raw: trace.raw_return,
        t,
        termination: trace.termination,
    }
}

fn allocation(f: &[u64], t: u64) -> Vec<u64> {
    f.iter().map(|&x| x.min(t)).collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut draw = Draw(0x5eed_0001);
    let mut guards = BTreeMap::new();
    let mut discrepancies = 0;
    let mut agreements = 0;
    let mut numerically_different_t = 0;
    for case in 0..1000 {
        let len = draw.range(1, 50) as usize;
        let f: Vec<u64> = (0..len).map(|_| draw.range(1, 1000)).collect();
        let total: u64 = f.iter().sum();
        let n = draw.range(1, total);
        let lib = library_run(&f, n);
        let lit = algorithm1_transcription(&f, n);
        ensure!(
            lib == lit,
            "case {case} f={f:?} N={n}: library {lib:?} vs transcription {lit:?}"
        );
        *guards.entry(format!("{:?}", lit.termination)).or_insert(0) += 1;

        let kept: u64 = allocation(&f, lib.t).iter().sum();
        if lib.termination == Termination::Returned && kept == n {
            let t_star = brute_force_t_star(&f, n).expect("N <= sum f");
            ensure!(
                allocation(&f, lib.t) == allocation(&f, t_star) && lib.t >= t_star,
                "case {case}: T={} disagrees with T*={t_star}",
                lib.t
            );
            numerically_different_t += usize::from(lib.t != t_star);
            agreements += 1;
        } else if kept != n {
            discrepancies += 1;
        }
    }

    for (f, n, want) in [(&[1u64, 5, 5][..], 9, 4), (&[3, 3, 3][..], 9, 4)] {
        let (t, trace) = compute_threshold(f, n, Rounding::HalfAway).map_err(|e| e.to_string())?;
        let t_star = brute_force_t_star(f, n).unwrap();
        ensure!(t == want, "f={f:?} N={n}: T={t}, expected {want}");
        ensure!(
            trace.kept_total() == n,
            "f={f:?}: kept {} != {n}",
            trace.kept_total()
        );
        ensure!(
            allocation(f, t) == allocation(f, t_star),
            "f={f:?}: allocation at T={t} differs from T*={t_star}"
        );
    }

    let (t, trace) =
        compute_threshold(&[1, 2, 10, 10], 13, Rounding::HalfAway).map_err(|e| e.to_string())?;
    ensure!(
        t == 1 && trace.kept_total() == 4,
        "discrepancy case gave T={t}"
    );
    ensure!(
        brute_force_t_star(&[1, 2, 10, 10], 13) == Some(5),
        "oracle T* for discrepancy case"
    );
    let labels: Vec<String> = [(0, 1), (1, 2), (2, 10), (3, 10)]
        .iter()
        .flat_map(|&(c, k)| std::iter::repeat(format!("c{c}")).take(k))
        .collect();
    let subset = medalforge::balancer::balanced_sample(&labels, t, 0).map_err(|e| e.to_string())?;
    let hist = medalforge::balancer::ClassHistogram::from_labels(&labels);
    let report = medalforge::balancer::BalanceReport::new(&hist, trace, &subset);
    ensure!(
        report.discrepancy == Some(4 - 13),
        "discrepancy not reported: {:?}",
        report.discrepancy
    );

    within(start.elapsed(), 5)?;
    Ok(format!(
        "1000/1000 traces equal {guards:?}; {agreements} oracle agreements ({numerically_different_t} with T>T*, same allocation); {discrepancies} sum-mismatch instances reported; [1,2,10,10]/13 flagged (T=1, kept 4, T*=5); {:.2}s",
        start.elapsed().as_secs_f64()
    ))
}

// Criterion 2

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let corpus = SyntheticCorpus::new(CorpusParams {
        documents: 10_000,
        seed: 2,
        ..CorpusParams::default()
    });
    let matcher = ExpansionMatcher::new(corpus.table());
    let cfg = SubstitutionConfig::new(1.0, 17).map_err(|e| e.to_string())?;
    let generator = Generator::new(&matcher, cfg, 1).map_err(|e| e.to_string())?;
    let planted: Vec<usize> = (0..10_000)
        .map(|i| corpus.document_with_plants(i).1.len())
        .collect();
    let mut checked = 0u64;
    let mut failures = Vec::new();
    let docs = corpus.documents().map(Ok);
    generator
        .run(docs, |out| {
            if out.samples.len() != planted[out.ordinal as usize] {
                failures.push(format!(
                    "doc {}: {} samples for {} plants",
                    out.ordinal,
                    out.samples.len(),
                    planted[out.ordinal as usize]
                ));
            }
            for s in &out.samples {
                checked += 1;
                let tokens: Vec<&str> = s.text.split(' ').collect();
                if tokens.get(s.location) != Some(&s.abbreviation.as_str()) {
                    failures.push(format!(
                        "doc {}: token at {} is not {}",
                        out.ordinal, s.location, s.abbreviation
                    ));
                    continue;
                }
                // Put the label back and re-detect it in a local window.
                let lo = s.location.saturating_sub(3);
                let hi = (s.location + 4).min(tokens.len());
                let mut window: Vec<String> = tokens[lo..s.location]
                    .iter()
                    .map(|t| t.to_lowercase())
                    .collect();
                let at = window.len();
                window.extend(s.label.split(' ').map(str::to_string));
                window.extend(tokens[s.location + 1..hi].iter().map(|t| t.to_lowercase()));
                let found = matcher.find_matches_in(&window);
                let hit = found.iter().any(|m| {
                    m.start == at
                        && m.mapping.expansion() == s.label
                        && m.mapping.abbreviation() == s.abbreviation
                });
                if !hit {
                    failures.push(format!(
                        "doc {}: {} not re-detected at {}",
                        out.ordinal, s.label, s.location
                    ));
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    ensure!(
        failures.is_empty(),
        "{} failures, first: {}",
        failures.len(),
        failures[0]
    );
    ensure!(checked > 10_000, "only {checked} samples checked");
    within(start.elapsed(), 30)?;
    Ok(format!(
        "{checked} samples from 10000 docs, 0 failures; {:.2}s",
        start.elapsed().as_secs_f64()
    ))
}

// Criterion 3

fn criterion_3() -> Outcome {
    let table: MappingTable = [
        ("DHF", "dengue hemorrhagic fever"),
        ("DHF", "dorsal horn fiber"),
    ]
    .iter()
    .map(|(a, e)| Mapping::new(a, e).unwrap())
    .collect();
    let matcher = ExpansionMatcher::new(&table);
    let cfg = SubstitutionConfig::new(0.3, 2024).map_err(|e| e.to_string())?;
    let generator = Generator::new(&matcher, cfg, 1).map_err(|e| e.to_string())?;
    let n = 100_000u64;
    let docs = (0..n).map(|i| {
        let expansion = if i % 2 == 0 {
            "dengue hemorrhagic fever"
        } else {
            "dorsal horn fiber"
        };
        Ok(Document {
            id: format!("d{i}"),
            ordinal: i,
            text: format!("patient {i} presented with {expansion} on admission"),
        })
    });
    let counts = generator.run(docs, |_| Ok(())).map_err(|e| e.to_string())?;
    ensure!(
        counts.matches == n,
        "{} matches for {n} single-match docs",
        counts.matches
    );
    let rate = counts.samples as f64 / n as f64;
    ensure!((rate - 0.30).abs() <= 0.01, "rate {rate}");
    Ok(format!("substituted {}/{n} = {rate:.4}", counts.samples))
}

// Criterion 4

fn criterion_4() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut digests = Vec::new();
    for format in ["jsonl", "csv"] {
        let mut files = Vec::new();
        for workers in ["1", "8"] {
            let out = dir.path().join(format!("{format}-{workers}"));
            ok(&[
                "generate",
                "--corpus",
                p(&fixture("corpus.jsonl")),
                "--mappings",
                p(&fixture("mappings.tsv")),
                "--prob",
                "0.3",
                "--seed",
                "42",
                "--workers",
                workers,
                "--output-format",
                format,
                "--out",
                p(&out),
            ]);
            let name = format!("samples.{format}");
            let bytes = std::fs::read(out.join(&name)).map_err(|e| e.to_string())?;
            let m = common::manifest(&out);
            files.push((
                bytes,
                m["outputs"][&name]["fnv1a64"]
                    .as_str()
                    .unwrap_or("")
                    .to_string(),
            ));
        }
        ensure!(!files[0].0.is_empty(), "{format}: empty output");
        ensure!(files[0].0 == files[1].0, "{format}: workers 1 and 8 differ");
        ensure!(files[0].1 == files[1].1, "{format}: digests differ");
        digests.push(format!("{format} {}", files[0].1));
    }
    Ok(format!(
        "workers 1 == 8 byte-for-byte ({})",
        digests.join(", ")
    ))
}

// Criterion 5

fn random_matrix(draw: &mut Draw, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| (draw.unit() * 2.0 - 1.0) * scale)
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let report = finite_difference_check(&GradientCheck {
        trials: 100,
        n_max: 7,
        d_max: 5,
        step: 1e-4,
        tolerance: 1e-5,
        seed: 5,
    })
    .map_err(|e| e.to_string())?;
    ensure!(report.trials == 100, "ran {} trials", report.trials);
    ensure!(
        report.failures == 0 && report.max_rel_err <= 1e-5,
        "max relative error {:e}, {} failures",
        report.max_rel_err,
        report.failures
    );

    let mut draw = Draw(0x5eed_0005);
    let mut worst_row = 0f64;
    let mut worst_uniform = 0f64;
    for _ in 0..200 {
        let n = draw.range(1, 7) as usize;
        let m = n;
        let d = draw.range(1, 5) as usize;
        let scores = random_matrix(&mut draw, n, m, 50.0);
        let w = softmax_rows(&scores);
        for i in 0..n {
            worst_row = worst_row.max((w.row(i).iter().sum::<f64>() - 1.0).abs());
        }

        let cfg = AttentionConfig::new(Matrix::zeros(d, d), draw.unit() - 0.5)
            .map_err(|e| e.to_string())?;
        let ops = AttentionOperands {
            keys: random_matrix(&mut draw, m, d, 3.0),
            queries: random_matrix(&mut draw, n, d, 3.0),
            values: random_matrix(&mut draw, m, d, 3.0),
        };
        let out = attention_forward(&cfg, &ops).map_err(|e| e.to_string())?;
        for i in 0..n {
            for j in 0..m {
                worst_uniform = worst_uniform.max((out.weights.get(i, j) - 1.0 / m as f64).abs());
            }
            for c in 0..d {
                let mean = (0..m).map(|j| ops.values.get(j, c)).sum::<f64>() / m as f64;
                worst_uniform = worst_uniform.max((out.output.get(i, c) - mean).abs());
            }
        }
    }
    ensure!(worst_row <= 1e-12, "softmax row sum off by {worst_row:e}");
    ensure!(worst_uniform <= 1e-15, "W_a=0 deviation {worst_uniform:e}");
    within(start.elapsed(), 10)?;
    Ok(format!(
        "100 configs, max rel err {:.2e}; row sums within {worst_row:.1e}; W_a=0 within {worst_uniform:.1e}; {:.2}s",
        report.max_rel_err,
        start.elapsed().as_secs_f64()
    ))
}

// Criterion 6

fn criterion_6() -> Outcome {
    let truth: HashSet<u32> = (0..10).collect();
    let ranking: Vec<u32> = vec![0, 1, 2, 3, 4, 100, 101];
    let r = top_k_recall(&ranking, &truth, 5).map_err(|e| e.to_string())?;
    ensure!(r == 0.5, "ten-code case gave {r}");

    let text = std::fs::read_to_string(fixture("notes.jsonl")).map_err(|e| e.to_string())?;
    let mut fixture_sizes: Vec<usize> = Vec::new();
    let mut seen = BTreeSet::new();
    for line in text.lines() {
        let v: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if seen.insert(v["admission_id"].as_str().unwrap_or("").to_string()) {
            let codes: BTreeSet<String> = v["icd_codes"]
                .as_array()
                .into_iter()
                .flatten()
                .filter_map(|c| group_icd(c.as_str()?).ok())
                .collect();
            fixture_sizes.push(codes.len());
        }
    }
    let mut draw = Draw(0x5eed_0006);
    let mut size_sets = vec![fixture_sizes, vec![10, 2]];
    for _ in 0..50 {
        let n = draw.range(1, 200) as usize;
        size_sets.push((0..n).map(|_| draw.range(1, 60) as usize).collect());
    }
    let mut worst = 0f64;
    for sizes in &size_sets {
        let truths: Vec<HashSet<usize>> = sizes.iter().map(|&s| (0..s).collect()).collect();
        for k in [1, 5, 10, 30] {
            let got = max_top_k_recall(&truths, k).map_err(|e| e.to_string())?;
            let closed: f64 = sizes
                .iter()
                .map(|&s| k.min(s) as f64 / s as f64)
                .sum::<f64>()
                / sizes.len() as f64;
            worst = worst.max((got - closed).abs());
        }
    }
    ensure!(worst <= 1e-12, "max_top_k_recall off by {worst:e}");

    for case in 0..1000 {
        let universe = draw.range(1, 40) as u32;
        let mut ranking: Vec<u32> = (0..universe).collect();
        for i in (1..ranking.len()).rev() {
            let j = draw.range(0, i as u64) as usize;
            ranking.swap(i, j);
        }
        ranking.truncate(draw.range(1, universe as u64) as usize);
        let truth: HashSet<u32> = (0..draw.range(1, universe as u64) as u32)
            .map(|_| draw.range(0, universe as u64 - 1) as u32)
            .collect();
        let mut prev = 0.0;
        for k in 1..=ranking.len() + 3 {
            let r = top_k_recall(&ranking, &truth, k).map_err(|e| e.to_string())?;
            ensure!(
                (0.0..=1.0).contains(&r),
                "case {case}: recall {r} out of range"
            );
            ensure!(
                r >= prev,
                "case {case}: recall fell from {prev} to {r} at k={k}"
            );
            prev = r;
        }
    }
    Ok(format!(
        "|truth|=10 top-5 = 0.5 exact; max recall vs closed form within {worst:.1e} over {} size sets; 1000 monotone cases",
        size_sets.len()
    ))
}

// Criterion 7

fn criterion_7() -> Outcome {
    for (code, want) in [("4800", "480"), ("E8500", "E850"), ("V450", "V450")] {
        let got = group_icd(code).map_err(|e| e.to_string())?;
        ensure!(got == want, "{code} -> {got}, expected {want}");
    }
    let mut draw = Draw(0x5eed_0007);
    let alphabet = b"0123456789";
    for _ in 0..1000 {
        let mut code = String::new();
        match draw.range(0, 4) {
            0 => code.push('E'),
            1 => code.push('v'),
            2 => code.push('e'),
            _ => {}
        }
        for _ in 0..draw.range(1, 6) {
            code.push(alphabet[draw.range(0, 9) as usize] as char);
        }
        let once = group_icd(&code).map_err(|e| format!("{code}: {e}"))?;
        let twice = group_icd(&once).map_err(|e| format!("{once}: {e}"))?;
        ensure!(once == twice, "{code}: {once} then {twice}");
        let upper = code.to_uppercase();
        let cut = if upper.starts_with(['E', 'V']) { 4 } else { 3 };
        let expect: String = upper.chars().take(cut).collect();
        ensure!(once == expect, "{code}: {once}, expected {expect}");
    }
    Ok("3 exact examples; 1000 random codes idempotent and prefix-correct".into())
}

// Criterion 8

fn note(
    patient: &str,
    died: bool,
    category: NoteCategory,
    chart: i64,
    discharge: i64,
    text: String,
) -> NoteRecord {
    NoteRecord {
        patient_id: patient.into(),
        admission_id: format!("{patient}-a"),
        category,
        chart_time: chart,
        discharge_time: discharge,
        died,
        icd_codes: Vec::new(),
        text,
    }
}

fn criterion_8() -> Outcome {
    // Hand-applied rules on the 12-record fixture: P1 died and keeps its two
    // eligible notes (n02 sits exactly 24h before discharge); n03 is 1h
    // before discharge and n04 is not physician/nursing. P2 survived and
    // keeps only n05 (n06 is one second late, n07 is ECG). P3 survived with
    // five eligible notes, so exactly four of n08..n12 survive the cap.
    let text = std::fs::read_to_string(fixture("notes.jsonl")).map_err(|e| e.to_string())?;
    let records: Vec<NoteRecord> = text
        .lines()
        .map(serde_json::from_str)
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    ensure!(records.len() == 12, "fixture has {} records", records.len());
    let kept = select_mortality_notes(records, 1);
    let kept_texts: BTreeSet<&str> = kept.iter().map(|s| s.note.text.as_str()).collect();
    let fixed: BTreeSet<&str> = ["note n01", "note n02", "note n05"].into();
    let capped: BTreeSet<&str> =
        ["note n08", "note n09", "note n10", "note n11", "note n12"].into();
    ensure!(kept.len() == 7, "kept {} notes", kept.len());
    ensure!(
        fixed.is_subset(&kept_texts),
        "missing fixed notes: {kept_texts:?}"
    );
    ensure!(
        kept_texts.difference(&fixed).all(|t| capped.contains(t)),
        "unexpected notes kept: {kept_texts:?}"
    );
    for s in &kept {
        ensure!(
            s.label == (s.note.patient_id == "P1"),
            "{}: label {}",
            s.note.text,
            s.label
        );
    }

    // Random patients: cap, died-keeps-all, eligibility.
    let mut draw = Draw(0x5eed_0008);
    let mut notes = Vec::new();
    let mut outcome = BTreeMap::new();
    for pid in 0..10_000 {
        let patient = format!("p{pid}");
        let died = draw.range(0, 3) == 0;
        outcome.insert(patient.clone(), died);
        let discharge = 10_000_000 + draw.range(0, 1_000_000) as i64;
        for k in 0..draw.range(0, 12) {
            let category = match draw.range(0, 2) {
                0 => NoteCategory::Physician,
                1 => NoteCategory::Nursing,
                _ => NoteCategory::Other,
            };
            let chart = discharge - draw.range(0, 4 * 86_400) as i64;
            notes.push(note(
                &patient,
                died,
                category,
                chart,
                discharge,
                format!("{patient}/{k}"),
            ));
        }
    }
    let mut eligible: HashMap<&str, usize> = HashMap::new();
    for n in &notes {
        let ok = matches!(n.category, NoteCategory::Physician | NoteCategory::Nursing)
            && n.chart_time <= n.discharge_time - 86_400;
        if ok {
            *eligible.entry(n.patient_id.as_str()).or_default() += 1;
        }
    }
    let eligible: HashMap<String, usize> = eligible
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    let kept = select_mortality_notes(notes, 99);
    let mut per_patient: HashMap<&str, usize> = HashMap::new();
    for s in &kept {
        ensure!(
            is_eligible(&s.note),
            "ineligible note kept: {}",
            s.note.text
        );
        *per_patient.entry(s.note.patient_id.as_str()).or_default() += 1;
    }
    for (patient, &died) in &outcome {
        let have = per_patient.get(patient.as_str()).copied().unwrap_or(0);
        let avail = eligible.get(patient).copied().unwrap_or(0);
        let want = if died { avail } else { avail.min(4) };
        ensure!(
            have == want,
            "{patient} (died={died}): kept {have} of {avail} eligible"
        );
    }

    // Splits: disjoint by construction of the map; check coverage, note
    // routing and stratum proportions.
    let mut strata_checked = 0;
    let mut worst_gap = 0f64;
    let mut check_split =
        |outcome: &BTreeMap<String, bool>, ratios: &SplitRatios, seed: u64| -> Result<(), String> {
            let split =
                stratified_patient_split(outcome, ratios, seed).map_err(|e| e.to_string())?;
            ensure!(
                split.assignment.len() == outcome.len(),
                "not every patient assigned"
            );
            for stratum in [true, false] {
                let members: Vec<&String> = outcome
                    .iter()
                    .filter(|(_, d)| **d == stratum)
                    .map(|(p, _)| p)
                    .collect();
                if members.is_empty() {
                    continue;
                }
                strata_checked += 1;
                let size = members.len() as f64;
                for (s, ratio) in
                    Split::ALL
                        .into_iter()
                        .zip([ratios.train, ratios.validation, ratios.test])
                {
                    let share =
                        members.iter().filter(|p| split.get(p) == Some(s)).count() as f64 / size;
                    let gap = (share - ratio).abs();
                    worst_gap = worst_gap.max(gap * size);
                    ensure!(
                        gap < 1.0 / size + 1e-12,
                        "stratum {stratum} size {size}: {s} share {share} vs {ratio}"
                    );
                }
            }
            Ok(())
        };
    check_split(&outcome, &SplitRatios::CLINICAL, 3)?;
    let assignment =
        stratified_patient_split(&outcome, &SplitRatios::CLINICAL, 3).map_err(|e| e.to_string())?;
    let mut note_split: HashMap<&str, Split> = HashMap::new();
    for s in &kept {
        let sp = assignment
            .get(&s.note.patient_id)
            .ok_or("kept note without split")?;
        if let Some(prev) = note_split.insert(s.note.patient_id.as_str(), sp) {
            ensure!(prev == sp, "patient {} in two splits", s.note.patient_id);
        }
    }
    for round in 0..300 {
        let died = draw.range(0, 40) as usize;
        let survived = draw.range(0, 40) as usize;
        if died + survived == 0 {
            continue;
        }
        let o: BTreeMap<String, bool> = (0..died)
            .map(|i| (format!("d{i}"), true))
            .chain((0..survived).map(|i| (format!("s{i}"), false)))
            .collect();
        let ratios = if round % 2 == 0 {
            SplitRatios::CLINICAL
        } else {
            SplitRatios::PRETRAIN
        };
        check_split(&o, &ratios, round)?;
    }
    Ok(format!(
        "fixture kept set matches hand oracle (7 notes); cap holds for 10000 patients ({} kept notes); {strata_checked} strata within 1/|stratum| (worst {worst_gap:.3}/|stratum|)",
        kept.len()
    ))
}

// Criterion 9

fn peak_child_rss_bytes() -> u64 {
    // SAFETY: getrusage only writes into the zeroed struct we pass.
    let mut usage: libc::rusage = unsafe { std::mem::zeroed() };
    let rc = unsafe { libc::getrusage(libc::RUSAGE_CHILDREN, &mut usage) };
    if rc != 0 {
        return 0;
    }
    // Linux reports kilobytes.
    usage.ru_maxrss as u64 * 1024
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = SyntheticCorpus::new(CorpusParams {
        documents: 1_000_000,
        seed: 9,
        ..CorpusParams::default()
    });
    let corpus_path = dir.path().join("corpus.jsonl");
    let made = Instant::now();
    corpus
        .write_jsonl(BufWriter::with_capacity(
            1 << 20,
            std::fs::File::create(&corpus_path).map_err(|e| e.to_string())?,
        ))
        .map_err(|e| e.to_string())?;
    let table_path = dir.path().join("mappings.tsv");
    std::fs::write(&table_path, corpus.table().to_tsv()).map_err(|e| e.to_string())?;
    let setup = made.elapsed();

    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let workers = cores.min(4).to_string();
    let start = Instant::now();
    let gen_out = dir.path().join("gen");
    ok(&[
        "generate",
        "--corpus",
        p(&corpus_path),
        "--mappings",
        p(&table_path),
        "--prob",
        "0.3",
        "--seed",
        "1",
        "--workers",
        &workers,
        "--out",
        p(&gen_out),
    ]);
    let generated = start.elapsed();
    let bal_out = dir.path().join("bal");
    ok(&[
        "balance",
        "--samples",
        p(&gen_out.join("samples.jsonl")),
        "--target",
        "500000",
        "--seed",
        "1",
        "--out",
        p(&bal_out),
    ]);
    let elapsed = start.elapsed();
    let rss = peak_child_rss_bytes();
    let gen_manifest = common::manifest(&gen_out);
    let bal_manifest = common::manifest(&bal_out);
    let docs = gen_manifest["counts"]["generate"]["documents"]
        .as_u64()
        .unwrap_or(0);
    let samples = gen_manifest["counts"]["generate"]["samples"]
        .as_u64()
        .unwrap_or(0);
    let kept = bal_manifest["counts"]["kept"].as_u64().unwrap_or(0);
    let size = std::fs::metadata(&corpus_path)
        .map(|m| m.len())
        .unwrap_or(0);
    let summary = format!(
        "{docs} docs ({:.0} MB) -> {samples} samples -> {kept} balanced; generate {:.1}s + balance {:.1}s = {:.1}s on {cores} core(s), {workers} worker(s); peak RSS {:.0} MB; corpus setup {:.1}s not counted",
        size as f64 / 1e6,
        generated.as_secs_f64(),
        (elapsed - generated).as_secs_f64(),
        elapsed.as_secs_f64(),
        rss as f64 / 1e6,
        setup.as_secs_f64()
    );
    ensure!(docs == 1_000_000, "{summary}");
    ensure!(elapsed < Duration::from_secs(300), "too slow: {summary}");
    ensure!(rss < 2 * 1024 * 1024 * 1024, "too much memory: {summary}");
    Ok(summary)
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("threshold sweep fidelity", criterion_1),
        ("reverse-substitution round trip", criterion_2),
        ("substitution rate", criterion_3),
        ("determinism under parallelism", criterion_4),
        ("attention gradient check", criterion_5),
        ("metrics", criterion_6),
        ("ICD grouping", criterion_7),
        ("mortality/diagnosis builders", criterion_8),
        ("throughput", criterion_9),
    ];
    // `cargo test -- <filter>` narrows the run to matching criterion numbers.
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    println!();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let number = (i + 1).to_string();
        if !filters.is_empty() && !filters.contains(&number) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        match result {
            Ok(detail) => println!("PASS {number} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {number} {name}: {detail}");
            }
        }
        std::io::stdout().flush().ok();
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
