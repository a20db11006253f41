use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::Args;
use medalforge::attention_ref::{finite_difference_check, GradientCheck};
use medalforge::balancer::{
    balanced_sample, compute_threshold, partition_samples, BalanceReport, ClassHistogram, Rounding,
    SplitRatios,
};
use medalforge::corpus_io::{
    read_documents, read_jsonl, read_note_records, read_samples, write_jsonl, AtomicFile,
    DocumentFormat, SampleFormat, SampleWriter,
};
use medalforge::mapping_table::{load_mappings, FilterMode, MappingTable};
use medalforge::metrics_stats::{
    histogram_csv, max_top_k_recall, mean_top_k_recall, StatsAccumulator,
};
use medalforge::pipeline::Generator;
use medalforge::splits_tasks::{
    build_diagnosis_labels, patient_outcomes, select_mortality_notes, stratified_patient_split,
    Split,
};
use medalforge::substitution::{tokenize_str, ExpansionMatcher, SubstitutionConfig};
use serde::{Deserialize, Serialize};

use crate::config::{ConfigFile, Resolver};
use crate::manifest::RunRecord;
use crate::{Common, UsageError};

pub const WORKERS_ENV: &str = "MEDALFORGE_WORKERS";

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn load_config(common: &Common) -> Result<ConfigFile> {
    match &common.config {
        Some(path) => ConfigFile::load(path).map_err(|e| usage(format!("{e:#}"))),
        None => Ok(ConfigFile::default()),
    }
}

fn require_out(out: Option<PathBuf>) -> Result<PathBuf> {
    out.ok_or_else(|| usage("missing required setting --out"))
}

/// Worker count from flag, config, `MEDALFORGE_WORKERS`, then the number of
/// available cores.
fn resolve_workers(r: &mut Resolver<'_>, flag: Option<usize>) -> Result<usize> {
    let default = match std::env::var(WORKERS_ENV) {
        Ok(raw) => raw
            .trim()
            .parse::<usize>()
            .map_err(|e| usage(format!("{WORKERS_ENV}={raw:?} is invalid: {e}")))?,
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let workers = r.or("workers", flag, default)?;
    if workers == 0 {
        bail!(UsageError("--workers must be at least 1".into()));
    }
    Ok(workers)
}

fn open_input(path: &Path) -> Result<BufReader<File>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::with_capacity(1 << 16, file))
}

fn named(path: &Path) -> String {
    path.display().to_string()
}

macro_rules! text_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq)]
        pub enum $name { $($variant),+ }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($text => Ok(Self::$variant),)+
                    _ => Err(format!("expected one of: {}", [$($text),+].join(", "))),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$variant => $text),+ })
            }
        }
    };
}

text_enum!(FilterModeArg { OnePass => "one-pass", Fixpoint => "fixpoint" });
text_enum!(InputFormat { Jsonl => "jsonl", Plain => "plain" });
text_enum!(OutputFormat { Jsonl => "jsonl", Csv => "csv" });

impl From<FilterModeArg> for FilterMode {
    fn from(m: FilterModeArg) -> Self {
        match m {
            FilterModeArg::OnePass => FilterMode::OnePass,
            FilterModeArg::Fixpoint => FilterMode::Fixpoint,
        }
    }
}

impl From<InputFormat> for DocumentFormat {
    fn from(f: InputFormat) -> Self {
        match f {
            InputFormat::Jsonl => DocumentFormat::Jsonl,
            InputFormat::Plain => DocumentFormat::Plain,
        }
    }
}

impl From<OutputFormat> for SampleFormat {
    fn from(f: OutputFormat) -> Self {
        match f {
            OutputFormat::Jsonl => SampleFormat::Jsonl,
            OutputFormat::Csv => SampleFormat::Csv,
        }
    }
}

/// Comma-separated list of cutoffs, e.g. `5,10,30`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KList(pub Vec<usize>);

impl FromStr for KList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let ks = s
            .split(',')
            .map(|p| match p.trim().parse::<usize>() {
                Ok(0) => Err("k must be at least 1".to_string()),
                Ok(k) => Ok(k),
                Err(e) => Err(format!("bad k {p:?}: {e}")),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self(ks))
    }
}

impl fmt::Display for KList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|k| k.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

fn load_table(path: &Path) -> Result<MappingTable> {
    load_mappings(open_input(path)?).with_context(|| format!("reading {}", named(path)))
}

#[derive(Args, Debug)]
pub struct FilterArgs {
    #[command(flatten)]
    pub common: Common,
    /// TSV dictionary, `ABBREV<TAB>EXPANSION` per line.
    #[arg(long)]
    pub mappings: Option<PathBuf>,
    /// `one-pass` or `fixpoint`.
    #[arg(long)]
    pub mode: Option<FilterModeArg>,
}

pub fn filter_mappings(a: FilterArgs) -> Result<()> {
    let file = load_config(&a.common)?;
    let mut r = Resolver::new(&file);
    let out = require_out(r.out_dir(a.common.out)?)?;
    let mappings = r.required_path("mappings", a.mappings)?;
    let mode = r.or("mode", a.mode, FilterModeArg::OnePass)?;
    let config = r.finish()?;

    let mut run = RunRecord::new("filter-mappings", &out)?;
    run.input("mappings", &mappings)?;
    let table = load_table(&mappings)?;
    let filtered = table.filter_ambiguous(mode.into());
    run.phase("filter");
    run.count("input", table.stats());
    run.count("output", filtered.stats());
    run.count("valid_filtered", filtered.is_valid_filtered());

    let path = run.output_path("mappings.filtered.tsv");
    let mut sink = AtomicFile::create(&path)?;
    filtered.write_tsv(&mut sink)?;
    sink.finish()?;
    run.output(path);
    eprintln!(
        "kept {} of {} pairs ({} abbreviations)",
        filtered.len(),
        table.len(),
        filtered.abbreviation_count()
    );
    run.finish(&config)
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Input documents.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// `jsonl` (`{"id","text"}` per line) or `plain` (one document per line).
    #[arg(long)]
    pub input_format: Option<InputFormat>,
    /// Mapping table, usually the output of `filter-mappings`.
    #[arg(long)]
    pub mappings: Option<PathBuf>,
    /// Substitution probability per matched expansion.
    #[arg(long)]
    pub prob: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// `jsonl` or `csv`.
    #[arg(long)]
    pub output_format: Option<OutputFormat>,
}

pub fn generate(a: GenerateArgs) -> Result<()> {
    let file = load_config(&a.common)?;
    let mut r = Resolver::new(&file);
    let out = require_out(r.out_dir(a.common.out)?)?;
    let corpus = r.required_path("corpus", a.corpus)?;
    let input_format = r.or("input-format", a.input_format, InputFormat::Jsonl)?;
    let mappings = r.required_path("mappings", a.mappings)?;
    let prob: f64 = r.required("prob", a.prob)?;
    let seed = r.or("seed", a.seed, 0u64)?;
    let workers = resolve_workers(&mut r, a.workers)?;
    let output_format = r.or("output-format", a.output_format, OutputFormat::Jsonl)?;
    let config = r.finish()?;
    let cfg = SubstitutionConfig::new(prob, seed).map_err(|e| usage(format!("--prob: {e}")))?;

    let mut run = RunRecord::new("generate", &out)?;
    run.input("corpus", &corpus)?;
    run.input("mappings", &mappings)?;
    let table = load_table(&mappings)?;
    let matcher = ExpansionMatcher::new(&table);
    run.phase("load");

    let format = SampleFormat::from(output_format);
    let path = run.output_path(&format!("samples.{}", format.extension()));
    let mut writer = SampleWriter::create(&path, format)?;
    let mut docs = read_documents(&corpus, input_format.into())?;
    let generator = Generator::new(&matcher, cfg, workers)?;
    let counts = generator.run(&mut docs, |doc| {
        for s in &doc.samples {
            writer.write(s)?;
        }
        Ok(())
    })?;
    writer.finish()?;
    run.output(path);
    run.phase("generate");

    run.count("patterns", matcher.pattern_count());
    run.count("skipped_records", docs.warnings());
    run.count("generate", counts);
    if docs.warnings() > 0 {
        eprintln!("warning: skipped {} malformed records", docs.warnings());
    }
    eprintln!(
        "{} documents, {} matches, {} samples",
        counts.documents, counts.matches, counts.samples
    );
    run.finish(&config)
}

#[derive(Args, Debug)]
pub struct BalanceArgs {
    #[command(flatten)]
    pub common: Common,
    /// Sample file from `generate` (`.csv` or JSONL).
    #[arg(long)]
    pub samples: Option<PathBuf>,
    /// Desired total sample count N.
    #[arg(long)]
    pub target: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `half-away` or `half-even`.
    #[arg(long)]
    pub rounding: Option<Rounding>,
}

/// Labels of every sample in file order, interned.
struct LabelColumn {
    names: Vec<String>,
    ids: Vec<u32>,
}

impl LabelColumn {
    fn read(path: &Path, format: SampleFormat) -> Result<Self> {
        let mut index: HashMap<String, u32> = HashMap::new();
        let mut names = Vec::new();
        let mut ids = Vec::new();
        for sample in read_samples(path, format)? {
            let label = sample
                .with_context(|| format!("reading {}", named(path)))?
                .label;
            let id = match index.get(&label) {
                Some(&id) => id,
                None => {
                    let id = names.len() as u32;
                    names.push(label.clone());
                    index.insert(label, id);
                    id
                }
            };
            ids.push(id);
        }
        Ok(Self { names, ids })
    }

    fn labels(&self) -> Vec<&str> {
        self.ids
            .iter()
            .map(|&i| self.names[i as usize].as_str())
            .collect()
    }
}

pub fn balance(a: BalanceArgs) -> Result<()> {
    let file = load_config(&a.common)?;
    let mut r = Resolver::new(&file);
    let out = require_out(r.out_dir(a.common.out)?)?;
    let samples = r.required_path("samples", a.samples)?;
    let target: u64 = r.required("target", a.target)?;
    let seed = r.or("seed", a.seed, 0u64)?;
    let rounding = r.or("rounding", a.rounding, Rounding::default())?;
    let config = r.finish()?;
    if target == 0 {
        bail!(UsageError("--target must be at least 1".into()));
    }

    let mut run = RunRecord::new("balance", &out)?;
    run.input("samples", &samples)?;
    let format = SampleFormat::from_path(&samples);
    let column = LabelColumn::read(&samples, format)?;
    let labels = column.labels();
    let hist = ClassHistogram::from_labels(&labels);
    run.phase("histogram");
    if hist.is_empty() {
        bail!("{} contains no samples", named(&samples));
    }
    let (threshold, trace) = compute_threshold(&hist.frequencies(), target, rounding)?;
    let subset = balanced_sample(&labels, threshold, seed)?;
    let keep = subset.kept_positions();
    run.phase("select");

    let path = run.output_path(&format!("balanced.{}", format.extension()));
    let mut writer = SampleWriter::create(&path, format)?;
    let mut next = keep.iter().peekable();
    for (i, sample) in read_samples(&samples, format)?.enumerate() {
        let Some(&&want) = next.peek() else { break };
        if i == want {
            writer.write(&sample?)?;
            next.next();
        }
    }
    let written = writer.finish()?;
    run.output(path);
    run.phase("write");

    let report = BalanceReport::new(&hist, trace, &subset);
    if let Some(d) = report.discrepancy {
        eprintln!(
            "note: kept {} samples for target {} (difference {d:+})",
            report.kept_total, report.target
        );
    }
    run.count("input_samples", report.input_samples);
    run.count("classes", report.class_count);
    run.count("threshold", report.threshold);
    run.count("termination", report.trace.termination);
    run.count("kept", written);
    run.count("discrepancy", report.discrepancy);
    run.write_json("balance_report.json", &report)?;
    run.finish(&config)
}

#[derive(Args, Debug)]
pub struct SplitPretrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub samples: Option<PathBuf>,
    /// train,validation,test fractions.
    #[arg(long)]
    pub ratios: Option<SplitRatios>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn split_pretrain(a: SplitPretrainArgs) -> Result<()> {
    let file = load_config(&a.common)?;
    let mut r = Resolver::new(&file);
    let out = require_out(r.out_dir(a.common.out)?)?;
    let samples = r.required_path("samples", a.samples)?;
    let ratios = r.or("ratios", a.ratios, SplitRatios::PRETRAIN)?;
    let seed = r.or("seed", a.seed, 0u64)?;
    let config = r.finish()?;

    let mut run = RunRecord::new("split-pretrain", &out)?;
    run.input("samples", &samples)?;
    let format = SampleFormat::from_path(&samples);
    let mut n = 0usize;
    for sample in read_samples(&samples, format)? {
        sample.with_context(|| format!("reading {}", named(&samples)))?;
        n += 1;
    }
    let parts = partition_samples((0..n).collect(), &ratios, seed)?;
    let mut which = vec![0u8; n];
    for &i in &parts.validation {
        which[i] = 1;
    }
    for &i in &parts.test {
        which[i] = 2;
    }
    run.phase("partition");

    // Each split keeps input order.
    let mut writers = Vec::new();
    for split in Split::ALL {
        let path = run.output_path(&format!("{split}.{}", format.extension()));
        writers.push((SampleWriter::create(&path, format)?, path));
    }
    for (i, sample) in read_samples(&samples, format)?.enumerate() {
        writers[which[i] as usize].0.write(&sample?)?;
    }
    for (split, (writer, path)) in Split::ALL.into_iter().zip(writers) {
        run.count(split.as_str(), writer.finish()?);
        run.output(path);
    }
    run.phase("write");
    run.count("input_samples", n);
    run.finish(&config)
}

#[derive(Args, Debug)]
pub struct MortalityArgs {
    #[command(flatten)]
    pub common: Common,
    /// Note records, one JSON object per line.
    #[arg(long)]
    pub notes: Option<PathBuf>,
    #[arg(long)]
    pub ratios: Option<SplitRatios>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Serialize, Default)]
struct SplitCounts {
    patients: usize,
    died_patients: usize,
    notes: usize,
    positive_notes: usize,
}

pub fn build_mortality(a: MortalityArgs) -> Result<()> {
    let file = load_config(&a.common)?;
    let mut r = Resolver::new(&file);
    let out = require_out(r.out_dir(a.common.out)?)?;
    let notes = r.required_path("notes", a.notes)?;
    let ratios = r.or("ratios", a.ratios, SplitRatios::CLINICAL)?;
    let seed = r.or("seed", a.seed, 0u64)?;
    let config = r.finish()?;

    let mut run = RunRecord::new("build-mortality", &out)?;
    run.input("notes", &notes)?;
    let mut reader = read_note_records(&notes)?;
    let records = reader
        .by_ref()
        .collect::<medalforge::Result<Vec<_>>>()
        .with_context(|| format!("reading {}", named(&notes)))?;
    let skipped = reader.warnings();
    let outcomes = patient_outcomes(&records);
    let assignment = stratified_patient_split(&outcomes, &ratios, seed)?;
    let record_count = records.len();
    let selected = select_mortality_notes(records, seed);
    run.phase("select");

    let mut per_split: BTreeMap<Split, SplitCounts> = Split::ALL
        .into_iter()
        .map(|s| (s, SplitCounts::default()))
        .collect();
    for (patient, died) in &outcomes {
        let c = per_split
            .get_mut(&assignment.assignment[patient])
            .expect("all splits present");
        c.patients += 1;
        c.died_patients += usize::from(*died);
    }
    for split in Split::ALL {
        let rows: Vec<_> = selected
            .iter()
            .filter(|s| assignment.get(&s.note.patient_id) == Some(split))
            .collect();
        let c = per_split.get_mut(&split).expect("all splits present");
        c.notes = rows.len();
        c.positive_notes = rows.iter().filter(|s| s.label).count();
        let path = run.output_path(&format!("mortality_{split}.jsonl"));
        write_jsonl(rows.into_iter(), &path)?;
        run.output(path);
    }
    run.write_json("split_manifest.json", &assignment)?;
    run.phase("write");

    if skipped > 0 {
        eprintln!("warning: skipped {skipped} malformed records");
    }
    run.count("records", record_count);
    run.count("skipped_records", skipped);
    run.count("selected_notes", selected.len());
    run.count(
        "splits",
        per_split
            .iter()
            .map(|(s, c)| (s.as_str(), c))
            .collect::<BTreeMap<_, _>>(),
    );
    run.finish(&config)
}

#[derive(Args, Debug)]
pub struct DiagnosisArgs {
    #[command(flatten)]
    pub common: Common,
    /// `{"admission_id", "patient_id"?, "codes": [...]}` per line.
    #[arg(long)]
    pub codes: Option<PathBuf>,
    /// `split_manifest.json` from `build-mortality`; writes one file per split.
    #[arg(long)]
    pub splits: Option<PathBuf>,
}

#[derive(Deserialize)]
struct CodeRow {
    admission_id: String,
    #[serde(default)]
    patient_id: Option<String>,
    #[serde(default)]
    codes: Vec<String>,
}

#[derive(Deserialize)]
struct SplitFile {
    assignment: BTreeMap<String, Split>,
}

#[derive(Serialize)]
struct LabelRow<'a> {
    admission_id: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    patient_id: Option<&'a str>,
    codes: Vec<&'a str>,
    code_ids: Vec<usize>,
}

pub fn build_diagnosis(a: DiagnosisArgs) -> Result<()> {
    let file = load_config(&a.common)?;
    let mut r = Resolver::new(&file);
    let out = require_out(r.out_dir(a.common.out)?)?;
    let codes = r.required_path("codes", a.codes)?;
    let splits = r.path("splits", a.splits)?;
    let config = r.finish()?;

    let mut run = RunRecord::new("build-diagnosis", &out)?;
    run.input("codes", &codes)?;
    let mut raw: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut patient_of: HashMap<String, String> = HashMap::new();
    let mut reader = read_jsonl::<CodeRow>(&codes)?;
    for row in reader.by_ref() {
        let row = row.with_context(|| format!("reading {}", named(&codes)))?;
        if let Some(p) = row.patient_id {
            if let Some(prev) = patient_of.insert(row.admission_id.clone(), p.clone()) {
                if prev != p {
                    bail!(
                        "admission {} listed under patients {prev} and {p}",
                        row.admission_id
                    );
                }
            }
        }
        raw.entry(row.admission_id).or_default().extend(row.codes);
    }
    let built = build_diagnosis_labels(&raw);
    run.phase("group");

    let assignment = match &splits {
        Some(path) => {
            run.input("splits", path)?;
            let parsed: SplitFile = serde_json::from_reader(open_input(path)?)
                .with_context(|| format!("reading {}", named(path)))?;
            Some(parsed.assignment)
        }
        None => None,
    };
    let mut rows = Vec::with_capacity(built.labels.len());
    for (adm, set) in &built.labels {
        let patient = patient_of.get(adm).map(String::as_str);
        let split = match &assignment {
            Some(map) => {
                let Some(p) = patient else {
                    bail!("admission {adm} has no patient_id, needed with --splits");
                };
                let Some(s) = map.get(p) else {
                    bail!("patient {p} (admission {adm}) is missing from the split manifest");
                };
                Some(*s)
            }
            None => None,
        };
        let codes: Vec<&str> = set.grouped_codes.iter().map(String::as_str).collect();
        let code_ids = codes
            .iter()
            .map(|c| {
                built
                    .vocabulary
                    .id(c)
                    .expect("vocabulary covers all labels")
            })
            .collect();
        let row = LabelRow {
            admission_id: adm,
            patient_id: patient,
            codes,
            code_ids,
        };
        rows.push((split, row));
    }

    let groups: Vec<(String, Option<Split>)> = if assignment.is_some() {
        Split::ALL
            .into_iter()
            .map(|s| (format!("diagnosis_{s}.jsonl"), Some(s)))
            .collect()
    } else {
        vec![("diagnosis_labels.jsonl".to_string(), None)]
    };
    let mut per_file = BTreeMap::new();
    for (name, split) in groups {
        let path = run.output_path(&name);
        let n = write_jsonl(
            rows.iter().filter(|(s, _)| *s == split).map(|(_, row)| row),
            &path,
        )?;
        per_file.insert(name, n);
        run.output(path);
    }
    run.write_json("vocabulary.json", &built.vocabulary)?;
    run.phase("write");

    run.count("admissions", raw.len());
    run.count("skipped_records", reader.warnings());
    run.count("labeled_admissions", built.labels.len());
    run.count("dropped_admissions", built.dropped_admissions.len());
    run.count("invalid_codes", built.invalid_codes);
    run.count("vocabulary", built.vocabulary.len());
    run.count("files", per_file);
    run.finish(&config)
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub input_format: Option<InputFormat>,
    /// Samples generated from the corpus; counted per `doc_id`.
    #[arg(long)]
    pub samples: Option<PathBuf>,
}

pub fn stats(a: StatsArgs) -> Result<()> {
    let file = load_config(&a.common)?;
    let mut r = Resolver::new(&file);
    let out = require_out(r.out_dir(a.common.out)?)?;
    let corpus = r.required_path("corpus", a.corpus)?;
    let input_format = r.or("input-format", a.input_format, InputFormat::Jsonl)?;
    let samples = r.required_path("samples", a.samples)?;
    let config = r.finish()?;

    let mut run = RunRecord::new("stats", &out)?;
    run.input("corpus", &corpus)?;
    run.input("samples", &samples)?;
    let mut per_doc: HashMap<String, u64> = HashMap::new();
    for s in read_samples(&samples, SampleFormat::from_path(&samples))? {
        let s = s.with_context(|| format!("reading {}", named(&samples)))?;
        *per_doc.entry(s.doc_id).or_default() += 1;
    }
    let mut acc = StatsAccumulator::default();
    let mut seen: HashSet<String> = HashSet::new();
    let mut docs = read_documents(&corpus, input_format.into())?;
    for doc in docs.by_ref() {
        let doc = doc?;
        let words = tokenize_str(&doc.text).len() as u64;
        acc.add(words, per_doc.get(&doc.id).copied().unwrap_or(0));
        seen.insert(doc.id);
    }
    let unmatched: u64 = per_doc
        .iter()
        .filter(|(id, _)| !seen.contains(*id))
        .map(|(_, n)| n)
        .sum();
    if unmatched > 0 {
        eprintln!("warning: {unmatched} samples reference documents not in the corpus");
    }
    let report = acc.report();
    run.phase("count");

    run.write_json("stats.json", &report)?;
    run.write_text("word_histogram.csv", &histogram_csv(&report.word_histogram))?;
    run.write_text(
        "abbreviation_histogram.csv",
        &histogram_csv(&report.abbreviation_histogram),
    )?;
    run.count("articles", report.article_count);
    run.count("skipped_records", docs.warnings());
    run.count("unmatched_samples", unmatched);
    run.finish(&config)
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// `{"admission_id", "ranking": [...]}` per line, best first.
    #[arg(long)]
    pub preds: Option<PathBuf>,
    /// `{"admission_id", "codes": [...]}` per line.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Comma-separated cutoffs.
    #[arg(long)]
    pub k: Option<KList>,
}

#[derive(Deserialize)]
struct PredRow {
    admission_id: String,
    ranking: Vec<String>,
}

#[derive(Deserialize)]
struct TruthRow {
    admission_id: String,
    codes: Vec<String>,
}

#[derive(Serialize)]
struct RecallAt {
    recall: f64,
    max_recall: f64,
}

#[derive(Serialize)]
struct EvalReport {
    admissions: usize,
    k: BTreeMap<usize, RecallAt>,
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let file = load_config(&a.common)?;
    let mut r = Resolver::new(&file);
    let out = r.out_dir(a.common.out)?;
    let preds_path = r.required_path("preds", a.preds)?;
    let truth_path = r.required_path("truth", a.truth)?;
    let ks = r.or("k", a.k, KList(vec![5, 10, 30]))?;
    let config = r.finish()?;
    if ks.0.is_empty() {
        bail!(UsageError("--k needs at least one cutoff".into()));
    }

    let mut preds: HashMap<String, Vec<String>> = HashMap::new();
    for row in read_jsonl::<PredRow>(&preds_path)? {
        let row = row.with_context(|| format!("reading {}", named(&preds_path)))?;
        let ranked =
            medalforge::metrics_stats::RankedPrediction::new(row.admission_id, row.ranking)?;
        let id = ranked.admission_id.clone();
        if preds
            .insert(id.clone(), ranked.ranking().to_vec())
            .is_some()
        {
            bail!("duplicate prediction for admission {id}");
        }
    }
    let mut rankings: Vec<&[String]> = Vec::new();
    let mut truths: Vec<HashSet<String>> = Vec::new();
    let mut ids = HashSet::new();
    for row in read_jsonl::<TruthRow>(&truth_path)? {
        let row = row.with_context(|| format!("reading {}", named(&truth_path)))?;
        if !ids.insert(row.admission_id.clone()) {
            bail!("duplicate truth for admission {}", row.admission_id);
        }
        let Some(ranking) = preds.get(&row.admission_id) else {
            bail!("no prediction for admission {}", row.admission_id);
        };
        rankings.push(ranking);
        truths.push(row.codes.into_iter().collect());
    }
    if truths.is_empty() {
        bail!("{} has no admissions", named(&truth_path));
    }
    let mut report = EvalReport {
        admissions: truths.len(),
        k: BTreeMap::new(),
    };
    for &k in &ks.0 {
        let recall = mean_top_k_recall(&rankings, &truths, k)?;
        let max_recall = max_top_k_recall(&truths, k)?;
        report.k.insert(k, RecallAt { recall, max_recall });
    }
    println!("{}", serde_json::to_string_pretty(&report)?);

    if let Some(out) = out {
        let mut run = RunRecord::new("eval", &out)?;
        run.input("preds", &preds_path)?;
        run.input("truth", &truth_path)?;
        run.write_json("eval.json", &report)?;
        run.count("admissions", report.admissions);
        run.finish(&config)?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct AttnCheckArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn attn_check(a: AttnCheckArgs) -> Result<()> {
    let file = load_config(&a.common)?;
    let mut r = Resolver::new(&file);
    let out = r.out_dir(a.common.out)?;
    let defaults = GradientCheck::default();
    let trials = r.or("trials", a.trials, defaults.trials)?;
    let seed = r.or("seed", a.seed, defaults.seed)?;
    let config = r.finish()?;
    if trials == 0 {
        bail!(UsageError("--trials must be at least 1".into()));
    }

    let report = finite_difference_check(&GradientCheck {
        trials,
        seed,
        ..defaults
    })?;
    let mut stdout = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut stdout, &report)?;
    writeln!(stdout)?;

    if let Some(out) = out {
        let mut run = RunRecord::new("attn-check", &out)?;
        run.write_json("attn_check.json", &report)?;
        run.count("failures", report.failures);
        run.finish(&config)?;
    }
    if report.failures > 0 {
        bail!(
            "{} of {} gradient coordinates exceed tolerance {:e}",
            report.failures,
            report.coordinates,
            report.tolerance
        );
    }
    Ok(())
}
