//! Streaming readers and writers for documents, samples and note records.
//!
//! Every reader pulls one line at a time and every writer goes through a
//! buffered sink, so memory use does not grow with file size.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub ordinal: u64,
    pub text: String,
}

/// One emitted training sample: the abbreviation at token `location` of
/// `text` stands for `label`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbbrevSample {
    pub text: String,
    pub location: usize,
    pub label: String,
    #[serde(rename = "abbrev")]
    pub abbreviation: String,
    pub doc_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NoteCategory {
    Physician,
    Nursing,
    Other,
}

impl NoteCategory {
    pub fn parse(raw: &str) -> Self {
        match raw.trim().to_ascii_lowercase().as_str() {
            "physician" => Self::Physician,
            "nursing" => Self::Nursing,
            _ => Self::Other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Physician => "physician",
            Self::Nursing => "nursing",
            Self::Other => "other",
        }
    }
}

impl Serialize for NoteCategory {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for NoteCategory {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Ok(Self::parse(&raw))
    }
}

/// A clinical note with the admission metadata the task builders need.
/// Timestamps are epoch seconds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteRecord {
    pub patient_id: String,
    pub admission_id: String,
    pub category: NoteCategory,
    pub chart_time: i64,
    pub discharge_time: i64,
    pub died: bool,
    #[serde(default)]
    pub icd_codes: Vec<String>,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocumentFormat {
    Jsonl,
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    Jsonl,
    Csv,
}

impl SampleFormat {
    /// `.csv` means CSV, anything else JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Self::Csv,
            _ => Self::Jsonl,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Self::Jsonl => "jsonl",
            Self::Csv => "csv",
        }
    }
}

pub const CSV_HEADER: [&str; 5] = ["TEXT", "LOCATION", "LABEL", "ABBREV", "DOC_ID"];

fn open(path: &Path) -> Result<BufReader<File>> {
    let file = File::open(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(BufReader::with_capacity(1 << 16, file))
}

/// Line source shared by the JSONL readers: yields `(1-based line, bytes)`
/// and skips blank lines.
struct Lines<R> {
    inner: R,
    line_no: usize,
    buf: Vec<u8>,
}

impl<R: BufRead> Lines<R> {
    fn new(inner: R) -> Self {
        Self {
            inner,
            line_no: 0,
            buf: Vec::new(),
        }
    }

    fn next_line(&mut self) -> std::io::Result<Option<(usize, &[u8])>> {
        loop {
            self.buf.clear();
            if self.inner.read_until(b'\n', &mut self.buf)? == 0 {
                return Ok(None);
            }
            self.line_no += 1;
            let mut end = self.buf.len();
            while end > 0 && matches!(self.buf[end - 1], b'\n' | b'\r') {
                end -= 1;
            }
            if self.buf[..end].iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            return Ok(Some((self.line_no, &self.buf[..end])));
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawId {
    Text(String),
    Int(i64),
}

#[derive(Deserialize)]
struct RawDocument {
    id: RawId,
    text: String,
}

/// Ordered document stream. Malformed records are skipped and counted.
pub struct DocumentReader<R> {
    lines: Lines<R>,
    format: DocumentFormat,
    next_ordinal: u64,
    warnings: u64,
}

impl<R: BufRead> DocumentReader<R> {
    pub fn new(inner: R, format: DocumentFormat) -> Self {
        Self {
            lines: Lines::new(inner),
            format,
            next_ordinal: 0,
            warnings: 0,
        }
    }

    /// Records skipped so far.
    pub fn warnings(&self) -> u64 {
        self.warnings
    }
}

impl<R: BufRead> Iterator for DocumentReader<R> {
    type Item = Result<Document>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let (line_no, bytes) = match self.lines.next_line() {
                Ok(Some(line)) => line,
                Ok(None) => return None,
                Err(e) => return Some(Err(e.into())),
            };
            let parsed = match self.format {
                DocumentFormat::Jsonl => {
                    serde_json::from_slice::<RawDocument>(bytes)
                        .ok()
                        .map(|raw| {
                            let id = match raw.id {
                                RawId::Text(s) => s,
                                RawId::Int(i) => i.to_string(),
                            };
                            (id, raw.text)
                        })
                }
                DocumentFormat::Plain => std::str::from_utf8(bytes)
                    .ok()
                    .map(|text| (format!("line-{line_no}"), text.to_string())),
            };
            match parsed {
                Some((id, text)) => {
                    let ordinal = self.next_ordinal;
                    self.next_ordinal += 1;
                    return Some(Ok(Document { id, ordinal, text }));
                }
                None => self.warnings += 1,
            }
        }
    }
}

pub fn read_documents(
    path: &Path,
    format: DocumentFormat,
) -> Result<DocumentReader<BufReader<File>>> {
    Ok(DocumentReader::new(open(path)?, format))
}

/// JSONL stream of any record type; undecodable lines are skipped and counted.
pub struct JsonlReader<R, T> {
    lines: Lines<R>,
    warnings: u64,
    _record: PhantomData<T>,
}

impl<R: BufRead, T: DeserializeOwned> JsonlReader<R, T> {
    pub fn new(inner: R) -> Self {
        Self {
            lines: Lines::new(inner),
            warnings: 0,
            _record: PhantomData,
        }
    }

    pub fn warnings(&self) -> u64 {
        self.warnings
    }
}

impl<R: BufRead, T: DeserializeOwned> Iterator for JsonlReader<R, T> {
    type Item = Result<T>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            match self.lines.next_line() {
                Ok(Some((_, bytes))) => match serde_json::from_slice(bytes) {
                    Ok(record) => return Some(Ok(record)),
                    Err(_) => self.warnings += 1,
                },
                Ok(None) => return None,
                Err(e) => return Some(Err(e.into())),
            }
        }
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<JsonlReader<BufReader<File>, T>> {
    Ok(JsonlReader::new(open(path)?))
}

pub fn read_note_records(path: &Path) -> Result<JsonlReader<BufReader<File>, NoteRecord>> {
    read_jsonl(path)
}

/// File sink that writes to `<path>.partial` and renames on `finish`.
/// Dropping it unfinished deletes the partial file.
pub struct AtomicFile {
    path: PathBuf,
    tmp: PathBuf,
    out: Option<BufWriter<File>>,
}

impl AtomicFile {
    pub fn create(path: &Path) -> Result<Self> {
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".partial");
        let tmp = PathBuf::from(tmp);
        let file = File::create(&tmp).map_err(|source| Error::File {
            path: tmp.clone(),
            source,
        })?;
        Ok(Self {
            path: path.to_path_buf(),
            tmp,
            out: Some(BufWriter::with_capacity(1 << 16, file)),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn writer(&mut self) -> &mut BufWriter<File> {
        self.out.as_mut().expect("AtomicFile used after finish")
    }

    pub fn finish(mut self) -> Result<()> {
        let mut out = self.out.take().expect("finish called once");
        let result = out
            .flush()
            .and_then(|_| out.get_ref().sync_data())
            .and_then(|_| {
                drop(out);
                fs::rename(&self.tmp, &self.path)
            });
        result.map_err(|source| self.fail(source))
    }

    fn fail(&self, source: std::io::Error) -> Error {
        let _ = fs::remove_file(&self.tmp);
        Error::Write {
            path: self.path.clone(),
            source,
        }
    }
}

impl Write for AtomicFile {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.writer().write(buf)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.writer().flush()
    }
}

impl Drop for AtomicFile {
    fn drop(&mut self) {
        if self.out.take().is_some() {
            let _ = fs::remove_file(&self.tmp);
        }
    }
}

enum SampleSink {
    Jsonl(AtomicFile),
    Csv(csv::Writer<AtomicFile>),
}

/// Streaming sample writer for either output format.
pub struct SampleWriter {
    sink: SampleSink,
    path: PathBuf,
    written: u64,
}

impl SampleWriter {
    pub fn create(path: &Path, format: SampleFormat) -> Result<Self> {
        let file = AtomicFile::create(path)?;
        let sink = match format {
            SampleFormat::Jsonl => SampleSink::Jsonl(file),
            SampleFormat::Csv => {
                let mut w = csv::WriterBuilder::new()
                    .terminator(csv::Terminator::Any(b'\n'))
                    .from_writer(file);
                w.write_record(CSV_HEADER)?;
                SampleSink::Csv(w)
            }
        };
        Ok(Self {
            sink,
            path: path.to_path_buf(),
            written: 0,
        })
    }

    pub fn write(&mut self, sample: &AbbrevSample) -> Result<()> {
        let res = match &mut self.sink {
            SampleSink::Jsonl(out) => serde_json::to_writer(&mut *out, sample)
                .map_err(Error::from)
                .and_then(|_| out.write_all(b"\n").map_err(Error::from)),
            SampleSink::Csv(w) => w
                .write_record([
                    sample.text.as_str(),
                    sample.location.to_string().as_str(),
                    sample.label.as_str(),
                    sample.abbreviation.as_str(),
                    sample.doc_id.as_str(),
                ])
                .map_err(Error::from),
        };
        res.map_err(|e| self.write_error(e))?;
        self.written += 1;
        Ok(())
    }

    fn write_error(&self, e: Error) -> Error {
        let source = match e {
            Error::Io(io) => io,
            other => std::io::Error::other(other.to_string()),
        };
        Error::Write {
            path: self.path.clone(),
            source,
        }
    }

    pub fn written(&self) -> u64 {
        self.written
    }

    /// Flushes and moves the file into place; returns the number of samples.
    pub fn finish(self) -> Result<u64> {
        let file = match self.sink {
            SampleSink::Jsonl(f) => f,
            SampleSink::Csv(w) => w.into_inner().map_err(|e| Error::Write {
                path: self.path.clone(),
                source: std::io::Error::other(e.error().to_string()),
            })?,
        };
        file.finish()?;
        Ok(self.written)
    }
}

pub fn write_samples<'a, I>(samples: I, path: &Path, format: SampleFormat) -> Result<u64>
where
    I: IntoIterator<Item = &'a AbbrevSample>,
{
    let mut w = SampleWriter::create(path, format)?;
    for s in samples {
        w.write(s)?;
    }
    w.finish()
}

#[derive(Deserialize)]
struct CsvSampleRow {
    #[serde(rename = "TEXT")]
    text: String,
    #[serde(rename = "LOCATION")]
    location: usize,
    #[serde(rename = "LABEL")]
    label: String,
    #[serde(rename = "ABBREV")]
    abbreviation: String,
    #[serde(rename = "DOC_ID")]
    doc_id: String,
}

/// Reads samples back. Unlike document input, a bad row here is an error:
/// sample files are produced by this pipeline.
pub struct SampleReader {
    source: SampleSource,
}

enum SampleSource {
    Jsonl(Lines<BufReader<File>>),
    Csv(csv::DeserializeRecordsIntoIter<BufReader<File>, CsvSampleRow>),
}

impl Iterator for SampleReader {
    type Item = Result<AbbrevSample>;

    fn next(&mut self) -> Option<Self::Item> {
        match &mut self.source {
            SampleSource::Jsonl(lines) => match lines.next_line() {
                Ok(Some((line, bytes))) => {
                    Some(
                        serde_json::from_slice(bytes).map_err(|e| Error::MalformedRecord {
                            line,
                            reason: e.to_string(),
                        }),
                    )
                }
                Ok(None) => None,
                Err(e) => Some(Err(e.into())),
            },
            SampleSource::Csv(rows) => rows.next().map(|row| {
                let row = row?;
                Ok(AbbrevSample {
                    text: row.text,
                    location: row.location,
                    label: row.label,
                    abbreviation: row.abbreviation,
                    doc_id: row.doc_id,
                })
            }),
        }
    }
}

pub fn read_samples(path: &Path, format: SampleFormat) -> Result<SampleReader> {
    let reader = open(path)?;
    let source = match format {
        SampleFormat::Jsonl => SampleSource::Jsonl(Lines::new(reader)),
        SampleFormat::Csv => SampleSource::Csv(csv::Reader::from_reader(reader).into_deserialize()),
    };
    Ok(SampleReader { source })
}

/// Writes one JSON value per line through an [`AtomicFile`].
pub fn write_jsonl<'a, T, I>(items: I, path: &Path) -> Result<u64>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let mut out = AtomicFile::create(path)?;
    let mut n = 0;
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
        n += 1;
    }
    out.finish()?;
    Ok(n)
}
