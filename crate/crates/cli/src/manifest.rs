use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use medalforge::corpus_io::AtomicFile;
use medalforge::rng::{fnv1a64, Fnv1a64};
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct FileDigest {
    pub fnv1a64: String,
    pub bytes: u64,
}

pub fn digest_file(path: &Path) -> Result<FileDigest> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut reader = BufReader::with_capacity(1 << 20, file);
    let mut hash = Fnv1a64::new();
    let mut buf = vec![0u8; 1 << 20];
    let mut bytes = 0u64;
    loop {
        let n = reader.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hash.update(&buf[..n]);
        bytes += n as u64;
    }
    Ok(FileDigest {
        fnv1a64: format!("{:016x}", hash.finish()),
        bytes,
    })
}

/// Hash of the effective configuration, one `key=value` line per setting in
/// key order.
pub fn config_hash(config: &BTreeMap<String, String>) -> String {
    let mut canon = String::new();
    for (k, v) in config {
        canon.push_str(k);
        canon.push('=');
        canon.push_str(v);
        canon.push('\n');
    }
    format!("{:016x}", fnv1a64(canon.as_bytes()))
}

/// Collects what a run read and wrote. `manifest.json` holds only values
/// that are a function of config and inputs; wall-clock timings go to
/// `timings.json` next to it.
pub struct RunRecord {
    command: &'static str,
    out_dir: PathBuf,
    inputs: BTreeMap<String, FileDigest>,
    outputs: Vec<PathBuf>,
    counts: BTreeMap<String, Value>,
    started: Instant,
    phase_start: Instant,
    timings: BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a BTreeMap<String, String>,
    config_hash: String,
    inputs: &'a BTreeMap<String, FileDigest>,
    outputs: BTreeMap<String, FileDigest>,
    counts: &'a BTreeMap<String, Value>,
}

impl RunRecord {
    pub fn new(command: &'static str, out_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(out_dir)
            .with_context(|| format!("creating output directory {}", out_dir.display()))?;
        let now = Instant::now();
        Ok(Self {
            command,
            out_dir: out_dir.to_path_buf(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            counts: BTreeMap::new(),
            started: now,
            phase_start: now,
            timings: BTreeMap::new(),
        })
    }

    pub fn output_path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        let digest = digest_file(path)?;
        self.inputs.insert(role.to_string(), digest);
        Ok(())
    }

    pub fn output(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    pub fn count(&mut self, key: &str, value: impl Serialize) {
        let value = serde_json::to_value(value).expect("count values serialize");
        self.counts.insert(key.to_string(), value);
    }

    /// Closes the current timing phase.
    pub fn phase(&mut self, name: &str) {
        let now = Instant::now();
        self.timings
            .insert(name.to_string(), (now - self.phase_start).as_secs_f64());
        self.phase_start = now;
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.output_path(name);
        let mut file = AtomicFile::create(&path)?;
        serde_json::to_writer_pretty(&mut file, value)?;
        file.write_all(b"\n")?;
        file.finish()?;
        self.output(path);
        Ok(())
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.output_path(name);
        let mut file = AtomicFile::create(&path)?;
        file.write_all(text.as_bytes())?;
        file.finish()?;
        self.output(path);
        Ok(())
    }

    pub fn finish(mut self, config: &BTreeMap<String, String>) -> Result<()> {
        let mut outputs = BTreeMap::new();
        for path in &self.outputs {
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            outputs.insert(name, digest_file(path)?);
        }
        let manifest = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            config,
            config_hash: config_hash(config),
            inputs: &self.inputs,
            outputs,
            counts: &self.counts,
        };
        self.timings
            .insert("total".to_string(), self.started.elapsed().as_secs_f64());
        let timings = std::mem::take(&mut self.timings);

        for (name, value) in [
            ("manifest.json", serde_json::to_value(&manifest)?),
            ("timings.json", serde_json::to_value(&timings)?),
        ] {
            let path = self.output_path(name);
            let mut file = AtomicFile::create(&path)?;
            serde_json::to_writer_pretty(&mut file, &value)?;
            file.write_all(b"\n")?;
            file.finish()?;
        }
        Ok(())
    }
}
