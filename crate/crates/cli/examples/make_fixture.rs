//! Regenerates the synthetic corpus fixtures under `tests/fixtures`.
//!
//! ```text
//! cargo run -p medalforge-cli --example make_fixture -- crates/cli/tests/fixtures
//! ```

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use medalforge::mapping_table::Mapping;
use medalforge::synth::{CorpusParams, SyntheticCorpus};

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "crates/cli/tests/fixtures".into()),
    );
    std::fs::create_dir_all(&dir)?;
    let corpus = SyntheticCorpus::new(CorpusParams::default());
    corpus.write_jsonl(BufWriter::new(File::create(dir.join("corpus.jsonl"))?))?;

    // Raw dictionary: the clean table plus pairs the filter must drop.
    let mut rows: Vec<Mapping> = corpus.table().iter().cloned().collect();
    for (abbrev, expansion) in [
        ("U1", "lone unambiguous term"),
        ("Q1", "shared clinical term"),
        ("Q2", "shared clinical term"),
        ("Q1", "first private sense"),
        ("Q2", "second private sense"),
        ("Q2", "third private sense"),
    ] {
        rows.push(Mapping::new(abbrev, expansion).expect("valid fixture mapping"));
    }
    let mut tsv = String::new();
    for m in &rows {
        tsv.push_str(m.abbreviation());
        tsv.push('\t');
        tsv.push_str(m.expansion());
        tsv.push('\n');
    }
    std::fs::write(dir.join("mappings.tsv"), tsv)?;
    eprintln!(
        "wrote {} documents and {} mapping rows to {}",
        corpus.params.documents,
        rows.len(),
        dir.display()
    );
    Ok(())
}
