//! On-disk layout of an ingested corpus directory:
//!
//! * `manifest.json`: chunking parameters, tokenizer id, exclusions;
//! * `tokenizer.json`: the tokenizer (vocabulary included);
//! * `chunks.jsonl`: one `{"doc_id", "source_id", "text"}` per chunk.
//!
//! `ingest --harness` also writes `train.jsonl`, `eval.jsonl`,
//! `mock_lm.json` and `config.json` next to them.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use replug_core::corpus::{read_chunks, read_ndjson, write_chunks, ChunkStore, CorpusManifest, DocumentChunk, RawDocument};
use replug_core::Tokenizer;

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const TOKENIZER: &str = "tokenizer.json";
pub const CHUNKS: &str = "chunks.jsonl";
pub const MOCK_SPEC: &str = "mock_lm.json";

pub struct Corpus {
    pub dir: PathBuf,
    pub manifest: CorpusManifest,
    pub tokenizer: Arc<Tokenizer>,
    pub store: ChunkStore,
}

/// Accepts the corpus directory or its manifest file.
pub fn corpus_dir(path: &Path) -> PathBuf {
    if path.is_file() {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    } else {
        path.to_path_buf()
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let file = File::open(path).map_err(CliError::io(format!("opening {}", path.display())))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut out = BufWriter::new(File::create(path).map_err(CliError::io(format!("creating {}", path.display())))?);
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out).and_then(|_| out.flush()).map_err(CliError::io(format!("writing {}", path.display())))
}

pub fn write_ndjson<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let mut out = BufWriter::new(File::create(path).map_err(CliError::io(format!("creating {}", path.display())))?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        writeln!(out).map_err(CliError::io(format!("writing {}", path.display())))?;
    }
    out.flush().map_err(CliError::io(format!("writing {}", path.display())))
}

pub fn read_ndjson_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let file = File::open(path).map_err(CliError::io(format!("opening {}", path.display())))?;
    read_ndjson(BufReader::new(file)).map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))
}

pub fn read_raw_file(path: &Path) -> Result<Vec<RawDocument>, CliError> {
    read_ndjson_file(path)
}

pub fn save_corpus(
    dir: &Path,
    manifest: &CorpusManifest,
    tokenizer: &Tokenizer,
    chunks: &[DocumentChunk],
) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(CliError::io(format!("creating {}", dir.display())))?;
    write_json(&dir.join(MANIFEST), manifest)?;
    write_json(&dir.join(TOKENIZER), tokenizer)?;
    let path = dir.join(CHUNKS);
    let out = BufWriter::new(File::create(&path).map_err(CliError::io(format!("creating {}", path.display())))?);
    write_chunks(out, chunks)?;
    Ok(())
}

pub fn load_corpus(path: &Path) -> Result<Corpus, CliError> {
    let dir = corpus_dir(path);
    let manifest: CorpusManifest = read_json(&dir.join(MANIFEST))?;
    let tokenizer: Tokenizer = read_json(&dir.join(TOKENIZER))?;
    if tokenizer.id() != manifest.tokenizer_id {
        return Err(CliError::Config(format!(
            "tokenizer {} does not match the manifest's {}",
            tokenizer.id(),
            manifest.tokenizer_id
        )));
    }
    let chunks_path = dir.join(CHUNKS);
    let file = File::open(&chunks_path).map_err(CliError::io(format!("opening {}", chunks_path.display())))?;
    let chunks = read_chunks(&tokenizer, BufReader::new(file))?;
    if chunks.len() != manifest.chunk_count {
        return Err(CliError::Domain(format!(
            "manifest lists {} chunks, {} has {}",
            manifest.chunk_count,
            chunks_path.display(),
            chunks.len()
        )));
    }
    Ok(Corpus { dir, manifest, tokenizer: Arc::new(tokenizer), store: ChunkStore::new(chunks)? })
}
