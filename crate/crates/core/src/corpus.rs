//! Corpus ingestion: fixed-length chunking of raw documents into retrieval
//! units, and (context, continuation) training examples with a source-level
//! overlap guard against the retrieval corpus.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::tokenizer::{TokenId, Tokenizer};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One raw input document, as read from the ingestion NDJSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    /// Evaluation files may name this field `doc_id`.
    #[serde(alias = "doc_id")]
    pub source_id: String,
    pub text: String,
}

impl RawDocument {
    pub fn new(source_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self { source_id: source_id.into(), text: text.into() }
    }
}

/// A retrieval unit: a window of at most `chunk_length` tokens from one source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentChunk {
    pub doc_id: String,
    pub source_id: String,
    pub text: String,
    pub tokens: Vec<TokenId>,
}

impl DocumentChunk {
    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }
}

/// Chunks addressable by doc id, in ingestion order.
#[derive(Debug, Clone, Default)]
pub struct ChunkStore {
    chunks: Vec<DocumentChunk>,
    by_id: HashMap<String, usize>,
}

impl ChunkStore {
    pub fn new(chunks: Vec<DocumentChunk>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(chunks.len());
        for (i, c) in chunks.iter().enumerate() {
            if by_id.insert(c.doc_id.clone(), i).is_some() {
                return Err(CorpusError::Config(format!("duplicate chunk id {}", c.doc_id)));
            }
        }
        Ok(Self { chunks, by_id })
    }

    pub fn get(&self, doc_id: &str) -> Option<&DocumentChunk> {
        self.by_id.get(doc_id).map(|&i| &self.chunks[i])
    }

    pub fn chunks(&self) -> &[DocumentChunk] {
        &self.chunks
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct ChunkRecord {
    doc_id: String,
    source_id: String,
    text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub chunk_length: usize,
    pub min_tail_length: usize,
    pub tokenizer_id: String,
    pub chunk_count: usize,
    pub excluded_source_ids: BTreeSet<String>,
    #[serde(default)]
    pub duplicates_dropped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkConfig {
    pub chunk_length: usize,
    pub min_tail_length: usize,
    /// Drop chunks whose text exactly duplicates an earlier chunk.
    pub dedup: bool,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self { chunk_length: 128, min_tail_length: 32, dedup: true }
    }
}

/// Context `x` and ground-truth continuation `y` drawn from one source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub context: Vec<TokenId>,
    pub continuation: Vec<TokenId>,
    pub source_id: String,
}

#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    pub examples: Vec<TrainingExample>,
    /// Sources the retrieval corpus must not contain.
    pub excluded_source_ids: BTreeSet<String>,
    /// Raw documents too short for a single example.
    pub skipped: usize,
}

/// Window end for a cut starting at `start`, pulled back so byte-level cuts
/// never split a UTF-8 sequence.
fn window_end(tokenizer: &Tokenizer, tokens: &[TokenId], start: usize, len: usize) -> usize {
    let mut end = (start + len).min(tokens.len());
    if matches!(tokenizer, Tokenizer::Byte) && end < tokens.len() {
        while end > start + 1 && (tokens[end] & 0xC0) == 0x80 {
            end -= 1;
        }
    }
    end
}

/// Splits every non-excluded raw document into consecutive non-overlapping
/// windows of `chunk_length` tokens. A final window shorter than
/// `min_tail_length` is dropped. Chunk ids are `source_id#window_index`.
pub fn chunk_corpus(
    tokenizer: &Tokenizer,
    raw_docs: &[RawDocument],
    config: &ChunkConfig,
    excluded_source_ids: &BTreeSet<String>,
) -> Result<(CorpusManifest, Vec<DocumentChunk>), CorpusError> {
    if config.chunk_length < 1 {
        return Err(CorpusError::Config("chunk_length must be at least 1".into()));
    }
    if config.min_tail_length < 1 || config.min_tail_length > config.chunk_length {
        return Err(CorpusError::Config(format!(
            "min_tail_length must lie in [1, chunk_length]; got {} with chunk_length {}",
            config.min_tail_length, config.chunk_length
        )));
    }

    let mut seen: HashSet<[u8; 32]> = HashSet::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    let mut duplicates = 0;
    let mut chunks = Vec::new();
    for raw in raw_docs {
        if excluded_source_ids.contains(&raw.source_id) {
            continue;
        }
        let tokens = tokenizer.tokenize(&raw.text);
        let mut start = 0;
        let mut window = 0;
        while start < tokens.len() {
            let end = window_end(tokenizer, &tokens, start, config.chunk_length);
            let piece = &tokens[start..end];
            let index = window;
            start = end;
            window += 1;
            if piece.len() < config.min_tail_length {
                continue;
            }
            let text = tokenizer.detokenize(piece);
            if config.dedup {
                let digest: [u8; 32] = Sha256::digest(text.as_bytes()).into();
                if !seen.insert(digest) {
                    duplicates += 1;
                    continue;
                }
            }
            let doc_id = format!("{}#{}", raw.source_id, index);
            if !seen_ids.insert(doc_id.clone()) {
                return Err(CorpusError::Config(format!("duplicate chunk id {doc_id}; source ids must be unique")));
            }
            chunks.push(DocumentChunk {
                doc_id,
                source_id: raw.source_id.clone(),
                text,
                tokens: piece.to_vec(),
            });
        }
    }

    let manifest = CorpusManifest {
        chunk_length: config.chunk_length,
        min_tail_length: config.min_tail_length,
        tokenizer_id: tokenizer.id(),
        chunk_count: chunks.len(),
        excluded_source_ids: excluded_source_ids.clone(),
        duplicates_dropped: duplicates,
    };
    Ok((manifest, chunks))
}

/// Cuts each raw document into consecutive `(context, continuation)` pairs of
/// exactly `context_length + continuation_length` tokens. Documents shorter
/// than one pair are skipped and counted.
pub fn make_training_examples(
    tokenizer: &Tokenizer,
    raw_docs: &[RawDocument],
    context_length: usize,
    continuation_length: usize,
) -> Result<TrainingSet, CorpusError> {
    if context_length == 0 || continuation_length == 0 {
        return Err(CorpusError::Config("context and continuation lengths must be positive".into()));
    }
    let span = context_length + continuation_length;
    let mut set = TrainingSet::default();
    for raw in raw_docs {
        let tokens = tokenizer.tokenize(&raw.text);
        if tokens.len() < span {
            log::warn!(
                "skipping {}: {} tokens, need {}",
                raw.source_id,
                tokens.len(),
                span
            );
            set.skipped += 1;
            continue;
        }
        for seq in tokens.chunks_exact(span) {
            set.examples.push(TrainingExample {
                context: seq[..context_length].to_vec(),
                continuation: seq[context_length..].to_vec(),
                source_id: raw.source_id.clone(),
            });
        }
        set.excluded_source_ids.insert(raw.source_id.clone());
    }
    Ok(set)
}

pub fn read_raw_documents<R: BufRead>(reader: R) -> Result<Vec<RawDocument>, CorpusError> {
    read_ndjson(reader)
}

/// Reads newline-delimited JSON, skipping blank lines.
pub fn read_ndjson<T, R>(reader: R) -> Result<Vec<T>, CorpusError>
where
    T: serde::de::DeserializeOwned,
    R: BufRead,
{
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| CorpusError::Parse { line: i + 1, source })?);
    }
    Ok(out)
}

pub fn write_chunks<W: Write>(mut out: W, chunks: &[DocumentChunk]) -> Result<(), CorpusError> {
    for c in chunks {
        let rec = ChunkRecord {
            doc_id: c.doc_id.clone(),
            source_id: c.source_id.clone(),
            text: c.text.clone(),
        };
        serde_json::to_writer(&mut out, &rec).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Loads chunk NDJSON, re-tokenizing each chunk's text.
pub fn read_chunks<R: BufRead>(tokenizer: &Tokenizer, reader: R) -> Result<Vec<DocumentChunk>, CorpusError> {
    let records: Vec<ChunkRecord> = read_ndjson(reader)?;
    Ok(records
        .into_iter()
        .map(|r| DocumentChunk {
            tokens: tokenizer.tokenize(&r.text),
            doc_id: r.doc_id,
            source_id: r.source_id,
            text: r.text,
        })
        .collect())
}
