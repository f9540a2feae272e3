//! Precomputed document-embedding store with top-k cosine search and
//! generational, atomically published rebuilds.
//!
//! A published [`IndexSnapshot`] is immutable. [`VectorIndex`] owns the
//! current snapshot; readers pin an `Arc` for one logical query while a
//! rebuild prepares the next generation and swaps it in.

mod ivf;
mod persist;

use std::collections::BTreeSet;
use std::sync::{Arc, Mutex, RwLock};
use std::thread::{self, JoinHandle};

use serde::{Deserialize, Serialize};

use crate::encoder::{dot, Embedding};
use crate::numeric::Scalar;

pub use ivf::{IvfParams, DEFAULT_RECALL_TARGET};
pub use persist::{read_records, write_records, RecordFile, MAGIC, VERSION};

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("cannot build an index from zero embeddings")]
    Empty,
    #[error("dimension mismatch for {doc_id}: expected {expected}, got {actual}")]
    DimensionMismatch { doc_id: String, expected: usize, actual: usize },
    #[error("duplicate doc id {0}")]
    DuplicateId(String),
    #[error("zero-norm embedding for {0}")]
    DegenerateEmbedding(String),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("no snapshot has been published")]
    NotPublished,
    #[error("snapshot file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexMode {
    #[default]
    Exact,
    Approximate,
}

/// One search hit; `generation` is the stamp of the entry it came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredDocument<T> {
    pub doc_id: String,
    pub score: T,
    pub generation: u64,
}

#[derive(Debug, Clone)]
pub struct IndexSnapshot<T> {
    generation: u64,
    dim: usize,
    mode: IndexMode,
    // Sorted ascending, so index order is doc-id order for tie-breaking.
    ids: Vec<String>,
    vectors: Vec<T>,
    norms: Vec<T>,
    stamps: Vec<u64>,
    ivf: Option<ivf::IvfIndex<T>>,
}

impl<T: Scalar> IndexSnapshot<T> {
    /// Builds an immutable snapshot stamped with `generation`.
    pub fn build<I>(embeddings: I, mode: IndexMode, generation: u64) -> Result<Self, IndexError>
    where
        I: IntoIterator<Item = (String, Embedding<T>)>,
    {
        let mut entries: Vec<(String, Embedding<T>)> = embeddings.into_iter().collect();
        if entries.is_empty() {
            return Err(IndexError::Empty);
        }
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let dim = entries[0].1.dim();
        let mut ids = Vec::with_capacity(entries.len());
        let mut vectors = Vec::with_capacity(entries.len() * dim);
        let mut norms = Vec::with_capacity(entries.len());
        for (id, e) in entries {
            if e.dim() != dim {
                return Err(IndexError::DimensionMismatch { doc_id: id, expected: dim, actual: e.dim() });
            }
            if ids.last() == Some(&id) {
                return Err(IndexError::DuplicateId(id));
            }
            let n = e.norm();
            if n == T::zero() {
                return Err(IndexError::DegenerateEmbedding(id));
            }
            norms.push(n);
            vectors.extend_from_slice(e.values());
            ids.push(id);
        }
        let stamps = vec![generation; ids.len()];
        let mut snap = Self { generation, dim, mode, ids, vectors, norms, stamps, ivf: None };
        if mode == IndexMode::Approximate {
            snap.ivf = Some(ivf::IvfIndex::build(&snap, &IvfParams::default()));
        }
        Ok(snap)
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> IndexMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id_set(&self) -> BTreeSet<&str> {
        self.ids.iter().map(String::as_str).collect()
    }

    fn vector(&self, i: usize) -> &[T] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, doc_id: &str) -> Option<Embedding<T>> {
        let i = self.ids.binary_search_by(|p| p.as_str().cmp(doc_id)).ok()?;
        Embedding::new(self.vector(i).to_vec()).ok()
    }

    /// Declared recall@10 target of the approximate structure, if any.
    pub fn recall_target(&self) -> Option<f64> {
        self.ivf.as_ref().map(|i| i.recall_target)
    }

    fn score(&self, i: usize, query: &[T], qnorm: T) -> T {
        let c = dot(self.vector(i), query) / (self.norms[i] * qnorm);
        c.max(-T::one()).min(T::one())
    }

    fn check_query(&self, query: &Embedding<T>, k: usize) -> Result<T, IndexError> {
        if k < 1 {
            return Err(IndexError::InvalidK);
        }
        if query.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                doc_id: "<query>".into(),
                expected: self.dim,
                actual: query.dim(),
            });
        }
        let n = query.norm();
        if n == T::zero() {
            return Err(IndexError::DegenerateEmbedding("<query>".into()));
        }
        Ok(n)
    }

    fn top_k_of(&self, candidates: impl Iterator<Item = usize>, query: &[T], qnorm: T, k: usize) -> Vec<ScoredDocument<T>> {
        let mut scored: Vec<(T, usize)> = candidates.map(|i| (self.score(i, query, qnorm), i)).collect();
        let order = |a: &(T, usize), b: &(T, usize)| b.0.partial_cmp(&a.0).expect("finite scores").then(a.1.cmp(&b.1));
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_by(order);
        scored
            .into_iter()
            .map(|(score, i)| ScoredDocument { doc_id: self.ids[i].clone(), score, generation: self.stamps[i] })
            .collect()
    }

    /// Full scan over every entry regardless of mode.
    pub fn exact_top_k(&self, query: &Embedding<T>, k: usize) -> Result<Vec<ScoredDocument<T>>, IndexError> {
        let qnorm = self.check_query(query, k)?;
        Ok(self.top_k_of(0..self.len(), query.values(), qnorm, k))
    }

    /// `min(k, len)` hits in non-increasing score order, ties by ascending doc id.
    pub fn search_top_k(&self, query: &Embedding<T>, k: usize) -> Result<Vec<ScoredDocument<T>>, IndexError> {
        let qnorm = self.check_query(query, k)?;
        match (&self.ivf, self.mode) {
            (Some(ivf), IndexMode::Approximate) => {
                let cands = ivf.candidates(query.values(), qnorm);
                Ok(self.top_k_of(cands.into_iter(), query.values(), qnorm, k))
            }
            _ => Ok(self.top_k_of(0..self.len(), query.values(), qnorm, k)),
        }
    }
}

/// Owner of the published snapshot. One rebuild runs at a time; later
/// requests queue on the rebuild lock and get the next generation.
#[derive(Debug)]
pub struct VectorIndex<T> {
    current: RwLock<Option<Arc<IndexSnapshot<T>>>>,
    rebuild_lock: Mutex<u64>,
}

impl<T: Scalar> Default for VectorIndex<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> VectorIndex<T> {
    pub fn new() -> Self {
        Self { current: RwLock::new(None), rebuild_lock: Mutex::new(0) }
    }

    /// Adopts an existing snapshot (e.g. loaded from disk) as the current one.
    pub fn from_snapshot(snapshot: IndexSnapshot<T>) -> Self {
        let generation = snapshot.generation;
        Self { current: RwLock::new(Some(Arc::new(snapshot))), rebuild_lock: Mutex::new(generation) }
    }

    /// Pins the current snapshot.
    pub fn snapshot(&self) -> Option<Arc<IndexSnapshot<T>>> {
        self.current.read().expect("index lock poisoned").clone()
    }

    pub fn generation(&self) -> u64 {
        *self.rebuild_lock.lock().expect("rebuild lock poisoned")
    }

    /// Builds generation `previous + 1` and publishes it with a single swap.
    pub fn build<I>(&self, embeddings: I, mode: IndexMode) -> Result<Arc<IndexSnapshot<T>>, IndexError>
    where
        I: IntoIterator<Item = (String, Embedding<T>)>,
    {
        let mut last = self.rebuild_lock.lock().expect("rebuild lock poisoned");
        let next = *last + 1;
        let snap = Arc::new(IndexSnapshot::build(embeddings, mode, next)?);
        if let Some(old) = self.snapshot() {
            let (old_ids, new_ids) = (old.id_set(), snap.id_set());
            if old_ids != new_ids {
                log::info!(
                    "corpus change at generation {next}: {} added, {} removed",
                    new_ids.difference(&old_ids).count(),
                    old_ids.difference(&new_ids).count()
                );
            }
        }
        *self.current.write().expect("index lock poisoned") = Some(snap.clone());
        *last = next;
        Ok(snap)
    }

    /// Rebuilds on a background thread. Readers keep whatever snapshot they
    /// pinned; queries issued after the swap see only the new generation.
    pub fn rebuild_async(
        self: &Arc<Self>,
        embeddings: Vec<(String, Embedding<T>)>,
        mode: IndexMode,
    ) -> JoinHandle<Result<Arc<IndexSnapshot<T>>, IndexError>> {
        let this = Arc::clone(self);
        thread::spawn(move || this.build(embeddings, mode))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(v: &[f64]) -> Embedding<f64> {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn corpus() -> Vec<(String, Embedding<f64>)> {
        vec![("d1".into(), e(&[1.0, 0.0])), ("d2".into(), e(&[0.0, 1.0]))]
    }

    #[test]
    fn aligned_vector_wins() {
        let s = IndexSnapshot::build(corpus(), IndexMode::Exact, 1).unwrap();
        let hits = s.search_top_k(&e(&[1.0, 0.0]), 1).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].doc_id, "d1");
        assert_eq!(hits[0].score, 1.0);
    }

    #[test]
    fn k_is_clamped() {
        let s = IndexSnapshot::build(corpus(), IndexMode::Exact, 1).unwrap();
        assert_eq!(s.search_top_k(&e(&[1.0, 0.0]), 5).unwrap().len(), 2);
    }

    #[test]
    fn ties_break_by_doc_id() {
        let entries = vec![
            ("b".to_string(), e(&[1.0, 0.0])),
            ("a".to_string(), e(&[2.0, 0.0])),
            ("c".to_string(), e(&[0.0, 1.0])),
        ];
        let s = IndexSnapshot::build(entries, IndexMode::Exact, 1).unwrap();
        let hits = s.search_top_k(&e(&[1.0, 0.0]), 3).unwrap();
        let ids: Vec<&str> = hits.iter().map(|h| h.doc_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn build_errors() {
        assert!(matches!(
            IndexSnapshot::<f64>::build(vec![], IndexMode::Exact, 1),
            Err(IndexError::Empty)
        ));
        let bad = vec![("a".to_string(), e(&[1.0, 0.0])), ("b".to_string(), e(&[1.0]))];
        assert!(matches!(
            IndexSnapshot::build(bad, IndexMode::Exact, 1),
            Err(IndexError::DimensionMismatch { .. })
        ));
        let dup = vec![("a".to_string(), e(&[1.0])), ("a".to_string(), e(&[2.0]))];
        assert!(matches!(IndexSnapshot::build(dup, IndexMode::Exact, 1), Err(IndexError::DuplicateId(_))));
        let zero = vec![("a".to_string(), e(&[0.0]))];
        assert!(matches!(
            IndexSnapshot::build(zero, IndexMode::Exact, 1),
            Err(IndexError::DegenerateEmbedding(_))
        ));
    }

    #[test]
    fn search_errors() {
        let s = IndexSnapshot::build(corpus(), IndexMode::Exact, 1).unwrap();
        assert!(matches!(s.search_top_k(&e(&[1.0, 0.0]), 0), Err(IndexError::InvalidK)));
        assert!(matches!(s.search_top_k(&e(&[1.0]), 1), Err(IndexError::DimensionMismatch { .. })));
    }

    #[test]
    fn generations_increase_per_build() {
        let idx = VectorIndex::new();
        assert!(idx.snapshot().is_none());
        let first = idx.build(corpus(), IndexMode::Exact).unwrap();
        assert_eq!(first.generation(), 1);
        assert_eq!(first.len(), 2);
        let second = idx.build(corpus(), IndexMode::Exact).unwrap();
        assert_eq!(second.generation(), 2);
        assert_eq!(idx.snapshot().unwrap().generation(), 2);
        // The pinned first snapshot is untouched.
        assert_eq!(first.generation(), 1);
        assert_eq!(first.search_top_k(&e(&[0.0, 1.0]), 1).unwrap()[0].generation, 1);
    }

    #[test]
    fn rebuild_with_same_content_gives_same_results() {
        let idx = Arc::new(VectorIndex::new());
        let a = idx.build(corpus(), IndexMode::Exact).unwrap();
        let b = idx.rebuild_async(corpus(), IndexMode::Exact).join().unwrap().unwrap();
        let q = e(&[0.3, 0.7]);
        let ha: Vec<_> = a.search_top_k(&q, 2).unwrap().into_iter().map(|h| (h.doc_id, h.score)).collect();
        let hb: Vec<_> = b.search_top_k(&q, 2).unwrap().into_iter().map(|h| (h.doc_id, h.score)).collect();
        assert_eq!(ha, hb);
        assert_eq!(b.generation(), 2);
    }

    #[test]
    fn get_returns_stored_vector() {
        let s = IndexSnapshot::build(corpus(), IndexMode::Exact, 1).unwrap();
        assert_eq!(s.get("d2").unwrap().values(), &[0.0, 1.0]);
        assert!(s.get("zz").is_none());
    }
}
