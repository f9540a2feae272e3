//! Retrieval plus ensembled inference over a chunk store.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::ChunkStore;
use crate::encoder::{cosine_similarity, embed_all, EncoderError, EncoderParams};
use crate::ensemble::{compute_weights, ensemble_next_token, EnsembleError, EnsembleOptions, EnsembleWeights};
use crate::index::{IndexError, IndexMode, IndexSnapshot, ScoredDocument};
use crate::lm::{LanguageModel, LmError, NextTokenDistribution, Prompt};
use crate::tokenizer::{TokenId, Tokenizer};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("retrieval unavailable: {0}")]
    RetrievalUnavailable(String),
    #[error("document {0} is not in the chunk store")]
    UnknownDocument(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Lm(#[from] LmError),
}

/// Encoder parameters together with the index they produced.
#[derive(Debug, Clone)]
pub struct Retriever {
    pub params: Arc<EncoderParams<f64>>,
    pub snapshot: Arc<IndexSnapshot<f64>>,
}

impl Retriever {
    /// Embeds every chunk with `params` and indexes the result as generation 1.
    pub fn build(params: EncoderParams<f64>, store: &ChunkStore, mode: IndexMode) -> Result<Self, EngineError> {
        let embeddings = embed_all(&params, store.chunks().iter().map(|c| (c.doc_id.as_str(), c.tokens.as_slice())))?;
        let snapshot = IndexSnapshot::build(embeddings, mode, 1)?;
        Ok(Self { params: Arc::new(params), snapshot: Arc::new(snapshot) })
    }

    pub fn from_parts(params: EncoderParams<f64>, snapshot: IndexSnapshot<f64>) -> Result<Self, EngineError> {
        if params.dim() != snapshot.dim() {
            return Err(EngineError::Config(format!(
                "encoder dim {} does not match index dim {}",
                params.dim(),
                snapshot.dim()
            )));
        }
        Ok(Self { params: Arc::new(params), snapshot: Arc::new(snapshot) })
    }

    pub fn search(&self, query: &[TokenId], k: usize) -> Result<Vec<ScoredDocument<f64>>, EngineError> {
        let q = self.params.embed(query)?;
        Ok(self.snapshot.search_top_k(&q, k)?)
    }
}

/// Chooses the documents to ensemble for a query. `salt` identifies the
/// call site (item and window) so randomized selectors stay reproducible.
pub trait DocumentSelector: Sync {
    fn select(&self, query: &[TokenId], k: usize, salt: u64) -> Result<Vec<ScoredDocument<f64>>, EngineError>;
}

impl DocumentSelector for Retriever {
    fn select(&self, query: &[TokenId], k: usize, _salt: u64) -> Result<Vec<ScoredDocument<f64>>, EngineError> {
        self.search(query, k)
    }
}

/// Uniformly random documents, still weighted by their cosine to the query.
pub struct RandomSelector<'a> {
    pub retriever: &'a Retriever,
    pub seed: u64,
}

impl DocumentSelector for RandomSelector<'_> {
    fn select(&self, query: &[TokenId], k: usize, salt: u64) -> Result<Vec<ScoredDocument<f64>>, EngineError> {
        let snap = &self.retriever.snapshot;
        if snap.is_empty() {
            return Err(EngineError::RetrievalUnavailable("empty index".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let q = self.retriever.params.embed(query)?;
        let mut picked = sample(&mut rng, snap.len(), k.min(snap.len()))
            .into_iter()
            .map(|i| {
                let id = &snap.ids()[i];
                let d = snap.get(id).expect("sampled id is indexed");
                Ok(ScoredDocument { doc_id: id.clone(), score: cosine_similarity(&q, &d)?, generation: snap.generation() })
            })
            .collect::<Result<Vec<_>, EngineError>>()?;
        picked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id)));
        Ok(picked)
    }
}

/// Fixed documents per call site, all with score 0 (uniform weights).
pub struct FixedSelector {
    pub docs: Vec<Vec<String>>,
}

impl DocumentSelector for FixedSelector {
    fn select(&self, _query: &[TokenId], k: usize, salt: u64) -> Result<Vec<ScoredDocument<f64>>, EngineError> {
        let ids = self
            .docs
            .get(salt as usize)
            .ok_or_else(|| EngineError::RetrievalUnavailable(format!("no fixed documents for item {salt}")))?;
        Ok(ids.iter().take(k).map(|id| ScoredDocument { doc_id: id.clone(), score: 0.0, generation: 0 }).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineSettings {
    /// Trailing context tokens used as the retrieval query.
    pub query_window: usize,
    pub in_flight: usize,
    /// Fall back to the bare LM when no index is available.
    pub allow_no_retrieval: bool,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self { query_window: 128, in_flight: 4, allow_no_retrieval: false }
    }
}

/// Output of one retrieve-then-ensemble call. `docs` is empty when the
/// no-retrieval fallback answered.
#[derive(Debug, Clone)]
pub struct EnsembleOutput {
    pub docs: Vec<ScoredDocument<f64>>,
    pub weights: EnsembleWeights,
    pub distribution: NextTokenDistribution,
}

pub struct Engine {
    pub tokenizer: Arc<Tokenizer>,
    pub store: Arc<ChunkStore>,
    pub lm: Arc<dyn LanguageModel>,
    pub retriever: Option<Arc<Retriever>>,
    pub settings: EngineSettings,
}

impl Engine {
    pub fn new(tokenizer: Arc<Tokenizer>, store: Arc<ChunkStore>, lm: Arc<dyn LanguageModel>, settings: EngineSettings) -> Self {
        Self { tokenizer, store, lm, retriever: None, settings }
    }

    pub fn with_retriever(mut self, retriever: Arc<Retriever>) -> Self {
        self.retriever = Some(retriever);
        self
    }

    pub fn options(&self) -> EnsembleOptions {
        EnsembleOptions { in_flight: self.settings.in_flight }
    }

    /// The trailing `query_window` tokens of `x`.
    pub fn query_of<'x>(&self, x: &'x [TokenId]) -> &'x [TokenId] {
        &x[x.len().saturating_sub(self.settings.query_window)..]
    }

    pub fn retriever(&self) -> Result<&Retriever, EngineError> {
        match &self.retriever {
            Some(r) if !r.snapshot.is_empty() && !self.store.is_empty() => Ok(r),
            _ => Err(EngineError::RetrievalUnavailable("no indexed documents".into())),
        }
    }

    pub fn retrieve(&self, x: &[TokenId], k: usize) -> Result<Vec<ScoredDocument<f64>>, EngineError> {
        if k < 1 {
            return Err(EngineError::Config("k must be at least 1".into()));
        }
        self.retriever()?.search(self.query_of(x), k)
    }

    pub fn doc_tokens(&self, docs: &[ScoredDocument<f64>]) -> Result<Vec<&[TokenId]>, EngineError> {
        docs.iter()
            .map(|d| {
                self.store
                    .get(&d.doc_id)
                    .map(|c| c.tokens.as_slice())
                    .ok_or_else(|| EngineError::UnknownDocument(d.doc_id.clone()))
            })
            .collect()
    }

    /// Retrieves the top `k` documents for `x`, weights them and returns the
    /// ensembled next-token distribution.
    pub fn retrieve_and_ensemble(&self, x: &[TokenId], k: usize) -> Result<EnsembleOutput, EngineError> {
        let docs = match self.retrieve(x, k) {
            Ok(docs) => docs,
            Err(EngineError::RetrievalUnavailable(why)) if self.settings.allow_no_retrieval => {
                log::warn!("retrieval unavailable ({why}); answering without documents");
                let prompt = Prompt::fit_document(&[], x, 1, self.lm.context_window())?;
                let distribution = self.lm.next_token_distribution(&prompt)?;
                return Ok(EnsembleOutput { docs: Vec::new(), weights: EnsembleWeights::uniform(Vec::new()), distribution });
            }
            Err(e) => return Err(e),
        };
        let weights = compute_weights(&docs)?;
        let tokens = self.doc_tokens(&docs)?;
        let distribution = ensemble_next_token(&*self.lm, x, &tokens, &weights, self.options())?;
        Ok(EnsembleOutput { docs, weights, distribution })
    }
}
