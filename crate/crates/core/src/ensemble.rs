//! Ensembled inference: each retrieved document is prepended to the input
//! separately, the LM runs once per document, and the per-document outputs
//! are mixed with weights `λ(d, x) = softmax(s(d, x))` over the retrieved set.
//!
//! Documents and weights are chosen once per context and held fixed while
//! scoring or decoding a multi-token continuation. A failed pass fails the
//! whole call; surviving passes are never renormalized.

use crate::index::ScoredDocument;
use crate::lm::{LanguageModel, LmError, NextTokenDistribution, Prompt};
use crate::numeric::{log_sum_exp, softmax_with_temperature, Scalar};
use crate::parallel::bounded_map;
use crate::tokenizer::TokenId;

#[derive(Debug, thiserror::Error)]
pub enum EnsembleError {
    #[error("ensemble needs at least one scored document")]
    Empty,
    #[error("non-finite similarity score")]
    NonFinite,
    #[error("{docs} documents but {weights} weights")]
    Mismatch { docs: usize, weights: usize },
    #[error("max_len must be at least 1")]
    InvalidMaxLen,
    #[error("LM pass for document {doc} failed: {source}")]
    Pass {
        doc: usize,
        #[source]
        source: LmError,
    },
    #[error(transparent)]
    Lm(#[from] LmError),
}

/// Mixture weights aligned index-wise with `doc_ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleWeights {
    pub doc_ids: Vec<String>,
    pub weights: Vec<f64>,
}

impl EnsembleWeights {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Equal weights, e.g. for a caller-chosen document set.
    pub fn uniform(doc_ids: Vec<String>) -> Self {
        let w = 1.0 / doc_ids.len() as f64;
        Self { weights: vec![w; doc_ids.len()], doc_ids }
    }
}

/// Softmax over raw cosine scores, no temperature.
pub fn compute_weights<T: Scalar>(scored: &[ScoredDocument<T>]) -> Result<EnsembleWeights, EnsembleError> {
    if scored.is_empty() {
        return Err(EnsembleError::Empty);
    }
    let scores: Vec<f64> = scored.iter().map(|s| s.score.as_f64()).collect();
    let weights = softmax_with_temperature(&scores, 1.0).ok_or(EnsembleError::NonFinite)?;
    Ok(EnsembleWeights { doc_ids: scored.iter().map(|s| s.doc_id.clone()).collect(), weights })
}

#[derive(Debug, Clone, Copy)]
pub struct EnsembleOptions {
    /// Maximum concurrent LM passes.
    pub in_flight: usize,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self { in_flight: 4 }
    }
}

fn check(docs: &[&[TokenId]], weights: &EnsembleWeights) -> Result<(), EnsembleError> {
    if docs.is_empty() {
        return Err(EnsembleError::Empty);
    }
    if docs.len() != weights.len() {
        return Err(EnsembleError::Mismatch { docs: docs.len(), weights: weights.len() });
    }
    Ok(())
}

fn collect<R>(results: Vec<Result<R, LmError>>) -> Result<Vec<R>, EnsembleError> {
    results
        .into_iter()
        .enumerate()
        .map(|(doc, r)| r.map_err(|source| EnsembleError::Pass { doc, source }))
        .collect()
}

/// `p(y | x, D') = Σ_d λ(d, x) · p(y | d ∘ x)`.
pub fn ensemble_next_token(
    lm: &dyn LanguageModel,
    context: &[TokenId],
    docs: &[&[TokenId]],
    weights: &EnsembleWeights,
    opts: EnsembleOptions,
) -> Result<NextTokenDistribution, EnsembleError> {
    check(docs, weights)?;
    let window = lm.context_window();
    let dists = collect(bounded_map(docs, opts.in_flight, |_, doc| {
        let prompt = Prompt::fit_document(doc, context, 1, window)?;
        lm.next_token_distribution(&prompt)
    }))?;
    let mut mixed = vec![0.0; lm.vocab_size()];
    for (dist, &w) in dists.iter().zip(&weights.weights) {
        for (m, &p) in mixed.iter_mut().zip(dist.probs()) {
            *m += w * p;
        }
    }
    Ok(NextTokenDistribution::new(mixed)?)
}

/// Per-position ensembled log-probabilities of `continuation`:
/// `log Σ_d λ_d · p(y_t | d ∘ x ∘ y_<t)`. Exactly one LM call per document.
pub fn ensemble_token_logprobs(
    lm: &dyn LanguageModel,
    context: &[TokenId],
    continuation: &[TokenId],
    docs: &[&[TokenId]],
    weights: &EnsembleWeights,
    opts: EnsembleOptions,
) -> Result<Vec<f64>, EnsembleError> {
    check(docs, weights)?;
    let window = lm.context_window();
    let scores = collect(bounded_map(docs, opts.in_flight, |_, doc| {
        let prompt = Prompt::fit_document(doc, context, continuation.len(), window)?;
        lm.score_continuation(&prompt, continuation)
    }))?;
    let log_w: Vec<f64> = weights.weights.iter().map(|w| w.ln()).collect();
    let mut terms = vec![0.0; docs.len()];
    Ok((0..continuation.len())
        .map(|t| {
            for (d, s) in scores.iter().enumerate() {
                terms[d] = log_w[d] + s.per_token_logprobs[t];
            }
            log_sum_exp(&terms)
        })
        .collect())
}

pub fn ensemble_sequence_logprob(
    lm: &dyn LanguageModel,
    context: &[TokenId],
    continuation: &[TokenId],
    docs: &[&[TokenId]],
    weights: &EnsembleWeights,
    opts: EnsembleOptions,
) -> Result<f64, EnsembleError> {
    Ok(ensemble_token_logprobs(lm, context, continuation, docs, weights, opts)?.iter().sum())
}

/// Greedy decoding from the ensembled distribution; ties go to the lowest
/// token id. Stops before emitting a stop token or after `max_len` tokens.
pub fn ensemble_greedy_decode(
    lm: &dyn LanguageModel,
    context: &[TokenId],
    docs: &[&[TokenId]],
    weights: &EnsembleWeights,
    max_len: usize,
    stop_tokens: &[TokenId],
    opts: EnsembleOptions,
) -> Result<Vec<TokenId>, EnsembleError> {
    if max_len < 1 {
        return Err(EnsembleError::InvalidMaxLen);
    }
    let mut out = Vec::new();
    let mut history = context.to_vec();
    while out.len() < max_len {
        let next = ensemble_next_token(lm, &history, docs, weights, opts)?.argmax();
        if stop_tokens.contains(&next) {
            break;
        }
        out.push(next);
        history.push(next);
    }
    Ok(out)
}
