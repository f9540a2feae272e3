//! The black-box LM boundary. Everything outside this module sees an LM only
//! through [`LanguageModel`]: continuation log-probabilities and next-token
//! distributions. Nothing here is differentiable.

pub(crate) mod http;
mod mock;

pub use http::{HttpLm, LmRequest, LmResponse, Want, ENDPOINT_ENV, TOKEN_ENV};
pub use mock::{MockLm, MockLmSpec, TopicRule, TopicSpec, DEFAULT_BOOST};

use crate::tokenizer::TokenId;

#[derive(Debug, thiserror::Error)]
pub enum LmError {
    #[error("context window exceeded: need {needed} tokens, window is {window}")]
    Window { needed: usize, window: usize },
    #[error("token id {id} outside LM vocabulary of size {vocab_size}")]
    Vocabulary { id: TokenId, vocab_size: usize },
    #[error("LM service returned HTTP {status}: {message}")]
    Service { status: u16, message: String },
    #[error("LM service response lacks required field `{0}`")]
    Capability(&'static str),
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("invalid LM response: {0}")]
    InvalidResponse(String),
    #[error("LM configuration error: {0}")]
    Config(String),
}

/// Token sequence fed to the LM: `d ∘ x` (document first) or a bare context.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Prompt {
    tokens: Vec<TokenId>,
}

impl Prompt {
    pub fn new(tokens: Vec<TokenId>) -> Self {
        Self { tokens }
    }

    /// Concatenates `document ∘ context`.
    pub fn with_document(document: &[TokenId], context: &[TokenId]) -> Self {
        let mut tokens = Vec::with_capacity(document.len() + context.len());
        tokens.extend_from_slice(document);
        tokens.extend_from_slice(context);
        Self { tokens }
    }

    /// Builds `document ∘ context`, dropping tokens from the document's left
    /// edge until the prompt plus `reserve` tokens fits in `window`. The
    /// context itself is never truncated.
    pub fn fit_document(document: &[TokenId], context: &[TokenId], reserve: usize, window: usize) -> Result<Self, LmError> {
        let fixed = context.len() + reserve;
        if fixed > window {
            return Err(LmError::Window { needed: fixed, window });
        }
        let room = window - fixed;
        let doc = if document.len() > room { &document[document.len() - room..] } else { document };
        Ok(Self::with_document(doc, context))
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn extended(&self, more: &[TokenId]) -> Self {
        let mut tokens = self.tokens.clone();
        tokens.extend_from_slice(more);
        Self { tokens }
    }
}

/// Probability vector over the LM vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct NextTokenDistribution {
    probs: Vec<f64>,
}

pub const DISTRIBUTION_TOLERANCE: f64 = 1e-6;

impl NextTokenDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self, LmError> {
        if probs.is_empty() {
            return Err(LmError::InvalidResponse("empty distribution".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(LmError::InvalidResponse("distribution has negative or non-finite entries".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > DISTRIBUTION_TOLERANCE {
            return Err(LmError::InvalidResponse(format!("distribution sums to {total}")));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, token: TokenId) -> f64 {
        self.probs.get(token as usize).copied().unwrap_or(0.0)
    }

    /// Highest-probability token, lowest id on ties.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best as TokenId
    }

    /// The `n` most likely tokens, ties by lowest id.
    pub fn top_n(&self, n: usize) -> Vec<(TokenId, f64)> {
        let mut v: Vec<(TokenId, f64)> = self.probs.iter().enumerate().map(|(i, &p)| (i as TokenId, p)).collect();
        v.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite").then(a.0.cmp(&b.0)));
        v.truncate(n);
        v
    }
}

/// Teacher-forced log-likelihood of a continuation (natural log).
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationScore {
    pub total_logprob: f64,
    pub per_token_logprobs: Vec<f64>,
}

impl ContinuationScore {
    pub fn new(per_token_logprobs: Vec<f64>) -> Result<Self, LmError> {
        if per_token_logprobs.iter().any(|l| l.is_nan() || *l > 0.0) {
            return Err(LmError::InvalidResponse("log-probabilities must be <= 0".into()));
        }
        Ok(Self { total_logprob: per_token_logprobs.iter().sum(), per_token_logprobs })
    }

    pub fn token_count(&self) -> usize {
        self.per_token_logprobs.len()
    }

    /// `total_logprob / token_count`, or `None` for an empty continuation.
    pub fn mean_logprob(&self) -> Option<f64> {
        (self.token_count() > 0).then(|| self.total_logprob / self.token_count() as f64)
    }
}

/// A frozen language model reachable only through prompt-in/score-out calls.
pub trait LanguageModel: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn context_window(&self) -> usize;

    fn score_continuation(&self, prompt: &Prompt, continuation: &[TokenId]) -> Result<ContinuationScore, LmError>;

    fn next_token_distribution(&self, prompt: &Prompt) -> Result<NextTokenDistribution, LmError>;
}

impl<L: LanguageModel + ?Sized> LanguageModel for std::sync::Arc<L> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn context_window(&self) -> usize {
        (**self).context_window()
    }
    fn score_continuation(&self, prompt: &Prompt, continuation: &[TokenId]) -> Result<ContinuationScore, LmError> {
        (**self).score_continuation(prompt, continuation)
    }
    fn next_token_distribution(&self, prompt: &Prompt) -> Result<NextTokenDistribution, LmError> {
        (**self).next_token_distribution(prompt)
    }
}
