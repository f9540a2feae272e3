//! Shared dual encoder `E(·)`: a trainable token-embedding table with mean
//! pooling, plus cosine similarity between embeddings.
//!
//! Query and document encoders share every weight. Mean pooling makes the
//! embedding invariant to token order; this encoder has no positional signal.

pub(crate) mod remote;

pub use remote::{RemoteEmbeddings, RemoteEncoder};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numeric::Scalar;
use crate::tokenizer::TokenId;

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("cannot embed an empty token sequence")]
    EmptyInput,
    #[error("token id {id} outside vocabulary of size {vocab_size}")]
    OutOfVocabulary { id: TokenId, vocab_size: usize },
    #[error("zero-norm embedding has no direction")]
    DegenerateEmbedding,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("non-finite embedding entry")]
    NonFinite,
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("embedding service contract violation: {0}")]
    Contract(String),
}

/// Fixed-dimension embedding vector with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<T>(Vec<T>);

impl<T: Scalar> Embedding<T> {
    pub fn new(values: Vec<T>) -> Result<Self, EncoderError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EncoderError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn into_values(self) -> Vec<T> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> T {
        dot(&self.0, &self.0).sqrt()
    }

    pub fn scaled(&self, c: T) -> Self {
        Self(self.0.iter().map(|&v| v * c).collect())
    }

    pub fn cast<U: Scalar>(&self) -> Embedding<U> {
        Embedding(self.0.iter().map(|&v| U::of(v.as_f64())).collect())
    }
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// The trainable retriever parameters: a `vocab_size × dim` row-major table.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    vocab_size: usize,
    dim: usize,
    table: Vec<T>,
}

impl<T: Scalar> EncoderParams<T> {
    /// Seeded init with entries i.i.d. uniform in `[-1/sqrt(dim), 1/sqrt(dim)]`.
    pub fn init(vocab_size: usize, dim: usize, seed: u64) -> Self {
        assert!(vocab_size > 0 && dim > 0, "encoder shape must be non-empty");
        let bound = 1.0 / (dim as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = (0..vocab_size * dim).map(|_| T::of(rng.gen_range(-bound..=bound))).collect();
        Self { vocab_size, dim, table }
    }

    pub fn from_table(vocab_size: usize, dim: usize, table: Vec<T>) -> Result<Self, EncoderError> {
        if table.len() != vocab_size * dim {
            return Err(EncoderError::DimensionMismatch { expected: vocab_size * dim, actual: table.len() });
        }
        if table.iter().any(|v| !v.is_finite()) {
            return Err(EncoderError::NonFinite);
        }
        Ok(Self { vocab_size, dim, table })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn table(&self) -> &[T] {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut [T] {
        &mut self.table
    }

    pub fn row(&self, token: TokenId) -> &[T] {
        let start = token as usize * self.dim;
        &self.table[start..start + self.dim]
    }

    pub fn is_finite(&self) -> bool {
        self.table.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> EncoderParams<U> {
        EncoderParams {
            vocab_size: self.vocab_size,
            dim: self.dim,
            table: self.table.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }

    /// Mean of the token rows: the pooled last hidden representation.
    pub fn embed(&self, tokens: &[TokenId]) -> Result<Embedding<T>, EncoderError> {
        if tokens.is_empty() {
            return Err(EncoderError::EmptyInput);
        }
        let mut acc = vec![T::zero(); self.dim];
        for &t in tokens {
            if t as usize >= self.vocab_size {
                return Err(EncoderError::OutOfVocabulary { id: t, vocab_size: self.vocab_size });
            }
            for (a, &r) in acc.iter_mut().zip(self.row(t)) {
                *a += r;
            }
        }
        let n = T::count(tokens.len());
        for a in &mut acc {
            *a /= n;
        }
        Embedding::new(acc)
    }
}

/// Embeds every `(id, tokens)` pair, preserving order.
pub fn embed_all<'a, T, I>(params: &EncoderParams<T>, items: I) -> Result<Vec<(String, Embedding<T>)>, EncoderError>
where
    T: Scalar,
    I: IntoIterator<Item = (&'a str, &'a [TokenId])>,
{
    items.into_iter().map(|(id, tokens)| Ok((id.to_string(), params.embed(tokens)?))).collect()
}

/// `dot(a, b) / (|a| |b|)`, clamped to `[-1, 1]` against rounding.
pub fn cosine_similarity<T: Scalar>(a: &Embedding<T>, b: &Embedding<T>) -> Result<T, EncoderError> {
    if a.dim() != b.dim() {
        return Err(EncoderError::DimensionMismatch { expected: a.dim(), actual: b.dim() });
    }
    let na = a.norm();
    let nb = b.norm();
    if na == T::zero() || nb == T::zero() {
        return Err(EncoderError::DegenerateEmbedding);
    }
    let c = dot(a.values(), b.values()) / (na * nb);
    Ok(c.max(-T::one()).min(T::one()))
}
