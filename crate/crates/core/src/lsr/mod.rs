//! LM-supervised retriever training.
//!
//! For each context `x` with ground-truth continuation `y`, the retriever's
//! distribution over its top-k candidates, `P_R(d|x) = softmax(s(d,x)/γ)`,
//! is pulled toward the LM's document-usefulness distribution
//! `Q(d|x,y) = softmax(score(y|d∘x)/β)` by minimizing `KL(P_R ‖ Q)`. Only
//! encoder parameters move; `Q` is a constant computed from LM scores.

mod checkpoint;
mod grad;
mod optim;
mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use grad::{loss_and_gradient, ExampleTerm};
pub use optim::{Adam, WarmupSchedule};
pub use trainer::{
    training_loop, RefreshMetrics, RefreshProbe, StepMetrics, Trainer, TrainingOutcome, TrainingRun,
};

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderError;
use crate::index::{IndexError, IndexMode};
use crate::lm::{ContinuationScore, LmError};
use crate::numeric::{softmax_with_temperature, Scalar};

#[derive(Debug, thiserror::Error)]
pub enum LsrError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("continuation of zero tokens cannot rank documents")]
    DegenerateExample,
    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },
    #[error("candidate {0} is not in the corpus")]
    UnknownDocument(String),
    #[error("checkpoint write to {path} failed ({message}); last good checkpoint: {last_good:?}")]
    Checkpoint { path: String, message: String, last_good: Option<String> },
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// Hyperparameters of one training run. Defaults follow the original
/// large-scale recipe; the bundled harness overrides most of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    /// Retrieval softmax temperature γ.
    pub gamma: f64,
    /// LM softmax temperature β.
    pub beta: f64,
    /// Candidates retrieved per context.
    pub k_train: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub warmup_ratio: f64,
    /// Steps between index refreshes (T).
    pub refresh_interval: u64,
    pub total_steps: u64,
    pub seed: u64,
    /// Steps a triggered rebuild runs in the background before the trainer
    /// switches to it.
    pub refresh_lag: u64,
    pub index_mode: IndexMode,
    /// Concurrent LM scoring calls per example.
    pub in_flight: usize,
    /// Examples in the fixed probe set scored at every refresh.
    pub probe_examples: usize,
    pub dim: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            gamma: 0.1,
            beta: 0.1,
            k_train: 20,
            learning_rate: 2e-5,
            batch_size: 64,
            warmup_ratio: 0.1,
            refresh_interval: 3000,
            total_steps: 25_000,
            seed: 0,
            refresh_lag: 1,
            index_mode: IndexMode::Exact,
            in_flight: 1,
            probe_examples: 32,
            dim: 64,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), LsrError> {
        let bad = |m: &str| Err(LsrError::Config(m.to_string()));
        if !(self.gamma > 0.0) {
            return bad("gamma must be positive");
        }
        if !(self.beta > 0.0) {
            return bad("beta must be positive");
        }
        if self.k_train < 1 || self.batch_size < 1 || self.dim < 1 {
            return bad("k_train, batch_size and dim must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return bad("warmup_ratio must lie in [0, 1]");
        }
        if self.refresh_interval < 1 {
            return bad("refresh_interval must be at least 1");
        }
        Ok(())
    }
}

/// Aligned `P_R` and `Q` over one context's candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodPair<T> {
    pub doc_ids: Vec<String>,
    pub retrieval_probs: Vec<T>,
    pub lm_probs: Vec<T>,
}

/// `P_R(d|x)`: temperatured softmax over the retrieved set only.
pub fn retrieval_likelihood<T: Scalar>(scores: &[T], gamma: T) -> Result<Vec<T>, LsrError> {
    if !(gamma > T::zero()) {
        return Err(LsrError::Config(format!("gamma must be positive, got {gamma}")));
    }
    if scores.is_empty() {
        return Err(LsrError::Domain("no retrieved documents".into()));
    }
    softmax_with_temperature(scores, gamma).ok_or_else(|| LsrError::Domain("non-finite similarity score".into()))
}

/// `Q(d|x,y)`: temperatured softmax over length-normalized continuation
/// log-likelihoods, `total_logprob / token_count`.
pub fn lm_likelihood<T: Scalar>(scores: &[ContinuationScore], beta: T) -> Result<Vec<T>, LsrError> {
    if !(beta > T::zero()) {
        return Err(LsrError::Config(format!("beta must be positive, got {beta}")));
    }
    if scores.is_empty() {
        return Err(LsrError::Domain("no document scores".into()));
    }
    let per_token = scores
        .iter()
        .map(|s| s.mean_logprob().map(T::of).ok_or(LsrError::DegenerateExample))
        .collect::<Result<Vec<T>, _>>()?;
    softmax_with_temperature(&per_token, beta).ok_or_else(|| LsrError::Domain("non-finite LM score".into()))
}

/// `Σ p_i ln(p_i / q_i)` with `0 · ln 0 = 0`.
pub fn kl_divergence<T: Scalar>(p: &[T], q: &[T]) -> Result<T, LsrError> {
    if p.len() != q.len() {
        return Err(LsrError::Domain(format!("length mismatch: {} vs {}", p.len(), q.len())));
    }
    let mut total = T::zero();
    for (&pi, &qi) in p.iter().zip(q) {
        if pi < T::zero() || qi < T::zero() {
            return Err(LsrError::Domain("negative probability".into()));
        }
        if pi == T::zero() {
            continue;
        }
        if qi == T::zero() {
            return Err(LsrError::Domain("q is zero where p is positive".into()));
        }
        total += pi * (pi / qi).ln();
    }
    // Rounding can leave a tiny negative value for p == q.
    Ok(total.max(T::zero()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn retrieval_likelihood_examples() {
        let u = retrieval_likelihood(&[0.3f64, 0.3, 0.3, 0.3], 0.1).unwrap();
        assert!(u.iter().all(|p| (p - 0.25).abs() < 1e-15));
        let p = retrieval_likelihood(&[1.0, 0.0], 0.1).unwrap();
        let expected = 1.0 / (1.0 + (-10.0f64).exp());
        assert!((p[0] - expected).abs() < 1e-15);
        assert!((p[0] - 0.9999546).abs() < 1e-7);
        assert!((p[1] - 0.0000454).abs() < 1e-7);
        let hot = retrieval_likelihood(&[1.0f64, 0.0], 1e6).unwrap();
        assert!((hot[0] - 0.5).abs() < 1e-6);
        assert!(matches!(retrieval_likelihood(&[1.0], 0.0), Err(LsrError::Config(_))));
        assert!(matches!(retrieval_likelihood::<f64>(&[], 0.1), Err(LsrError::Domain(_))));
    }

    fn score(per_token: &[f64]) -> ContinuationScore {
        ContinuationScore::new(per_token.to_vec()).unwrap()
    }

    #[test]
    fn lm_likelihood_examples() {
        let u: Vec<f64> = lm_likelihood(&[score(&[-1.0, -2.0]), score(&[-1.5, -1.5])], 0.1).unwrap();
        assert!((u[0] - 0.5).abs() < 1e-15);
        let q: Vec<f64> = lm_likelihood(&[score(&[-1.0; 3]), score(&[-2.0; 3])], 0.1).unwrap();
        assert!((q[0] - 0.9999546).abs() < 1e-7);
        assert!((q[1] - 0.0000454).abs() < 1e-7);
        let rev: Vec<f64> = lm_likelihood(&[score(&[-2.0; 3]), score(&[-1.0; 3])], 0.1).unwrap();
        assert_eq!(rev, vec![q[1], q[0]]);
        assert!(matches!(lm_likelihood::<f64>(&[score(&[])], 0.1), Err(LsrError::DegenerateExample)));
        assert!(matches!(lm_likelihood::<f64>(&[score(&[-1.0])], -1.0), Err(LsrError::Config(_))));
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let v = kl_divergence(&[0.5, 0.5], &[0.9, 0.1]).unwrap();
        assert!((v - 0.5 * (25.0f64 / 9.0).ln()).abs() < 1e-12);
        assert!((v - 0.5108).abs() < 1e-4);
        let v = kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-12);
        assert!(matches!(kl_divergence(&[1.0], &[0.5, 0.5]), Err(LsrError::Domain(_))));
        assert!(matches!(kl_divergence(&[0.5, 0.5], &[1.0, 0.0]), Err(LsrError::Domain(_))));
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = TrainingConfig::default();
        assert_eq!((c.gamma, c.beta, c.k_train, c.batch_size), (0.1, 0.1, 20, 64));
        assert_eq!((c.learning_rate, c.warmup_ratio), (2e-5, 0.1));
        assert_eq!((c.refresh_interval, c.total_steps), (3000, 25_000));
        assert!(c.validate().is_ok());
        assert!(TrainingConfig { gamma: 0.0, ..c.clone() }.validate().is_err());
        assert!(TrainingConfig { warmup_ratio: 1.5, ..c }.validate().is_err());
        let parsed: TrainingConfig = serde_json::from_str(r#"{"gamma": 0.5, "total_steps": 10}"#).unwrap();
        assert_eq!(parsed.gamma, 0.5);
        assert_eq!(parsed.beta, 0.1);
    }

    fn dist(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(1e-3..1.0f64, n).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn kl_nonnegative(p in dist(5), q in dist(5)) {
            prop_assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
            prop_assert!(kl_divergence(&p, &p).unwrap() <= 1e-12);
        }

        #[test]
        fn retrieval_sharpens_as_gamma_falls(scores in prop::collection::vec(-1.0..1.0f64, 2..10)) {
            let mut last = 0.0;
            for gamma in [10.0, 1.0, 0.5, 0.1, 0.05, 0.01] {
                let p = retrieval_likelihood(&scores, gamma).unwrap();
                let top = p.iter().copied().fold(0.0, f64::max);
                prop_assert!(top >= last - 1e-12);
                last = top;
            }
        }
    }
}
