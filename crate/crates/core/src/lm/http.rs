//! HTTP client for a remote scoring LM.
//!
//! Request: `{"prompt": string, "continuation": string|null, "want": "score"|"dist"}`.
//! Response: `{"logprobs": [number]}` for scores, `{"probs": [number]}` for
//! distributions. The adapter works at string level; prompts are logged by
//! hash only.

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ContinuationScore, LanguageModel, LmError, NextTokenDistribution, Prompt};
use crate::tokenizer::{TokenId, Tokenizer};
use crate::transport::{is_transient_status, with_retries, Attempt, RateLimiter, RetryPolicy};

pub const ENDPOINT_ENV: &str = "REPLUG_LM_ENDPOINT";
pub const TOKEN_ENV: &str = "REPLUG_LM_TOKEN";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmRequest {
    pub prompt: String,
    pub continuation: Option<String>,
    pub want: Want,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Want {
    Score,
    Dist,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LmResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
}

pub(crate) fn prompt_hash(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..6])
}

#[derive(Debug)]
pub struct HttpLm {
    endpoint: String,
    auth_token: Option<String>,
    tokenizer: Arc<Tokenizer>,
    window: usize,
    retry: RetryPolicy,
    limiter: RateLimiter,
    agent: ureq::Agent,
}

impl HttpLm {
    pub fn new(endpoint: impl Into<String>, tokenizer: Arc<Tokenizer>, window: usize) -> Self {
        Self {
            endpoint: endpoint.into(),
            auth_token: None,
            tokenizer,
            window,
            retry: RetryPolicy::default(),
            limiter: RateLimiter::new(Duration::ZERO),
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(60)).build(),
        }
    }

    /// Endpoint from `REPLUG_LM_ENDPOINT`, bearer token from `REPLUG_LM_TOKEN`.
    pub fn from_env(tokenizer: Arc<Tokenizer>, window: usize) -> Result<Self, LmError> {
        let endpoint = std::env::var(ENDPOINT_ENV).map_err(|_| LmError::Config(format!("{ENDPOINT_ENV} is not set")))?;
        let mut lm = Self::new(endpoint, tokenizer, window);
        lm.auth_token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
        Ok(lm)
    }

    pub fn with_auth_token(mut self, token: impl Into<String>) -> Self {
        self.auth_token = Some(token.into());
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_min_interval(mut self, interval: Duration) -> Self {
        self.limiter = RateLimiter::new(interval);
        self
    }

    /// Sends one request with retry and backoff; returns the response and the
    /// number of retries used.
    pub fn request(&self, req: &LmRequest) -> Result<(LmResponse, u32), LmError> {
        let hash = prompt_hash(&req.prompt);
        log::info!("lm request want={:?} prompt={hash}", req.want);
        let result = with_retries(&self.retry, |attempt| {
            self.limiter.acquire();
            let mut call = self.agent.post(&self.endpoint);
            if let Some(tok) = &self.auth_token {
                call = call.set("Authorization", &format!("Bearer {tok}"));
            }
            match call.send_json(req) {
                Ok(r) => r
                    .into_json::<LmResponse>()
                    .map_err(|e| Attempt::Permanent(LmError::InvalidResponse(e.to_string()))),
                Err(ureq::Error::Status(status, r)) => {
                    let message = r.into_string().unwrap_or_default();
                    log::warn!("lm prompt={hash} attempt={attempt} HTTP {status}");
                    let err = LmError::Service { status, message };
                    if is_transient_status(status) {
                        Err(Attempt::Transient(err))
                    } else {
                        Err(Attempt::Permanent(err))
                    }
                }
                Err(e) => Err(Attempt::Transient(LmError::Transport { attempts: attempt + 1, message: e.to_string() })),
            }
        });
        match result {
            Ok((resp, retries)) => Ok((resp, retries)),
            Err(e) => Err(match e.error {
                LmError::Transport { message, .. } => LmError::Transport { attempts: e.attempts, message },
                other => other,
            }),
        }
    }

    fn check_window(&self, needed: usize) -> Result<(), LmError> {
        if needed > self.window {
            return Err(LmError::Window { needed, window: self.window });
        }
        Ok(())
    }
}

impl LanguageModel for HttpLm {
    fn vocab_size(&self) -> usize {
        self.tokenizer.vocab_size()
    }

    fn context_window(&self) -> usize {
        self.window
    }

    fn score_continuation(&self, prompt: &Prompt, continuation: &[TokenId]) -> Result<ContinuationScore, LmError> {
        self.check_window(prompt.len() + continuation.len())?;
        if continuation.is_empty() {
            return ContinuationScore::new(Vec::new());
        }
        let req = LmRequest {
            prompt: self.tokenizer.detokenize(prompt.tokens()),
            continuation: Some(self.tokenizer.detokenize(continuation)),
            want: Want::Score,
        };
        let (resp, _) = self.request(&req)?;
        let logprobs = resp.logprobs.ok_or(LmError::Capability("logprobs"))?;
        if logprobs.len() != continuation.len() {
            return Err(LmError::InvalidResponse(format!(
                "{} logprobs for {} continuation tokens",
                logprobs.len(),
                continuation.len()
            )));
        }
        ContinuationScore::new(logprobs)
    }

    fn next_token_distribution(&self, prompt: &Prompt) -> Result<NextTokenDistribution, LmError> {
        self.check_window(prompt.len() + 1)?;
        let req = LmRequest { prompt: self.tokenizer.detokenize(prompt.tokens()), continuation: None, want: Want::Dist };
        let (resp, _) = self.request(&req)?;
        let probs = resp.probs.ok_or(LmError::Capability("probs"))?;
        if probs.len() != self.vocab_size() {
            return Err(LmError::InvalidResponse(format!("{} probs for vocabulary of {}", probs.len(), self.vocab_size())));
        }
        NextTokenDistribution::new(probs)
    }
}
