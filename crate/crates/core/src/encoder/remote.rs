//! Client for remote embedding services.
//!
//! Wire protocol: `POST {"texts": [string]}` answered by
//! `{"dim": int, "embeddings": [[number]]}`, one row per input text in order.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Embedding, EncoderError};
use crate::transport::{is_transient_status, with_retries, Attempt, RetryPolicy};

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub dim: usize,
    pub embeddings: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct RemoteEmbeddings {
    pub dim: usize,
    pub vectors: Vec<Embedding<f64>>,
    pub retry_count: u32,
}

#[derive(Debug, Clone)]
pub struct RemoteEncoder {
    endpoint: String,
    expected_dim: Option<usize>,
    retry: RetryPolicy,
    agent: ureq::Agent,
}

impl RemoteEncoder {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            expected_dim: None,
            retry: RetryPolicy::default(),
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(30)).build(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Rejects responses whose declared dimension differs from `dim`.
    pub fn expect_dim(mut self, dim: usize) -> Self {
        self.expected_dim = Some(dim);
        self
    }

    /// Embeds a non-empty batch, preserving order. Transient failures
    /// (transport, 429, 5xx) are retried up to the policy cap.
    pub fn embed_batch(&self, texts: &[String]) -> Result<RemoteEmbeddings, EncoderError> {
        if texts.is_empty() {
            return Err(EncoderError::EmptyInput);
        }
        let body = EmbedRequest { texts: texts.to_vec() };
        let (resp, retry_count) = with_retries(&self.retry, |_| {
            match self.agent.post(&self.endpoint).send_json(&body) {
                Ok(r) => r
                    .into_json::<EmbedResponse>()
                    .map_err(|e| Attempt::Permanent(format!("malformed response: {e}"))),
                Err(ureq::Error::Status(code, _)) if is_transient_status(code) => {
                    Err(Attempt::Transient(format!("HTTP {code}")))
                }
                Err(ureq::Error::Status(code, _)) => Err(Attempt::Permanent(format!("HTTP {code}"))),
                Err(e) => Err(Attempt::Transient(e.to_string())),
            }
        })
        .map_err(|e| EncoderError::Transport { attempts: e.attempts, message: e.error })?;

        if let Some(d) = self.expected_dim {
            if d != resp.dim {
                return Err(EncoderError::Contract(format!("service dim {} but client expects {d}", resp.dim)));
            }
        }
        if resp.embeddings.len() != texts.len() {
            return Err(EncoderError::Contract(format!(
                "{} embeddings for {} texts",
                resp.embeddings.len(),
                texts.len()
            )));
        }
        let vectors = resp
            .embeddings
            .into_iter()
            .map(|row| {
                if row.len() != resp.dim {
                    return Err(EncoderError::Contract(format!("row of length {} but dim {}", row.len(), resp.dim)));
                }
                Embedding::new(row)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(RemoteEmbeddings { dim: resp.dim, vectors, retry_count })
    }
}
