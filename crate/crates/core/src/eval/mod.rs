//! Evaluation protocols: bits per byte, multiple choice, open QA and the
//! random-document / ensemble-size sweep.

mod ablation;
mod bpb;
mod mc;
mod qa;

pub use ablation::{ablation_sweep, write_ablation_csv, AblationMode, AblationRow};
pub use bpb::{bits_per_byte, bpb_from_totals};
pub use mc::{multiple_choice_eval, McItem};
pub use qa::{normalize_answer, open_qa_eval, QaItem};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::EngineError;
use crate::ensemble::EnsembleError;
use crate::lm::LmError;
use crate::tokenizer::{TokenId, Tokenizer};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Domain(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Lm(#[from] LmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    LmBpb,
    MultipleChoice,
    OpenQa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub item_id: String,
    pub value: f64,
    /// Aggregation weight: scored bytes for BPB, 1 elsewhere.
    pub weight: f64,
}

/// `metric_value` is the weighted mean of the per-item values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub metric_value: f64,
    pub per_item: Vec<ItemResult>,
    /// Items left out of the metric (e.g. missing gold labels).
    pub skipped: usize,
    pub config_fingerprint: String,
}

impl EvalReport {
    pub fn new(task: Task, per_item: Vec<ItemResult>, skipped: usize, config: &serde_json::Value) -> Result<Self, EvalError> {
        let total: f64 = per_item.iter().map(|i| i.weight).sum();
        if !(total > 0.0) {
            return Err(EvalError::Domain("nothing to aggregate: zero total weight".into()));
        }
        let metric_value = per_item.iter().map(|i| i.weight * i.value).sum::<f64>() / total;
        Ok(Self { task, metric_value, per_item, skipped, config_fingerprint: fingerprint(config) })
    }
}

/// Hex sha256 of the compact JSON form of `config` (object keys sorted).
pub fn fingerprint(config: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(config.to_string().as_bytes()))
}

/// Tokens that `tail` adds after `head`, for tokenizers where tokenizing the
/// concatenation extends the tokens of `head`.
pub(crate) fn continuation_tokens(tokenizer: &Tokenizer, head: &str, tail: &str) -> Result<Vec<TokenId>, EvalError> {
    let prefix = tokenizer.tokenize(head);
    let full = tokenizer.tokenize(&format!("{head}{tail}"));
    if !full.starts_with(&prefix) || full.len() == prefix.len() {
        return Err(EvalError::Domain(format!("{tail:?} does not tokenize as a continuation")));
    }
    Ok(full[prefix.len()..].to_vec())
}

/// `"Knowledge: {doc}\n"`, the per-document prompt prefix.
pub(crate) fn knowledge_prefix(doc_text: &str) -> String {
    format!("Knowledge: {doc_text}\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_is_weighted_mean() {
        let items = vec![
            ItemResult { item_id: "a".into(), value: 1.0, weight: 3.0 },
            ItemResult { item_id: "b".into(), value: 2.0, weight: 1.0 },
        ];
        let r = EvalReport::new(Task::LmBpb, items, 0, &serde_json::json!({"k": 1})).unwrap();
        assert!((r.metric_value - 1.25).abs() < 1e-12);
        assert_eq!(r.config_fingerprint.len(), 64);
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["task"], "lm-bpb");
    }

    #[test]
    fn fingerprint_ignores_key_order() {
        let a: serde_json::Value = serde_json::from_str(r#"{"a":1,"b":2}"#).unwrap();
        let b: serde_json::Value = serde_json::from_str(r#"{"b":2,"a":1}"#).unwrap();
        assert_eq!(fingerprint(&a), fingerprint(&b));
    }

    #[test]
    fn letter_continuations() {
        assert_eq!(continuation_tokens(&Tokenizer::Byte, "Answer:", " B").unwrap(), vec![b' ' as u32, b'B' as u32]);
    }
}
