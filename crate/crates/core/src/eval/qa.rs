use serde::{Deserialize, Serialize};

use super::{knowledge_prefix, EvalError, EvalReport, ItemResult, Task};
use crate::engine::{DocumentSelector, Engine, EngineError};
use crate::ensemble::{compute_weights, ensemble_greedy_decode, EnsembleWeights};
use crate::parallel::bounded_map;
use crate::tokenizer::TokenId;

pub const MAX_ANSWER_TOKENS: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub id: String,
    pub question: String,
    pub golds: Vec<String>,
}

/// Lowercase, drop punctuation and the articles a/an/the, collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lowered: String = s.to_lowercase().chars().filter(|c| !c.is_ascii_punctuation()).collect();
    lowered
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn context_text(item: &QaItem, shots: &[QaItem]) -> String {
    let mut s = String::new();
    for shot in shots {
        if let Some(g) = shot.golds.first() {
            s.push_str(&format!("Question: {}\nAnswer: {g}\n\n", shot.question));
        }
    }
    s.push_str(&format!("Question: {}\nAnswer:", item.question));
    s
}

fn predict(
    engine: &Engine,
    selector: Option<&dyn DocumentSelector>,
    item: &QaItem,
    salt: u64,
    k: usize,
    shots: &[QaItem],
) -> Result<String, EvalError> {
    let tok = &engine.tokenizer;
    let x = tok.tokenize(&context_text(item, shots));
    let (prefixes, weights): (Vec<Vec<TokenId>>, EnsembleWeights) = match selector {
        Some(sel) => {
            let docs = sel.select(&tok.tokenize(&item.question), k, salt)?;
            let weights = compute_weights(&docs)?;
            let prefixes = docs
                .iter()
                .map(|d| {
                    engine
                        .store
                        .get(&d.doc_id)
                        .map(|c| tok.tokenize(&knowledge_prefix(&c.text)))
                        .ok_or_else(|| EngineError::UnknownDocument(d.doc_id.clone()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            (prefixes, weights)
        }
        None => (vec![Vec::new()], EnsembleWeights::uniform(vec![String::new()])),
    };
    let refs: Vec<&[TokenId]> = prefixes.iter().map(Vec::as_slice).collect();
    let out = ensemble_greedy_decode(&*engine.lm, &x, &refs, &weights, MAX_ANSWER_TOKENS, &tok.stop_tokens(), engine.options())?;
    Ok(tok.detokenize(&out))
}

/// Exact match of the greedy ensembled answer against any gold answer after
/// normalization. A failed decode counts as incorrect.
pub fn open_qa_eval(
    engine: &Engine,
    selector: Option<&dyn DocumentSelector>,
    items: &[QaItem],
    k: usize,
    shots: &[QaItem],
    config: &serde_json::Value,
) -> Result<EvalReport, EvalError> {
    if let Some(bad) = items.iter().find(|i| i.golds.is_empty()) {
        return Err(EvalError::Config(format!("item {} has no gold answers", bad.id)));
    }
    let predictions = bounded_map(items, engine.settings.in_flight, |i, item| predict(engine, selector, item, i as u64, k, shots));
    let per_item = items
        .iter()
        .zip(predictions)
        .map(|(item, pred)| {
            let hit = match pred {
                Ok(p) => {
                    let p = normalize_answer(&p);
                    !p.is_empty() && item.golds.iter().any(|g| normalize_answer(g) == p)
                }
                Err(e) => {
                    log::error!("item {}: decode failed: {e}", item.id);
                    false
                }
            };
            ItemResult { item_id: item.id.clone(), value: f64::from(u8::from(hit)), weight: 1.0 }
        })
        .collect();
    EvalReport::new(Task::OpenQa, per_item, 0, config)
}
