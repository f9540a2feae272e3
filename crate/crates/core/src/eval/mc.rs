use serde::{Deserialize, Serialize};

use super::{continuation_tokens, knowledge_prefix, EvalError, EvalReport, ItemResult, Task};
use crate::engine::{DocumentSelector, Engine, EngineError};
use crate::ensemble::{compute_weights, EnsembleWeights};
use crate::lm::Prompt;
use crate::parallel::bounded_map;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McItem {
    pub id: String,
    pub question: String,
    pub choices: Vec<String>,
    #[serde(default)]
    pub gold: Option<String>,
}

fn letter(i: usize) -> String {
    char::from(b'A' + i as u8).to_string()
}

fn question_block(item: &McItem) -> String {
    let mut s = format!("Question: {}\n", item.question);
    for (i, c) in item.choices.iter().enumerate() {
        s.push_str(&format!("{}. {c}\n", letter(i)));
    }
    s.push_str("Answer:");
    s
}

/// In-context examples followed by the test question, ending at `Answer:`.
fn context_text(item: &McItem, shots: &[McItem]) -> String {
    let mut s = String::new();
    for shot in shots {
        if let Some(g) = &shot.gold {
            s.push_str(&format!("{} {g}\n\n", question_block(shot)));
        }
    }
    s.push_str(&question_block(item));
    s
}

/// Ensembled probability of each choice letter after `Answer:`.
fn letter_probs(
    engine: &Engine,
    selector: Option<&dyn DocumentSelector>,
    item: &McItem,
    salt: u64,
    k: usize,
    shots: &[McItem],
) -> Result<Vec<f64>, EvalError> {
    let tok = &engine.tokenizer;
    let x_text = context_text(item, shots);
    let x = tok.tokenize(&x_text);
    let letters = (0..item.choices.len())
        .map(|i| continuation_tokens(tok, &x_text, &format!(" {}", letter(i))))
        .collect::<Result<Vec<_>, _>>()?;
    let (prefixes, weights): (Vec<Vec<u32>>, EnsembleWeights) = match selector {
        Some(sel) => {
            let docs = sel.select(&tok.tokenize(&item.question), k, salt)?;
            let weights = compute_weights(&docs)?;
            let texts = docs
                .iter()
                .map(|d| {
                    engine
                        .store
                        .get(&d.doc_id)
                        .map(|c| tok.tokenize(&knowledge_prefix(&c.text)))
                        .ok_or_else(|| EngineError::UnknownDocument(d.doc_id.clone()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            (texts, weights)
        }
        None => (vec![Vec::new()], EnsembleWeights::uniform(vec![String::new()])),
    };
    let lm = &*engine.lm;
    let window = lm.context_window();
    let per_doc = bounded_map(&prefixes, engine.settings.in_flight, |_, prefix| {
        letters
            .iter()
            .map(|l| {
                let prompt = Prompt::fit_document(prefix, &x, l.len(), window)?;
                Ok(lm.score_continuation(&prompt, l)?.total_logprob.exp())
            })
            .collect::<Result<Vec<f64>, EvalError>>()
    });
    let mut mixed = vec![0.0; item.choices.len()];
    for (probs, &w) in per_doc.into_iter().zip(&weights.weights) {
        for (m, p) in mixed.iter_mut().zip(probs?) {
            *m += w * p;
        }
    }
    Ok(mixed)
}

/// Accuracy of the argmax choice letter (first letter wins ties) under the
/// ensembled letter probabilities. Items without a gold label are skipped.
pub fn multiple_choice_eval(
    engine: &Engine,
    selector: Option<&dyn DocumentSelector>,
    items: &[McItem],
    k: usize,
    shots: &[McItem],
    config: &serde_json::Value,
) -> Result<EvalReport, EvalError> {
    if let Some(bad) = items.iter().find(|i| i.choices.len() < 2 || i.choices.len() > 26) {
        return Err(EvalError::Config(format!("item {} needs between 2 and 26 choices", bad.id)));
    }
    let scored: Vec<(usize, &McItem)> = items.iter().enumerate().filter(|(_, i)| i.gold.is_some()).collect();
    let skipped = items.len() - scored.len();
    if skipped > 0 {
        log::warn!("{skipped} multiple-choice items have no gold label and are skipped");
    }
    let results = bounded_map(&scored, engine.settings.in_flight, |_, &(idx, item)| {
        letter_probs(engine, selector, item, idx as u64, k, shots)
    });
    let mut per_item = Vec::with_capacity(scored.len());
    for ((_, item), probs) in scored.iter().zip(results) {
        let probs = probs?;
        let best = probs
            .iter()
            .enumerate()
            .fold(0, |b, (i, &p)| if p > probs[b] { i } else { b });
        let correct = item.gold.as_deref().map(str::trim) == Some(letter(best).as_str());
        per_item.push(ItemResult { item_id: item.id.clone(), value: f64::from(u8::from(correct)), weight: 1.0 });
    }
    EvalReport::new(Task::MultipleChoice, per_item, skipped, config)
}
