use std::f64::consts::LN_2;

use super::{EvalError, EvalReport, ItemResult, Task};
use crate::corpus::RawDocument;
use crate::engine::{DocumentSelector, Engine};
use crate::ensemble::{compute_weights, ensemble_sequence_logprob};
use crate::lm::Prompt;
use crate::parallel::bounded_map;
use crate::tokenizer::TokenId;

/// `bits / bytes`.
pub fn bpb_from_totals(neg_log2_likelihood: f64, bytes: usize) -> Result<f64, EvalError> {
    if bytes == 0 {
        return Err(EvalError::Domain("zero bytes to score".into()));
    }
    Ok(neg_log2_likelihood / bytes as f64)
}

/// Window boundaries `[0, w, 2w, ..., n]`.
fn windows(n: usize, w: usize) -> Vec<(usize, usize)> {
    (0..n).step_by(w.max(1)).map(|s| (s, (s + w).min(n))).collect()
}

/// Bits and bytes for one document. Window 0 is scored by the bare LM; each
/// later window uses the previous window as its context and retrieval query.
fn score_document(
    engine: &Engine,
    selector: Option<&dyn DocumentSelector>,
    doc_index: usize,
    tokens: &[TokenId],
    k: usize,
) -> Result<(f64, usize), EvalError> {
    let lm = &*engine.lm;
    let wins = windows(tokens.len(), engine.settings.query_window);
    let mut nats = 0.0;
    let mut prev_bytes = 0usize;
    let mut bytes = 0usize;
    for (w, &(start, end)) in wins.iter().enumerate() {
        let y = &tokens[start..end];
        let x = if w == 0 { &tokens[..0] } else { &tokens[wins[w - 1].0..start] };
        let lp = match selector {
            Some(sel) if w > 0 => {
                let salt = ((doc_index as u64) << 24) | w as u64;
                let docs = sel.select(engine.query_of(x), k, salt)?;
                let weights = compute_weights(&docs)?;
                let doc_tokens = engine.doc_tokens(&docs)?;
                ensemble_sequence_logprob(lm, x, y, &doc_tokens, &weights, engine.options())?
            }
            _ => lm.score_continuation(&Prompt::new(x.to_vec()), y)?.total_logprob,
        };
        nats -= lp;
        // Bytes of the normalized prefix grow by exactly this window's share.
        let prefix_bytes = engine.tokenizer.detokenize(&tokens[..end]).len();
        bytes += prefix_bytes - prev_bytes;
        prev_bytes = prefix_bytes;
    }
    Ok((nats / LN_2, bytes))
}

/// Bits per UTF-8 byte over `docs`, scoring non-overlapping windows of
/// `query_window` tokens. `selector` = `None` scores with the bare LM.
pub fn bits_per_byte(
    engine: &Engine,
    selector: Option<&dyn DocumentSelector>,
    docs: &[RawDocument],
    k: usize,
    config: &serde_json::Value,
) -> Result<EvalReport, EvalError> {
    if docs.is_empty() {
        return Err(EvalError::Domain("no evaluation documents".into()));
    }
    if k < 1 {
        return Err(EvalError::Config("k must be at least 1".into()));
    }
    let results = bounded_map(docs, engine.settings.in_flight, |i, doc| {
        let tokens = engine.tokenizer.tokenize(&doc.text);
        score_document(engine, selector, i, &tokens, k)
    });
    let mut items = Vec::with_capacity(docs.len());
    let (mut bits, mut bytes) = (0.0, 0usize);
    for (doc, r) in docs.iter().zip(results) {
        let (b, n) = r?;
        bits += b;
        bytes += n;
        if n > 0 {
            items.push(ItemResult { item_id: doc.source_id.clone(), value: b / n as f64, weight: n as f64 });
        }
    }
    let total = bpb_from_totals(bits, bytes)?;
    let report = EvalReport::new(Task::LmBpb, items, 0, config)?;
    debug_assert!((report.metric_value - total).abs() <= 1e-9 * total.max(1.0));
    Ok(report)
}
