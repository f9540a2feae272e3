//! Downstream evaluations on planted worlds where the helpful document is known.

use std::sync::Arc;

use replug_core::corpus::ChunkStore;
use replug_core::encoder::EncoderParams;
use replug_core::engine::{Engine, EngineSettings, FixedSelector, RandomSelector, Retriever};
use replug_core::eval::{ablation_sweep, bits_per_byte, multiple_choice_eval, open_qa_eval, AblationMode, EvalError};
use replug_core::harness::{multiple_choice_world, open_qa_world, Harness, HarnessConfig, PlantedWorld};
use replug_core::index::IndexMode;
use replug_core::lm::LanguageModel;

fn settings(query_window: usize) -> EngineSettings {
    EngineSettings { query_window, in_flight: 4, allow_no_retrieval: false }
}

fn planted_engine<I>(w: &PlantedWorld<I>) -> Engine {
    let lm: Arc<dyn LanguageModel> = w.lm.clone();
    Engine::new(w.tokenizer.clone(), Arc::new(w.store.clone()), lm, settings(64))
}

#[test]
fn planted_document_dominates_for_multiple_choice() {
    let w = multiple_choice_world(3, 24, 3).unwrap();
    let engine = planted_engine(&w);
    let cfg = serde_json::json!({"task": "mc"});
    let oracle = FixedSelector { docs: w.oracle_docs() };
    let with = multiple_choice_eval(&engine, Some(&oracle), &w.items, 1, &[], &cfg).unwrap();
    let without = multiple_choice_eval(&engine, None, &w.items, 1, &[], &cfg).unwrap();
    assert_eq!(with.metric_value, 1.0);
    assert!(without.metric_value < with.metric_value, "bare LM {}", without.metric_value);
    assert_eq!(with.per_item.len(), 24);

    let wrong = FixedSelector { docs: w.oracle_docs().into_iter().rev().collect() };
    let misled = multiple_choice_eval(&engine, Some(&wrong), &w.items, 1, &[], &cfg).unwrap();
    assert!(misled.metric_value < with.metric_value);
}

#[test]
fn planted_document_answers_open_questions() {
    let w = open_qa_world(5, 8).unwrap();
    let engine = planted_engine(&w);
    let cfg = serde_json::json!({"task": "qa"});
    let oracle = FixedSelector { docs: w.oracle_docs() };
    let with = open_qa_eval(&engine, Some(&oracle), &w.items, 1, &[], &cfg).unwrap();
    let without = open_qa_eval(&engine, None, &w.items, 1, &[], &cfg).unwrap();
    assert_eq!(with.metric_value, 1.0);
    assert!(without.metric_value < 1.0);
}

#[test]
fn gold_less_items_are_skipped() {
    let mut w = multiple_choice_world(4, 6, 1).unwrap();
    w.items[0].gold = None;
    w.items[3].gold = None;
    let engine = planted_engine(&w);
    let r = multiple_choice_eval(&engine, None, &w.items, 1, &[], &serde_json::json!({})).unwrap();
    assert_eq!(r.skipped, 2);
    assert_eq!(r.per_item.len(), 4);
}

fn small_harness() -> Harness {
    Harness::generate(HarnessConfig { corpus_chunks: 400, training_examples: 40, eval_documents: 20, ..HarnessConfig::default() }).unwrap()
}

fn harness_engine(h: &Harness, store: ChunkStore) -> Engine {
    let lm: Arc<dyn LanguageModel> = Arc::new(h.language_model().unwrap());
    Engine::new(h.tokenizer.clone(), Arc::new(store), lm, settings(h.config.query_window()))
}

#[test]
fn single_document_corpus_makes_every_mode_agree_at_k1() {
    let h = small_harness();
    let one = ChunkStore::new(vec![h.store.chunks()[0].clone()]).unwrap();
    let engine = harness_engine(&h, one.clone());
    let vocab = h.tokenizer.vocab_size();
    let untrained = Retriever::build(EncoderParams::init(vocab, 16, 1), &one, IndexMode::Exact).unwrap();
    let trained = Retriever::build(EncoderParams::init(vocab, 16, 2), &one, IndexMode::Exact).unwrap();
    let modes = [AblationMode::Random, AblationMode::Replug, AblationMode::Lsr];
    let rows = ablation_sweep(&engine, Some(&untrained), Some(&trained), &h.eval_docs[..5], &[1], &modes, 9).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.bpb.to_bits() == rows[0].bpb.to_bits()), "{rows:?}");
}

#[test]
fn random_documents_vary_by_seed_and_trail_retrieval() {
    let h = small_harness();
    let engine = harness_engine(&h, h.store.clone());
    let params = EncoderParams::init(h.tokenizer.vocab_size(), 32, 0);
    let retriever = Retriever::build(params, &h.store, IndexMode::Exact).unwrap();
    let cfg = serde_json::json!({});
    let docs = &h.eval_docs;
    let replug = bits_per_byte(&engine, Some(&retriever), docs, 10, &cfg).unwrap().metric_value;
    let r1 = bits_per_byte(&engine, Some(&RandomSelector { retriever: &retriever, seed: 1 }), docs, 10, &cfg).unwrap().metric_value;
    let r2 = bits_per_byte(&engine, Some(&RandomSelector { retriever: &retriever, seed: 2 }), docs, 10, &cfg).unwrap().metric_value;
    assert_ne!(r1, r2);
    assert!(r1 > replug && r2 > replug, "random {r1} / {r2}, replug {replug}");
}

#[test]
fn lsr_mode_without_a_trained_retriever_is_a_config_error() {
    let h = small_harness();
    let engine = harness_engine(&h, h.store.clone());
    let retriever = Retriever::build(EncoderParams::init(h.tokenizer.vocab_size(), 8, 0), &h.store, IndexMode::Exact).unwrap();
    let err = ablation_sweep(&engine, Some(&retriever), None, &h.eval_docs[..2], &[1], &[AblationMode::Lsr], 0).unwrap_err();
    assert!(matches!(err, EvalError::Config(_)), "{err}");
    let err = ablation_sweep(&engine, None, None, &h.eval_docs[..2], &[1], &[AblationMode::Random], 0).unwrap_err();
    assert!(matches!(err, EvalError::Config(_)));
}

#[test]
fn report_fingerprint_tracks_the_config() {
    let h = small_harness();
    let engine = harness_engine(&h, h.store.clone());
    let docs = &h.eval_docs[..2];
    let a = bits_per_byte(&engine, None, docs, 1, &serde_json::json!({"k": 1})).unwrap();
    let b = bits_per_byte(&engine, None, docs, 1, &serde_json::json!({"k": 1})).unwrap();
    let c = bits_per_byte(&engine, None, docs, 1, &serde_json::json!({"k": 2})).unwrap();
    assert_eq!(a.config_fingerprint, b.config_fingerprint);
    assert_ne!(a.config_fingerprint, c.config_fingerprint);
    assert_eq!(a.metric_value, c.metric_value);
}
