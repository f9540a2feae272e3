//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails. Built with `harness = false`.

use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Barrier};
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use replug_core::corpus::{ChunkStore, DocumentChunk, RawDocument};
use replug_core::encoder::{EncoderParams, Embedding};
use replug_core::engine::{DocumentSelector, Engine, EngineError, EngineSettings, Retriever};
use replug_core::ensemble::{compute_weights, ensemble_sequence_logprob, EnsembleOptions, EnsembleWeights};
use replug_core::eval::{ablation_sweep, bits_per_byte, AblationMode, AblationRow};
use replug_core::harness::{Harness, HarnessConfig, MrrProbe};
use replug_core::index::{IndexMode, IndexSnapshot, ScoredDocument, VectorIndex};
use replug_core::lm::{ContinuationScore, LanguageModel, LmError, MockLm, NextTokenDistribution, Prompt, TopicRule};
use replug_core::lsr::{kl_divergence, loss_and_gradient, retrieval_likelihood, training_loop, ExampleTerm, TrainingOutcome, TrainingRun};
use replug_core::tokenizer::Vocabulary;
use replug_core::{TokenId, Tokenizer};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_scores(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn random_distribution(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

fn scored(scores: &[f64]) -> Vec<ScoredDocument<f64>> {
    scores
        .iter()
        .enumerate()
        .map(|(i, &s)| ScoredDocument { doc_id: format!("d{i}"), score: s, generation: 1 })
        .collect()
}

// ---- 1: softmax and ensemble weights ----

fn softmax_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..1000 {
        let n = rng.gen_range(1..=20);
        let s = random_scores(&mut rng, n);
        let gamma = rng.gen_range(0.05..2.0);
        let p = retrieval_likelihood(&s, gamma).map_err(|e| e.to_string())?;
        let w = compute_weights(&scored(&s)).map_err(|e| e.to_string())?.weights;
        for (name, dist) in [("P_R", &p), ("lambda", &w)] {
            let total: f64 = dist.iter().sum();
            ensure((total - 1.0).abs() <= 1e-9, || format!("case {case}: {name} sums to {total}"))?;
        }

        let c = rng.gen_range(-50.0..50.0);
        let shifted: Vec<f64> = s.iter().map(|v| v + c).collect();
        let ps = retrieval_likelihood(&shifted, gamma).map_err(|e| e.to_string())?;
        let ws = compute_weights(&scored(&shifted)).map_err(|e| e.to_string())?.weights;
        let drift = p.iter().zip(&ps).chain(w.iter().zip(&ws)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        ensure(drift <= 1e-9, || format!("case {case}: shift by {c} moved a weight by {drift}"))?;

        let hot = retrieval_likelihood(&s, 1e6).map_err(|e| e.to_string())?;
        let off = hot.iter().map(|v| (v - 1.0 / n as f64).abs()).fold(0.0, f64::max);
        ensure(off <= 1e-3, || format!("case {case}: gamma=1e6 is {off} from uniform"))?;

        // Top score clears every other by a gap of at least 0.1.
        let gap = rng.gen_range(0.1..1.0);
        let mut sharp = s.clone();
        let best = rng.gen_range(0..n);
        let rest_max = s.iter().enumerate().filter(|&(i, _)| i != best).map(|(_, &v)| v).fold(f64::NEG_INFINITY, f64::max);
        if rest_max.is_finite() {
            sharp[best] = rest_max + gap;
        }
        let cold = retrieval_likelihood(&sharp, 0.01).map_err(|e| e.to_string())?;
        ensure(cold[best] >= 0.999, || format!("case {case}: gamma=0.01 leaves {} on the max", cold[best]))?;
    }
    Ok("1000 instances".into())
}

// ---- 2: KL divergence ----

fn kl_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut min_distinct = f64::INFINITY;
    for case in 0..10_000 {
        let n = rng.gen_range(2..=10);
        let p = random_distribution(&mut rng, n);
        let q = random_distribution(&mut rng, n);
        let kl = kl_divergence(&p, &q).map_err(|e| e.to_string())?;
        ensure(kl >= 0.0, || format!("case {case}: KL = {kl}"))?;
        let same = kl_divergence(&p, &p).map_err(|e| e.to_string())?;
        ensure(same.abs() <= 1e-12, || format!("case {case}: KL(p,p) = {same}"))?;
        if p.iter().zip(&q).any(|(a, b)| (a - b).abs() > 1e-6) {
            ensure(kl > 1e-12, || format!("case {case}: distinct pair has KL {kl}"))?;
            min_distinct = min_distinct.min(kl);
        }
    }
    let a = kl_divergence(&[0.5, 0.5], &[0.9, 0.1]).map_err(|e| e.to_string())?;
    let b = kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).map_err(|e| e.to_string())?;
    let want_a = 0.5 * (25.0f64 / 9.0).ln();
    ensure((a - want_a).abs() <= 1e-6, || format!("KL([.5,.5]||[.9,.1]) = {a}, want {want_a}"))?;
    ensure((b - std::f64::consts::LN_2).abs() <= 1e-6, || format!("KL([1,0]||[.5,.5]) = {b}, want ln 2"))?;
    Ok(format!("10000 pairs; hand values {a:.6} and {b:.6}; smallest distinct KL {min_distinct:.2e}"))
}

// ---- 3: gradient check ----

struct GradInstance {
    params: EncoderParams<f64>,
    query: Vec<TokenId>,
    docs: Vec<Vec<TokenId>>,
    lm_probs: Vec<f64>,
}

const GRAD_GAMMA: f64 = 0.1;

impl GradInstance {
    fn random(seed: u64, vocab: usize, dim: usize, k: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let mut seq = || -> Vec<TokenId> { (0..rng.gen_range(2..8)).map(|_| rng.gen_range(0..vocab as TokenId)).collect() };
        let query = seq();
        let docs: Vec<Vec<TokenId>> = (0..k).map(|_| seq()).collect();
        let lm_probs = random_distribution(&mut rng, k);
        Self { params: EncoderParams::init(vocab, dim, seed), query, docs, lm_probs }
    }

    fn loss(&self, params: &EncoderParams<f64>, want_grad: bool) -> Result<(f64, Option<Vec<f64>>), String> {
        let terms = [ExampleTerm { query: &self.query, docs: self.docs.iter().map(Vec::as_slice).collect(), lm_probs: self.lm_probs.clone() }];
        loss_and_gradient(params, &terms, GRAD_GAMMA, want_grad).map_err(|e| e.to_string())
    }

    fn central_difference(&self, j: usize, h: f64) -> Result<f64, String> {
        let mut p = self.params.clone();
        p.table_mut()[j] += h;
        let up = self.loss(&p, false)?.0;
        p.table_mut()[j] -= 2.0 * h;
        let down = self.loss(&p, false)?.0;
        Ok((up - down) / (2.0 * h))
    }
}

fn gradient_check() -> Outcome {
    const H: f64 = 1e-4;
    // (relative error, instance, coordinate, analytic, numeric)
    let mut worst = (0.0f64, 0u64, 0usize, 0.0f64, 0.0f64);
    let mut checked = 0usize;
    for seed in 0..50u64 {
        let inst = GradInstance::random(seed, 50, 8, 4);
        let grad = inst.loss(&inst.params, true)?.1.expect("gradient requested");
        for (j, &g) in grad.iter().enumerate() {
            let numeric = inst.central_difference(j, H)?;
            let scale = g.abs().max(numeric.abs());
            // Rows no candidate or query touches have exactly zero gradient both ways.
            if scale <= 1e-8 {
                continue;
            }
            checked += 1;
            let rel = (g - numeric).abs() / scale;
            if rel > worst.0 {
                worst = (rel, seed, j, g, numeric);
            }
        }
    }
    let (rel, seed, j, g, numeric) = worst;
    if rel >= 1e-4 {
        // Diagnostic only: Richardson extrapolation cancels the h^2 truncation
        // term, separating oracle error from a wrong analytic gradient.
        let inst = GradInstance::random(seed, 50, 8, 4);
        let half = inst.central_difference(j, H / 2.0)?;
        let extrapolated = (4.0 * half - numeric) / 3.0;
        let rich = (g - extrapolated).abs() / g.abs().max(extrapolated.abs());
        return Err(format!(
            "max relative error {rel:.3e} over {checked} coordinates, at instance {seed} coordinate {j} \
             (analytic {g:.6e}, central difference {numeric:.6e}); \
             Richardson-extrapolated difference agrees with the analytic value to {rich:.1e}"
        ));
    }
    Ok(format!("50 instances, {checked} coordinates, max relative error {rel:.2e}"))
}

// ---- 4: retrieval oracle ----

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn retrieval_oracle() -> Outcome {
    const DOCS: usize = 10_000;
    const QUERIES: usize = 100;
    const DIM: usize = 32;
    const K: usize = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let vectors: Vec<Vec<f64>> = (0..DOCS).map(|_| random_scores(&mut rng, DIM)).collect();
    let ids: Vec<String> = (0..DOCS).map(|i| format!("doc-{i:05}")).collect();
    let entries = || ids.iter().cloned().zip(vectors.iter().map(|v| Embedding::new(v.clone()).unwrap()));
    let exact = IndexSnapshot::build(entries(), IndexMode::Exact, 1).map_err(|e| e.to_string())?;
    let approx = IndexSnapshot::build(entries(), IndexMode::Approximate, 1).map_err(|e| e.to_string())?;
    let mut found = 0usize;
    for qi in 0..QUERIES {
        let q = random_scores(&mut rng, DIM);
        let mut scan: Vec<(f64, &str)> = vectors.iter().zip(&ids).map(|(v, id)| (cosine(&q, v), id.as_str())).collect();
        scan.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        let oracle: Vec<&str> = scan[..K].iter().map(|s| s.1).collect();
        let emb = Embedding::new(q).unwrap();
        let got = exact.search_top_k(&emb, K).map_err(|e| e.to_string())?;
        let got: Vec<&str> = got.iter().map(|h| h.doc_id.as_str()).collect();
        ensure(got == oracle, || format!("query {qi}: exact {got:?} vs scan {oracle:?}"))?;
        found += approx.search_top_k(&emb, K).map_err(|e| e.to_string())?.iter().filter(|h| oracle.contains(&h.doc_id.as_str())).count();
    }
    let recall = found as f64 / (QUERIES * K) as f64;
    ensure(recall >= 0.95, || format!("approximate recall@10 {recall:.3}"))?;
    Ok(format!("10000 docs x 100 queries identical; approximate recall@10 {recall:.3}"))
}

// ---- 5: ensemble equivalence ----

fn ensemble_equivalence() -> Outcome {
    const VOCAB: usize = 12;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let seqs: Vec<Vec<TokenId>> = (0..40).map(|_| (0..20).map(|_| rng.gen_range(0..VOCAB as TokenId)).collect()).collect();
    let topics = vec![TopicRule { key: 10, members: vec![2, 3] }, TopicRule { key: 11, members: vec![4, 5, 6] }];
    let lm = MockLm::fit(VOCAB, &seqs, topics, 4.0, 64).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let seq = |rng: &mut ChaCha8Rng, lo: usize, hi: usize| -> Vec<TokenId> {
            (0..rng.gen_range(lo..=hi)).map(|_| rng.gen_range(0..VOCAB as TokenId)).collect()
        };
        let x = seq(&mut rng, 0, 6);
        let y = seq(&mut rng, 1, 5);
        let n_docs = rng.gen_range(1..=5);
        let docs: Vec<Vec<TokenId>> = (0..n_docs).map(|_| seq(&mut rng, 1, 8)).collect();
        let weights = EnsembleWeights {
            doc_ids: (0..n_docs).map(|i| format!("d{i}")).collect(),
            weights: random_distribution(&mut rng, n_docs),
        };
        let doc_refs: Vec<&[TokenId]> = docs.iter().map(Vec::as_slice).collect();
        let got = ensemble_sequence_logprob(&lm, &x, &y, &doc_refs, &weights, EnsembleOptions { in_flight: 3 }).map_err(|e| e.to_string())?;

        // Oracle: mix next-token probabilities position by position.
        let mut want = 0.0;
        for t in 0..y.len() {
            let mut mix = 0.0;
            for (doc, w) in docs.iter().zip(&weights.weights) {
                let mut prompt = doc.clone();
                prompt.extend_from_slice(&x);
                prompt.extend_from_slice(&y[..t]);
                let dist = lm.next_token_distribution(&Prompt::new(prompt)).map_err(|e| e.to_string())?;
                mix += w * dist.prob(y[t]);
            }
            want += mix.ln();
        }
        let err = (got - want).abs();
        ensure(err <= 1e-9, || format!("case {case}: {got} vs oracle {want}"))?;
        worst = worst.max(err);
    }
    Ok(format!("200 instances, max deviation {worst:.2e}"))
}

// ---- 6: rebuild atomicity ----

fn rebuild_atomicity() -> Outcome {
    const READERS: usize = 100;
    const REBUILDS: u64 = 10;
    const DOCS: usize = 500;
    const DIM: usize = 16;
    let corpus = |g: u64| -> Vec<(String, Embedding<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + g);
        (0..DOCS).map(|i| (format!("doc-{i:04}"), Embedding::new(random_scores(&mut rng, DIM)).unwrap())).collect()
    };
    let index = Arc::new(VectorIndex::<f64>::new());
    index.build(corpus(0), IndexMode::Exact).map_err(|e| e.to_string())?;
    let done = Arc::new(AtomicBool::new(false));
    let queries = Arc::new(AtomicUsize::new(0));
    let start = Arc::new(Barrier::new(READERS + 1));
    let readers: Vec<_> = (0..READERS)
        .map(|r| {
            let (index, done, queries, start) = (index.clone(), done.clone(), queries.clone(), start.clone());
            thread::spawn(move || -> Result<Vec<u64>, String> {
                let mut rng = ChaCha8Rng::seed_from_u64(r as u64);
                let mut seen = Vec::new();
                start.wait();
                loop {
                    let finished = done.load(Ordering::Acquire);
                    let snap = index.snapshot().ok_or("no snapshot")?;
                    let q = Embedding::new(random_scores(&mut rng, DIM)).unwrap();
                    let hits = snap.search_top_k(&q, 10).map_err(|e| e.to_string())?;
                    let gens: Vec<u64> = hits.iter().map(|h| h.generation).collect();
                    if gens.iter().any(|&g| g != snap.generation()) {
                        return Err(format!("reader {r}: mixed generations {gens:?}"));
                    }
                    if seen.last().is_some_and(|&last| last > snap.generation()) {
                        return Err(format!("reader {r}: generation went backwards"));
                    }
                    if seen.last() != Some(&snap.generation()) {
                        seen.push(snap.generation());
                    }
                    queries.fetch_add(1, Ordering::Relaxed);
                    if finished {
                        return Ok(seen);
                    }
                }
            })
        })
        .collect();
    start.wait();
    for g in 1..=REBUILDS {
        let handle = index.rebuild_async(corpus(g), IndexMode::Exact);
        handle.join().map_err(|_| "rebuild thread panicked".to_string())?.map_err(|e| e.to_string())?;
        thread::sleep(Duration::from_millis(5));
    }
    done.store(true, Ordering::Release);
    let mut observed = std::collections::BTreeSet::new();
    for r in readers {
        let seen = r.join().map_err(|_| "reader panicked".to_string())??;
        observed.extend(seen);
    }
    let final_gen = index.generation();
    ensure(final_gen == REBUILDS + 1, || format!("final generation {final_gen}"))?;
    ensure(observed.len() > 1, || "readers never saw a rebuild".into())?;
    Ok(format!(
        "{} queries by {READERS} readers across {REBUILDS} rebuilds; {} generations observed, none mixed",
        queries.load(Ordering::Relaxed),
        observed.len()
    ))
}

// ---- 7 and 8: harness ----

struct SeedRun {
    harness: Harness,
    lm: Arc<MockLm>,
    outcome: TrainingOutcome,
}

fn train_harness(seed: u64) -> Result<SeedRun, String> {
    let harness = Harness::generate(HarnessConfig { seed, ..HarnessConfig::default() }).map_err(|e| e.to_string())?;
    let lm = Arc::new(harness.language_model().map_err(|e| e.to_string())?);
    let config = harness.config.training_config();
    let probe = MrrProbe { harness: &harness, probes: config.probe_examples };
    let mut run = TrainingRun::new(config, &harness.store, &harness.training.examples, lm.as_ref(), harness.tokenizer.vocab_size());
    run.probe = Some(&probe);
    let outcome = training_loop(run).map_err(|e| e.to_string())?;
    Ok(SeedRun { harness, lm, outcome })
}

fn lsr_convergence(runs: &[SeedRun]) -> Outcome {
    let mut drops = Vec::new();
    let mut gains = Vec::new();
    let mut detail = Vec::new();
    for (seed, r) in runs.iter().enumerate() {
        let first = &r.outcome.initial;
        let last = r.outcome.refreshes.last().unwrap_or(first);
        let steps = r.outcome.steps.len();
        ensure(steps <= 2000, || format!("seed {seed}: {steps} steps"))?;
        let drop = 1.0 - last.probe_loss / first.probe_loss;
        let gain = last.extra["oracle_mrr"] - first.extra["oracle_mrr"];
        detail.push(format!(
            "seed {seed}: KL {:.3}->{:.4}, MRR {:.3}->{:.3}",
            first.probe_loss, last.probe_loss, first.extra["oracle_mrr"], last.extra["oracle_mrr"]
        ));
        drops.push(drop);
        gains.push(gain);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (drop, gain) = (mean(&drops), mean(&gains));
    let summary = format!("mean KL drop {:.1}%, mean MRR gain {gain:.3} ({})", 100.0 * drop, detail.join("; "));
    ensure(drop >= 0.5 && gain >= 0.2, || summary.clone())?;
    Ok(summary)
}

fn harness_engine(r: &SeedRun) -> Engine {
    Engine::new(
        r.harness.tokenizer.clone(),
        Arc::new(r.harness.store.clone()),
        r.lm.clone(),
        EngineSettings { query_window: r.harness.config.query_window(), in_flight: 8, allow_no_retrieval: false },
    )
}

fn sweep(r: &SeedRun, k_values: &[usize], modes: &[AblationMode]) -> Result<Vec<AblationRow>, String> {
    let config = r.harness.config.training_config();
    let vocab = r.harness.tokenizer.vocab_size();
    let untrained = Retriever::build(EncoderParams::init(vocab, config.dim, config.seed), &r.harness.store, config.index_mode).map_err(|e| e.to_string())?;
    let trained = Retriever::build(r.outcome.params.clone(), &r.harness.store, config.index_mode).map_err(|e| e.to_string())?;
    ablation_sweep(&harness_engine(r), Some(&untrained), Some(&trained), &r.harness.eval_docs, k_values, modes, config.seed)
        .map_err(|e| e.to_string())
}

fn trend_reproduction(runs: &[SeedRun]) -> Outcome {
    const KS: [usize; 4] = [1, 2, 5, 10];
    let mut detail = Vec::new();
    let mut failures = Vec::new();
    for (seed, r) in runs.iter().enumerate() {
        let rows = sweep(r, &KS, &[AblationMode::Replug])?;
        let at10 = sweep(r, &[10], &[AblationMode::Random, AblationMode::Lsr])?;
        let replug: Vec<f64> = rows.iter().map(|row| row.bpb).collect();
        let (random, lsr) = (at10[0].bpb, at10[1].bpb);
        let replug10 = replug[3];
        if random - replug10 <= 0.01 {
            failures.push(format!("seed {seed}: random-replug margin {:.4}", random - replug10));
        }
        if replug10 - lsr <= 0.01 {
            failures.push(format!("seed {seed}: replug-lsr margin {:.4}", replug10 - lsr));
        }
        for w in replug.windows(2) {
            if w[1] > w[0] + 1e-3 {
                failures.push(format!("seed {seed}: replug BPB rose {:.5} -> {:.5}", w[0], w[1]));
            }
        }
        detail.push(format!(
            "seed {seed}: random {random:.4} > replug {replug10:.4} > lsr {lsr:.4}; replug over k {:?}",
            replug.iter().map(|b| format!("{b:.4}")).collect::<Vec<_>>()
        ));
    }
    let summary = detail.join("; ");
    ensure(failures.is_empty(), || format!("{} [{}]", failures.join("; "), summary))?;
    Ok(summary)
}

// ---- 9: BPB known answer ----

/// Closed-form LM: `p(w | prompt) ∝ 1 + ((3·prev + w + len) mod 5)`, where
/// `prev` is the last prompt token (`vocab` when empty).
struct FormulaLm {
    vocab: usize,
}

impl FormulaLm {
    fn dist(&self, prompt: &[TokenId]) -> Vec<f64> {
        let prev = prompt.last().map_or(self.vocab, |&t| t as usize);
        let f: Vec<f64> = (0..self.vocab).map(|w| (1 + (3 * prev + w + prompt.len()) % 5) as f64).collect();
        let z: f64 = f.iter().sum();
        f.into_iter().map(|v| v / z).collect()
    }
}

impl LanguageModel for FormulaLm {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn context_window(&self) -> usize {
        1024
    }

    fn score_continuation(&self, prompt: &Prompt, continuation: &[TokenId]) -> Result<ContinuationScore, LmError> {
        let mut history = prompt.tokens().to_vec();
        let mut lps = Vec::with_capacity(continuation.len());
        for &t in continuation {
            lps.push(self.dist(&history)[t as usize].ln());
            history.push(t);
        }
        ContinuationScore::new(lps)
    }

    fn next_token_distribution(&self, prompt: &Prompt) -> Result<NextTokenDistribution, LmError> {
        NextTokenDistribution::new(self.dist(prompt.tokens()))
    }
}

struct TwoChunks;

impl DocumentSelector for TwoChunks {
    fn select(&self, _query: &[TokenId], _k: usize, _salt: u64) -> Result<Vec<ScoredDocument<f64>>, EngineError> {
        Ok(vec![
            ScoredDocument { doc_id: "c1".into(), score: 0.3, generation: 1 },
            ScoredDocument { doc_id: "c2".into(), score: -0.1, generation: 1 },
        ])
    }
}

fn bpb_known_answer() -> Outcome {
    // Computed by tests/fixtures/bpb_oracle.py.
    const BITS: f64 = 33.73877504503016;
    const BYTES: f64 = 64.0;
    let tokenizer = Arc::new(Tokenizer::whitespace(Vocabulary::from_tokens(["alpha", "beta", "gamma", "delta", "épée"])));
    let chunk = |id: &str, text: &str| DocumentChunk {
        doc_id: id.into(),
        source_id: id.into(),
        text: text.into(),
        tokens: tokenizer.tokenize(text),
    };
    let store = ChunkStore::new(vec![chunk("c1", "beta delta"), chunk("c2", "épée alpha gamma")]).map_err(|e| e.to_string())?;
    let lm = Arc::new(FormulaLm { vocab: tokenizer.vocab_size() });
    let engine = Engine::new(tokenizer, Arc::new(store), lm, EngineSettings { query_window: 3, in_flight: 2, allow_no_retrieval: false });
    let docs = [
        RawDocument::new("a", "alpha beta gamma épée delta alpha beta"),
        RawDocument::new("b", "gamma gamma delta épée"),
    ];
    let report = bits_per_byte(&engine, Some(&TwoChunks), &docs, 2, &serde_json::json!({})).map_err(|e| e.to_string())?;
    let bytes: f64 = report.per_item.iter().map(|i| i.weight).sum();
    let bits: f64 = report.per_item.iter().map(|i| i.value * i.weight).sum();
    let want = BITS / BYTES;
    ensure(bytes == BYTES, || format!("{bytes} bytes, oracle {BYTES}"))?;
    ensure((bits - BITS).abs() <= 1e-9, || format!("{bits} bits, oracle {BITS}"))?;
    ensure((report.metric_value - want).abs() <= 1e-9, || format!("BPB {} vs oracle {want}", report.metric_value))?;
    Ok(format!("BPB {:.12} (oracle {want:.12})", report.metric_value))
}

// ---- 10: determinism ----

fn full_run(seed: u64) -> Result<(Vec<u8>, Vec<u8>), String> {
    let harness = Harness::generate(HarnessConfig { seed, ..HarnessConfig::default() }).map_err(|e| e.to_string())?;
    let lm = Arc::new(harness.language_model().map_err(|e| e.to_string())?);
    let mut config = harness.config.training_config();
    config.total_steps = 200;
    let probe = MrrProbe { harness: &harness, probes: config.probe_examples };
    let mut log = Vec::new();
    let mut run = TrainingRun::new(config.clone(), &harness.store, &harness.training.examples, lm.as_ref(), harness.tokenizer.vocab_size());
    run.probe = Some(&probe);
    run.metrics_log = Some(&mut log);
    let outcome = training_loop(run).map_err(|e| e.to_string())?;
    for r in std::iter::once(&outcome.initial).chain(&outcome.refreshes) {
        log.extend(serde_json::to_vec(r).map_err(|e| e.to_string())?);
        log.push(b'\n');
    }
    let retriever = Arc::new(Retriever::build(outcome.params, &harness.store, config.index_mode).map_err(|e| e.to_string())?);
    let engine = Engine::new(
        harness.tokenizer.clone(),
        Arc::new(harness.store.clone()),
        lm,
        EngineSettings { query_window: harness.config.query_window(), in_flight: 8, allow_no_retrieval: false },
    )
    .with_retriever(retriever.clone());
    let report = bits_per_byte(&engine, Some(retriever.as_ref()), &harness.eval_docs, 10, &serde_json::json!({"seed": seed, "k": 10}))
        .map_err(|e| e.to_string())?;
    Ok((log, serde_json::to_vec_pretty(&report).map_err(|e| e.to_string())?))
}

fn determinism() -> Outcome {
    let (log_a, report_a) = full_run(11)?;
    let (log_b, report_b) = full_run(11)?;
    ensure(!log_a.is_empty() && log_a == log_b, || "metrics logs differ".into())?;
    ensure(report_a == report_b, || "eval reports differ".into())?;
    Ok(format!("{} log bytes and {} report bytes identical", log_a.len(), report_a.len()))
}

// ---- driver ----

fn main() -> ExitCode {
    let mut results: Vec<(u32, &str, Outcome, Duration, Duration)> = Vec::new();
    let mut check = |id: u32, name: &'static str, limit: Duration, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let out = f();
        let elapsed = t.elapsed();
        let out = match out {
            Ok(msg) if elapsed > limit => Err(format!("{msg}; took {elapsed:.1?}, limit {limit:?}")),
            other => other,
        };
        print_line(id, name, &out, elapsed);
        results.push((id, name, out, elapsed, limit));
    };
    let secs = Duration::from_secs;
    check(1, "softmax and weight suite", secs(5), &mut softmax_suite);
    check(2, "KL suite", secs(5), &mut kl_suite);
    check(3, "gradient check", secs(30), &mut gradient_check);
    check(4, "retrieval oracle", secs(60), &mut retrieval_oracle);
    check(5, "ensemble equivalence", secs(30), &mut ensemble_equivalence);
    check(6, "rebuild atomicity", secs(30), &mut rebuild_atomicity);

    // Criteria 7 and 8 share the three seeded training runs; each gets the
    // training time plus its own evaluation time.
    let t = Instant::now();
    let runs: Result<Vec<SeedRun>, String> = (0..3).map(train_harness).collect();
    let train_time = t.elapsed();
    match runs {
        Ok(runs) => {
            let mut c7 = || lsr_convergence(&runs);
            check_with_offset(&mut check, 7, "LSR convergence", secs(600), train_time, &mut c7);
            let mut c8 = || trend_reproduction(&runs);
            check_with_offset(&mut check, 8, "BPB trend over modes and k", secs(600), train_time, &mut c8);
        }
        Err(e) => {
            check(7, "LSR convergence", secs(600), &mut || Err(format!("training failed: {e}")));
            check(8, "BPB trend over modes and k", secs(600), &mut || Err(format!("training failed: {e}")));
        }
    }
    check(9, "BPB known answer", secs(5), &mut bpb_known_answer);
    check(10, "determinism", secs(300), &mut determinism);

    let failed: Vec<u32> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!("acceptance: {}/{} criteria passed", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {failed:?}");
        ExitCode::FAILURE
    }
}

type Check<'a> = dyn FnMut(u32, &'static str, Duration, &mut dyn FnMut() -> Outcome) + 'a;

fn check_with_offset(
    check: &mut Check<'_>,
    id: u32,
    name: &'static str,
    limit: Duration,
    already: Duration,
    f: &mut dyn FnMut() -> Outcome,
) {
    check(id, name, limit.saturating_sub(already), f);
}

fn print_line(id: u32, name: &str, out: &Outcome, elapsed: Duration) {
    let (tag, msg) = match out {
        Ok(m) => ("PASS", m),
        Err(m) => ("FAIL", m),
    };
    println!("{tag} {id:>2} {name}: {msg} ({:.2} s)", elapsed.as_secs_f64());
}
