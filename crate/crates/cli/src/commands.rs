//! Subcommand implementations. Each writes its primary result (JSON or CSV)
//! to stdout and nothing else.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use replug_core::corpus::{chunk_corpus, make_training_examples, ChunkConfig, RawDocument, TrainingSet};
use replug_core::encoder::{cosine_similarity, embed_all, EncoderParams};
use replug_core::engine::{DocumentSelector, Engine, EngineSettings, RandomSelector, Retriever};
use replug_core::eval::{
    ablation_sweep, bits_per_byte, multiple_choice_eval, open_qa_eval, write_ablation_csv, AblationMode, EvalReport, McItem, QaItem,
};
use replug_core::harness::{Harness, HarnessConfig, MrrProbe};
use replug_core::index::{IndexMode, IndexSnapshot};
use replug_core::lm::{HttpLm, LanguageModel, MockLmSpec};
use replug_core::lsr::{load_checkpoint, save_checkpoint, training_loop, TrainingConfig, TrainingRun};
use replug_core::stub::{spawn_embed_stub, spawn_lm_stub, Faults};
use replug_core::tokenizer::Vocabulary;
use replug_core::Tokenizer;

use crate::config::{resolve, EngineConfig, LmKind, Settings};
use crate::error::CliError;
use crate::workspace::{self, load_corpus, read_json, read_ndjson_file, read_raw_file, save_corpus, write_json, write_ndjson, Corpus};
use crate::{
    AblateArgs, Command, EngineArgs, EvalLmArgs, EvalMcArgs, EvalQaArgs, IndexAction, IngestArgs, QueryArgs, RetrievalArg,
    StubEmbedArgs, StubLmArgs, TokenizerKind, TrainArgs,
};

pub const TRAIN_DOCS: &str = "train.jsonl";
pub const EVAL_DOCS: &str = "eval.jsonl";
pub const HARNESS_CONFIG: &str = "config.json";

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Ingest(a) => ingest(a),
        Command::Index { action } => index(action),
        Command::Train(a) => train(a),
        Command::EvalLm(a) => eval_lm(a),
        Command::EvalMc(a) => eval_mc(a),
        Command::EvalQa(a) => eval_qa(a),
        Command::Query(a) => query(a),
        Command::Ablate(a) => ablate(a),
        Command::StubLm(a) => stub_lm(a),
        Command::StubEmbed(a) => stub_embed(a),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out).and_then(|_| out.flush()).map_err(CliError::io("writing stdout"))
}

fn settings(args: &EngineArgs, k: Option<usize>) -> Result<Settings, CliError> {
    resolve(args.config.as_deref(), args.overrides(k))
}

// ---- shared plumbing ----

fn mock_spec(settings: &Settings, corpus: &Corpus) -> Result<MockLmSpec, CliError> {
    match &settings.mock_spec {
        Some(p) => read_json(p),
        None => {
            let p = corpus.dir.join(workspace::MOCK_SPEC);
            if p.is_file() {
                read_json(&p)
            } else {
                Ok(MockLmSpec::default())
            }
        }
    }
}

fn language_model(settings: &Settings, corpus: &Corpus) -> Result<Arc<dyn LanguageModel>, CliError> {
    match settings.lm {
        LmKind::Mock => {
            let spec = mock_spec(settings, corpus)?;
            let lm = spec.build(&corpus.tokenizer, corpus.store.chunks().iter().map(|c| c.text.as_str()))?;
            Ok(Arc::new(lm))
        }
        LmKind::Http => {
            let endpoint = settings
                .endpoint
                .clone()
                .ok_or_else(|| CliError::Config("--lm http needs --endpoint or REPLUG_LM_ENDPOINT".into()))?;
            let mut lm = HttpLm::new(endpoint, corpus.tokenizer.clone(), settings.context_window);
            if let Some(t) = &settings.token {
                lm = lm.with_auth_token(t.clone());
            }
            Ok(Arc::new(lm))
        }
    }
}

fn encoder_params(settings: &Settings, vocab_size: usize) -> Result<EncoderParams<f64>, CliError> {
    match &settings.checkpoint {
        Some(path) => {
            let (params, meta) = load_checkpoint(path)?;
            if meta.vocab_size != vocab_size {
                return Err(CliError::Config(format!(
                    "checkpoint {} has vocabulary {} but the tokenizer has {vocab_size}",
                    path.display(),
                    meta.vocab_size
                )));
            }
            Ok(params)
        }
        None => Ok(EncoderParams::init(vocab_size, settings.dim(), settings.seed())),
    }
}

fn retriever(settings: &Settings, corpus: &Corpus, params: EncoderParams<f64>) -> Result<Retriever, CliError> {
    let mode = settings.training.index_mode;
    match &settings.index {
        Some(path) => {
            let snapshot = IndexSnapshot::<f64>::load(path, mode)?;
            let known: BTreeSet<&str> = corpus.store.chunks().iter().map(|c| c.doc_id.as_str()).collect();
            if let Some(stray) = snapshot.ids().iter().find(|id| !known.contains(id.as_str())) {
                return Err(CliError::Config(format!("index {} holds {stray:?}, which is not in the corpus", path.display())));
            }
            Ok(Retriever::from_parts(params, snapshot)?)
        }
        None => Ok(Retriever::build(params, &corpus.store, mode)?),
    }
}

fn engine(settings: &Settings, corpus: &Corpus, lm: Arc<dyn LanguageModel>) -> Engine {
    Engine::new(
        corpus.tokenizer.clone(),
        Arc::new(corpus.store.clone()),
        lm,
        EngineSettings { query_window: settings.query_window, in_flight: settings.in_flight, allow_no_retrieval: false },
    )
}

/// Settings that determine an evaluation's result, without file paths.
fn fingerprint_config(settings: &Settings, corpus: &Corpus, task: &str, retrieval: RetrievalArg, extra: serde_json::Value) -> serde_json::Value {
    json!({
        "task": task,
        "retrieval": format!("{retrieval:?}").to_lowercase(),
        "k": settings.k,
        "query_window": settings.query_window,
        "seed": settings.seed(),
        "dim": settings.dim(),
        "lm": settings.lm,
        "tokenizer": corpus.manifest.tokenizer_id,
        "chunks": corpus.manifest.chunk_count,
        "trained": settings.checkpoint.is_some(),
        "extra": extra,
    })
}

/// Runs `f` with the selector implied by `retrieval`.
fn with_selector<R>(
    retrieval: RetrievalArg,
    retriever: Option<&Retriever>,
    seed: u64,
    f: impl FnOnce(Option<&dyn DocumentSelector>) -> Result<R, CliError>,
) -> Result<R, CliError> {
    match (retrieval, retriever) {
        (RetrievalArg::None, _) => f(None),
        (RetrievalArg::Replug, Some(r)) => f(Some(r)),
        (RetrievalArg::Random, Some(r)) => f(Some(&RandomSelector { retriever: r, seed })),
        (_, None) => Err(CliError::Config("retrieval requested but no retriever is available".into())),
    }
}

struct Loaded {
    settings: Settings,
    corpus: Corpus,
    engine: Engine,
    retriever: Option<Retriever>,
}

fn load(args: &EngineArgs, k: Option<usize>, retrieval: RetrievalArg) -> Result<Loaded, CliError> {
    let settings = settings(args, k)?;
    let corpus = load_corpus(settings.corpus()?)?;
    let lm = language_model(&settings, &corpus)?;
    let engine = engine(&settings, &corpus, lm);
    let retriever = match retrieval {
        RetrievalArg::None => None,
        _ => {
            let params = encoder_params(&settings, corpus.tokenizer.vocab_size())?;
            Some(retriever(&settings, &corpus, params)?)
        }
    };
    Ok(Loaded { settings, corpus, engine, retriever })
}

// ---- ingest ----

fn ingest(a: IngestArgs) -> Result<(), CliError> {
    if a.harness {
        return ingest_harness(&a);
    }
    let input = a.input.as_deref().ok_or_else(|| CliError::Config("--in is required".into()))?;
    let raw = read_raw_file(input)?;
    let mut excluded = BTreeSet::new();
    for path in &a.exclude {
        excluded.extend(read_raw_file(path)?.into_iter().map(|d| d.source_id));
    }
    let tokenizer = match a.tokenizer {
        TokenizerKind::Byte => Tokenizer::Byte,
        TokenizerKind::Whitespace => {
            let texts: Vec<&str> = raw.iter().map(|d| d.text.as_str()).collect();
            Tokenizer::whitespace(Vocabulary::from_texts(texts))
        }
    };
    let chunking = ChunkConfig { chunk_length: a.chunk_len, min_tail_length: a.min_tail, dedup: !a.no_dedup };
    let (manifest, chunks) = chunk_corpus(&tokenizer, &raw, &chunking, &excluded)?;
    save_corpus(&a.out, &manifest, &tokenizer, &chunks)?;
    log::info!("wrote {} chunks to {}", chunks.len(), a.out.display());
    print_json(&manifest)
}

fn ingest_harness(a: &IngestArgs) -> Result<(), CliError> {
    let h = Harness::generate(HarnessConfig { seed: a.seed, ..HarnessConfig::default() })?;
    save_corpus(&a.out, &h.manifest, &h.tokenizer, h.store.chunks())?;
    write_ndjson(&a.out.join(TRAIN_DOCS), &h.training_docs)?;
    write_ndjson(&a.out.join(EVAL_DOCS), &h.eval_docs)?;
    write_json(&a.out.join(workspace::MOCK_SPEC), &h.lm_spec)?;
    let span = h.config.span;
    let config = EngineConfig {
        query_window: Some(h.config.query_window()),
        context_len: Some(span),
        continuation_len: Some(span),
        training: h.config.training_config(),
        ..EngineConfig::default()
    };
    write_json(&a.out.join(HARNESS_CONFIG), &config)?;
    print_json(&h.manifest)
}

// ---- index ----

#[derive(Serialize)]
struct Hit<'a> {
    doc_id: &'a str,
    score: f64,
    generation: u64,
}

fn index(action: IndexAction) -> Result<(), CliError> {
    match action {
        IndexAction::Build { engine: args, out } => {
            let settings = settings(&args, None)?;
            let corpus = load_corpus(settings.corpus()?)?;
            let params = encoder_params(&settings, corpus.tokenizer.vocab_size())?;
            let embeddings = embed_all(&params, corpus.store.chunks().iter().map(|c| (c.doc_id.as_str(), c.tokens.as_slice())))
                .map_err(|e| CliError::Domain(e.to_string()))?;
            let snapshot = IndexSnapshot::build(embeddings, settings.training.index_mode, 1)?;
            snapshot.save(&out)?;
            print_json(&json!({
                "path": out,
                "count": snapshot.len(),
                "dim": snapshot.dim(),
                "generation": snapshot.generation(),
            }))
        }
        IndexAction::Search { engine: args, query, k } => {
            let settings = settings(&args, k)?;
            let corpus = load_corpus(settings.corpus()?)?;
            let params = encoder_params(&settings, corpus.tokenizer.vocab_size())?;
            let r = retriever(&settings, &corpus, params)?;
            let tokens = corpus.tokenizer.tokenize(&query);
            let q = &tokens[tokens.len().saturating_sub(settings.query_window)..];
            let hits = r.search(q, settings.k)?;
            let hits: Vec<Hit> = hits.iter().map(|h| Hit { doc_id: &h.doc_id, score: h.score, generation: h.generation }).collect();
            print_json(&hits)
        }
        IndexAction::Verify { index } => verify_index(&index),
    }
}

/// Checks exact search against an independent full scan, and approximate
/// recall@10 against the same oracle, using stored vectors as queries.
fn verify_index(path: &Path) -> Result<(), CliError> {
    const QUERIES: usize = 100;
    const K: usize = 10;
    let exact = IndexSnapshot::<f64>::load(path, IndexMode::Exact)?;
    if exact.is_empty() {
        return Err(CliError::Domain(format!("{} holds no entries", path.display())));
    }
    let approx = IndexSnapshot::<f64>::load(path, IndexMode::Approximate)?;
    let ids = exact.ids().to_vec();
    let vectors: Vec<_> = ids.iter().map(|id| exact.get(id).expect("listed id")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let picks = sample(&mut rng, ids.len(), QUERIES.min(ids.len())).into_vec();
    let k = K.min(ids.len());
    let (mut mismatches, mut found) = (0usize, 0usize);
    for &qi in &picks {
        let q = &vectors[qi];
        let mut scan: Vec<(f64, &str)> = vectors
            .iter()
            .zip(&ids)
            .map(|(v, id)| Ok((cosine_similarity(q, v)?, id.as_str())))
            .collect::<Result<_, replug_core::encoder::EncoderError>>()
            .map_err(|e| CliError::Domain(e.to_string()))?;
        scan.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        let oracle: Vec<&str> = scan.iter().take(k).map(|s| s.1).collect();
        let got: Vec<String> = exact.search_top_k(q, k)?.into_iter().map(|h| h.doc_id).collect();
        if got.iter().map(String::as_str).ne(oracle.iter().copied()) {
            mismatches += 1;
        }
        let approx_hits = approx.search_top_k(q, k)?;
        found += approx_hits.iter().filter(|h| oracle.contains(&h.doc_id.as_str())).count();
    }
    let recall = found as f64 / (picks.len() * k) as f64;
    print_json(&json!({
        "path": path,
        "count": exact.len(),
        "dim": exact.dim(),
        "generation": exact.generation(),
        "queries": picks.len(),
        "exact_mismatches": mismatches,
        "approximate_recall_at_10": recall,
    }))?;
    if mismatches > 0 {
        return Err(CliError::Domain(format!("{mismatches} exact searches disagree with the full scan")));
    }
    Ok(())
}

// ---- train ----

/// Training examples from raw documents, rejecting any overlap with the corpus.
fn training_set(settings: &Settings, corpus: &Corpus, train: Option<&Path>) -> Result<TrainingSet, CliError> {
    let path = match train {
        Some(p) => p.to_path_buf(),
        None => corpus.dir.join(TRAIN_DOCS),
    };
    let docs = read_raw_file(&path)?;
    let set = make_training_examples(&corpus.tokenizer, &docs, settings.context_len, settings.continuation_len)?;
    if let Some(leak) = corpus.store.chunks().iter().find(|c| set.excluded_source_ids.contains(&c.source_id)) {
        return Err(CliError::Config(format!(
            "corpus chunk {} comes from training source {}; re-ingest with --exclude",
            leak.doc_id, leak.source_id
        )));
    }
    if set.skipped > 0 {
        log::warn!("{} training documents are shorter than one example and were skipped", set.skipped);
    }
    Ok(set)
}

fn relative_to(path: &str, base: &Path) -> String {
    Path::new(path).strip_prefix(base).map(|p| p.display().to_string()).unwrap_or_else(|_| path.to_string())
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    let mut settings = settings(&a.engine, None)?;
    if let Some(n) = a.total_steps {
        settings.training.total_steps = n;
    }
    let corpus = load_corpus(settings.corpus()?)?;
    let lm = language_model(&settings, &corpus)?;
    let set = training_set(&settings, &corpus, a.train.as_deref())?;
    let initial = settings.checkpoint.is_some().then(|| encoder_params(&settings, corpus.tokenizer.vocab_size())).transpose()?;

    std::fs::create_dir_all(&a.out).map_err(CliError::io(format!("creating {}", a.out.display())))?;
    let metrics_path = a.out.join("metrics.ndjson");
    let mut metrics = BufWriter::new(File::create(&metrics_path).map_err(CliError::io(format!("creating {}", metrics_path.display())))?);
    let mut run = TrainingRun::new(settings.training.clone(), &corpus.store, &set.examples, lm.as_ref(), corpus.tokenizer.vocab_size());
    run.initial = initial;
    run.checkpoint_dir = Some(a.out.join("checkpoints"));
    run.metrics_log = Some(&mut metrics);
    let outcome = training_loop(run)?;
    metrics.flush().map_err(CliError::io(format!("writing {}", metrics_path.display())))?;

    let refreshes: Vec<_> = std::iter::once(outcome.initial.clone())
        .chain(outcome.refreshes.iter().cloned())
        .map(|mut r| {
            r.checkpoint = r.checkpoint.map(|c| relative_to(&c, &a.out));
            r
        })
        .collect();
    write_ndjson(&a.out.join("refresh.ndjson"), &refreshes)?;
    let steps = outcome.steps.len() as u64;
    let final_ckpt = save_checkpoint(&a.out, &outcome.params, steps, settings.seed())?;
    let embeddings = embed_all(&outcome.params, corpus.store.chunks().iter().map(|c| (c.doc_id.as_str(), c.tokens.as_slice())))
        .map_err(|e| CliError::Domain(e.to_string()))?;
    let index_path = a.out.join("index.rpix");
    IndexSnapshot::build(embeddings, settings.training.index_mode, steps)?.save(&index_path)?;

    let last = refreshes.last().expect("initial metrics are always present");
    print_json(&json!({
        "steps": steps,
        "initial_probe_loss": outcome.initial.probe_loss,
        "final_probe_loss": last.probe_loss,
        "final_step_loss": outcome.steps.last().map(|s| s.loss),
        "generations": refreshes.len(),
        "checkpoint": final_ckpt,
        "index": index_path,
    }))
}

// ---- evaluation ----

fn eval_lm(a: EvalLmArgs) -> Result<(), CliError> {
    let l = load(&a.engine, a.k, a.retrieval)?;
    let docs = read_raw_file(&a.docs)?;
    let config = fingerprint_config(&l.settings, &l.corpus, "lm-bpb", a.retrieval, json!({"docs": docs.len()}));
    let report = with_selector(a.retrieval, l.retriever.as_ref(), l.settings.seed(), |sel| {
        Ok(bits_per_byte(&l.engine, sel, &docs, l.settings.k, &config)?)
    })?;
    print_json(&report)
}

fn shots<T: serde::de::DeserializeOwned>(path: Option<&Path>, n: usize) -> Result<Vec<T>, CliError> {
    match (path, n) {
        (_, 0) => Ok(Vec::new()),
        (None, _) => Err(CliError::Config("--n-shots needs --shots".into())),
        (Some(p), n) => {
            let mut all: Vec<T> = read_ndjson_file(p)?;
            if all.len() < n {
                return Err(CliError::Config(format!("{} holds {} examples, fewer than --n-shots {n}", p.display(), all.len())));
            }
            all.truncate(n);
            Ok(all)
        }
    }
}

fn eval_mc(a: EvalMcArgs) -> Result<(), CliError> {
    let l = load(&a.engine, a.k, a.retrieval)?;
    let items: Vec<McItem> = read_ndjson_file(&a.items)?;
    let shots: Vec<McItem> = shots(a.shots.as_deref(), a.n_shots)?;
    let config = fingerprint_config(&l.settings, &l.corpus, "multiple-choice", a.retrieval, json!({"items": items.len(), "shots": shots.len()}));
    let report = with_selector(a.retrieval, l.retriever.as_ref(), l.settings.seed(), |sel| {
        Ok(multiple_choice_eval(&l.engine, sel, &items, l.settings.k, &shots, &config)?)
    })?;
    print_json(&report)
}

fn eval_qa(a: EvalQaArgs) -> Result<(), CliError> {
    let l = load(&a.engine, a.k, a.retrieval)?;
    let items: Vec<QaItem> = read_ndjson_file(&a.items)?;
    let shots: Vec<QaItem> = shots(a.shots.as_deref(), a.n_shots)?;
    let config = fingerprint_config(&l.settings, &l.corpus, "open-qa", a.retrieval, json!({"items": items.len(), "shots": shots.len()}));
    let report: EvalReport = with_selector(a.retrieval, l.retriever.as_ref(), l.settings.seed(), |sel| {
        Ok(open_qa_eval(&l.engine, sel, &items, l.settings.k, &shots, &config)?)
    })?;
    print_json(&report)
}

// ---- query ----

fn query(a: QueryArgs) -> Result<(), CliError> {
    let l = load(&a.engine, a.k, RetrievalArg::Replug)?;
    let text = std::fs::read_to_string(&a.context).map_err(CliError::io(format!("reading {}", a.context.display())))?;
    let x = l.corpus.tokenizer.tokenize(&text);
    let engine = l.engine.with_retriever(Arc::new(l.retriever.expect("replug retrieval loads a retriever")));
    let out = engine.retrieve_and_ensemble(&x, l.settings.k)?;
    let docs: Vec<_> = out
        .docs
        .iter()
        .zip(&out.weights.weights)
        .map(|(d, w)| json!({"doc_id": d.doc_id, "score": d.score, "weight": w}))
        .collect();
    let top: Vec<_> = out
        .distribution
        .top_n(a.top)
        .into_iter()
        .map(|(t, p)| json!({"token": engine.tokenizer.detokenize(&[t]), "id": t, "prob": p}))
        .collect();
    print_json(&json!({"docs": docs, "next_tokens": top}))
}

// ---- ablation ----

fn parse_modes(raw: &[String]) -> Result<Vec<AblationMode>, CliError> {
    raw.iter().map(|m| Ok(m.parse::<AblationMode>()?)).collect()
}

fn ablate(a: AblateArgs) -> Result<(), CliError> {
    let modes = parse_modes(&a.modes)?;
    if a.k.is_empty() || a.k.contains(&0) {
        return Err(CliError::Config("--k needs positive values".into()));
    }
    let rows = if a.engine.corpus.is_some() || a.engine.config.as_ref().is_some_and(|c| load_has_corpus(c)) {
        ablate_corpus(&a, &modes)?
    } else {
        ablate_harness(&a, &modes)?
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    write_ablation_csv(&mut out, &rows).and_then(|_| out.flush()).map_err(CliError::io("writing stdout"))
}

fn load_has_corpus(path: &Path) -> bool {
    crate::config::load_config(path).map(|c| c.corpus.is_some()).unwrap_or(false)
}

fn ablate_harness(a: &AblateArgs, modes: &[AblationMode]) -> Result<Vec<replug_core::eval::AblationRow>, CliError> {
    let settings = settings(&a.engine, None)?;
    let h = Harness::generate(HarnessConfig { seed: settings.seed(), ..HarnessConfig::default() })?;
    let mut recipe: TrainingConfig = h.config.training_config();
    if a.engine.config.is_some() {
        recipe = settings.training.clone();
    }
    if let Some(dim) = a.engine.dim {
        recipe.dim = dim;
    }
    let lm: Arc<dyn LanguageModel> = Arc::new(h.language_model()?);
    let vocab = h.tokenizer.vocab_size();
    let untrained = Retriever::build(EncoderParams::init(vocab, recipe.dim, recipe.seed), &h.store, recipe.index_mode)?;
    let trained = if modes.contains(&AblationMode::Lsr) {
        let probe = MrrProbe { harness: &h, probes: recipe.probe_examples };
        let mut run = TrainingRun::new(recipe.clone(), &h.store, &h.training.examples, lm.as_ref(), vocab);
        run.probe = Some(&probe);
        let outcome = training_loop(run)?;
        Some(Retriever::build(outcome.params, &h.store, recipe.index_mode)?)
    } else {
        None
    };
    let engine = Engine::new(
        h.tokenizer.clone(),
        Arc::new(h.store.clone()),
        lm,
        EngineSettings {
            query_window: a.engine.query_window.unwrap_or_else(|| h.config.query_window()),
            in_flight: settings.in_flight,
            allow_no_retrieval: false,
        },
    );
    Ok(ablation_sweep(&engine, Some(&untrained), trained.as_ref(), &h.eval_docs, &a.k, modes, recipe.seed)?)
}

fn ablate_corpus(a: &AblateArgs, modes: &[AblationMode]) -> Result<Vec<replug_core::eval::AblationRow>, CliError> {
    let settings = settings(&a.engine, None)?;
    let corpus = load_corpus(settings.corpus()?)?;
    let docs_path: PathBuf = match &a.docs {
        Some(p) => p.clone(),
        None => corpus.dir.join(EVAL_DOCS),
    };
    let docs: Vec<RawDocument> = read_raw_file(&docs_path)?;
    let lm = language_model(&settings, &corpus)?;
    let engine = engine(&settings, &corpus, lm);
    let params = encoder_params(&settings, corpus.tokenizer.vocab_size())?;
    let untrained = retriever(&settings, &corpus, params)?;
    let trained = match &a.trained {
        Some(path) => {
            let (params, _) = load_checkpoint(path)?;
            Some(Retriever::build(params, &corpus.store, settings.training.index_mode)?)
        }
        None if modes.contains(&AblationMode::Lsr) => {
            return Err(CliError::Config("the lsr mode needs --trained <checkpoint>".into()));
        }
        None => None,
    };
    Ok(ablation_sweep(&engine, Some(&untrained), trained.as_ref(), &docs, &a.k, modes, settings.seed())?)
}

// ---- stubs ----

fn announce_and_wait(server: replug_core::stub::StubServer) -> Result<(), CliError> {
    print_json(&json!({"url": server.url()}))?;
    server.wait();
    Ok(())
}

fn stub_lm(a: StubLmArgs) -> Result<(), CliError> {
    let settings = settings(&a.engine, None)?;
    let corpus = load_corpus(settings.corpus()?)?;
    let lm = language_model(&Settings { lm: LmKind::Mock, ..settings }, &corpus)?;
    let server = spawn_lm_stub(&a.bind, lm, corpus.tokenizer.clone(), Faults::default()).map_err(|e| CliError::Domain(e.to_string()))?;
    announce_and_wait(server)
}

fn stub_embed(a: StubEmbedArgs) -> Result<(), CliError> {
    if a.dim < 1 {
        return Err(CliError::Config("--dim must be at least 1".into()));
    }
    let server = spawn_embed_stub(&a.bind, a.dim, Faults::default()).map_err(|e| CliError::Domain(e.to_string()))?;
    announce_and_wait(server)
}

