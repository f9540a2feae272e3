use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::thread;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    lm_likelihood, loss_and_gradient, retrieval_likelihood, save_checkpoint, Adam, ExampleTerm, LikelihoodPair,
    LsrError, TrainingConfig, WarmupSchedule,
};
use crate::corpus::{ChunkStore, TrainingExample};
use crate::encoder::{embed_all, EncoderParams};
use crate::index::{IndexSnapshot, VectorIndex};
use crate::lm::{LanguageModel, LmError, Prompt};
use crate::parallel::bounded_map;
use crate::tokenizer::TokenId;

/// Candidates for one context, with the LM's constant distribution over them.
#[derive(Debug, Clone)]
struct Prepared {
    doc_ids: Vec<String>,
    lm_probs: Vec<f64>,
}

/// Owns the encoder parameters and optimizer state.
pub struct Trainer<'a> {
    config: TrainingConfig,
    params: EncoderParams<f64>,
    optimizer: Adam<f64>,
    schedule: WarmupSchedule,
    step: u64,
    corpus: &'a ChunkStore,
    lm: &'a dyn LanguageModel,
}

impl<'a> Trainer<'a> {
    pub fn new(
        config: TrainingConfig,
        params: EncoderParams<f64>,
        corpus: &'a ChunkStore,
        lm: &'a dyn LanguageModel,
    ) -> Result<Self, LsrError> {
        config.validate()?;
        let schedule = WarmupSchedule::new(config.learning_rate, config.warmup_ratio, config.total_steps);
        let optimizer = Adam::new(params.table().len());
        Ok(Self { config, params, optimizer, schedule, step: 0, corpus, lm })
    }

    pub fn params(&self) -> &EncoderParams<f64> {
        &self.params
    }

    pub fn into_params(self) -> EncoderParams<f64> {
        self.params
    }

    /// Steps completed so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    fn tokens(&self, doc_id: &str) -> Result<&'a [TokenId], LsrError> {
        self.corpus
            .get(doc_id)
            .map(|c| c.tokens.as_slice())
            .ok_or_else(|| LsrError::UnknownDocument(doc_id.to_string()))
    }

    /// Retrieves `k_train` candidates from `snapshot` with the live query
    /// encoder and scores the continuation behind each of them.
    fn prepare(&self, params: &EncoderParams<f64>, example: &TrainingExample, snapshot: &IndexSnapshot<f64>) -> Result<Prepared, LsrError> {
        if example.continuation.is_empty() {
            return Err(LsrError::DegenerateExample);
        }
        let query = params.embed(&example.context)?;
        let hits = snapshot.search_top_k(&query, self.config.k_train)?;
        let docs = hits.iter().map(|h| self.tokens(&h.doc_id)).collect::<Result<Vec<_>, _>>()?;
        let window = self.lm.context_window();
        let y = &example.continuation;
        let scores = bounded_map(&docs, self.config.in_flight, |_, doc| {
            let prompt = Prompt::fit_document(doc, &example.context, y.len(), window)?;
            self.lm.score_continuation(&prompt, y)
        })
        .into_iter()
        .collect::<Result<Vec<_>, LmError>>()?;
        let lm_probs = lm_likelihood(&scores, self.config.beta)?;
        Ok(Prepared { doc_ids: hits.into_iter().map(|h| h.doc_id).collect(), lm_probs })
    }

    fn prepare_batch(
        &self,
        params: &EncoderParams<f64>,
        batch: &[&TrainingExample],
        snapshot: &IndexSnapshot<f64>,
    ) -> Result<Vec<Prepared>, LsrError> {
        let attempt = || batch.iter().map(|ex| self.prepare(params, ex, snapshot)).collect::<Result<Vec<_>, _>>();
        match attempt() {
            Err(LsrError::Lm(e)) => {
                log::warn!("LM failure during step {}: {e}; retrying once", self.step + 1);
                attempt()
            }
            other => other,
        }
    }

    fn terms<'b>(&self, batch: &[&'b TrainingExample], prepared: &'b [Prepared]) -> Result<Vec<ExampleTerm<'b, f64>>, LsrError>
    where
        'a: 'b,
    {
        batch
            .iter()
            .zip(prepared)
            .map(|(ex, p)| {
                Ok(ExampleTerm {
                    query: &ex.context,
                    docs: p.doc_ids.iter().map(|id| self.tokens(id)).collect::<Result<_, _>>()?,
                    lm_probs: p.lm_probs.clone(),
                })
            })
            .collect()
    }

    /// `P_R` and `Q` for one example under the current parameters.
    pub fn likelihoods(&self, example: &TrainingExample, snapshot: &IndexSnapshot<f64>) -> Result<LikelihoodPair<f64>, LsrError> {
        let prepared = self.prepare(&self.params, example, snapshot)?;
        let query = self.params.embed(&example.context)?;
        let scores = prepared
            .doc_ids
            .iter()
            .map(|id| {
                let d = self.params.embed(self.tokens(id)?)?;
                Ok(crate::encoder::cosine_similarity(&query, &d)?)
            })
            .collect::<Result<Vec<f64>, LsrError>>()?;
        Ok(LikelihoodPair {
            retrieval_probs: retrieval_likelihood(&scores, self.config.gamma)?,
            lm_probs: prepared.lm_probs,
            doc_ids: prepared.doc_ids,
        })
    }

    /// Mean KL over `examples` with `params`, without updating anything.
    pub fn evaluate_loss(
        &self,
        params: &EncoderParams<f64>,
        examples: &[&TrainingExample],
        snapshot: &IndexSnapshot<f64>,
    ) -> Result<f64, LsrError> {
        let prepared = self.prepare_batch(params, examples, snapshot)?;
        let terms = self.terms(examples, &prepared)?;
        Ok(loss_and_gradient(params, &terms, self.config.gamma, false)?.0)
    }

    /// One optimizer step on `batch`. Returns the batch loss measured before
    /// the update and the learning rate applied.
    pub fn train_step(&mut self, batch: &[&TrainingExample], snapshot: &IndexSnapshot<f64>) -> Result<(f64, f64), LsrError> {
        if batch.is_empty() {
            return Err(LsrError::Domain("empty batch".into()));
        }
        let step = self.step + 1;
        let prepared = self.prepare_batch(&self.params, batch, snapshot)?;
        let terms = self.terms(batch, &prepared)?;
        let (loss, grad) = loss_and_gradient(&self.params, &terms, self.config.gamma, true)?;
        let grad = grad.expect("gradient requested");
        if !loss.is_finite() {
            return Err(LsrError::NonFinite { step, detail: format!("loss {loss} over {} examples", batch.len()) });
        }
        if let Some(j) = grad.iter().position(|g| !g.is_finite()) {
            return Err(LsrError::NonFinite {
                step,
                detail: format!("gradient entry {j} (token {}) is {}", j / self.params.dim(), grad[j]),
            });
        }
        let lr = self.schedule.lr(step);
        self.optimizer.step(self.params.table_mut(), &grad, lr);
        if !self.params.is_finite() {
            return Err(LsrError::NonFinite { step, detail: format!("parameters diverged at lr {lr}") });
        }
        self.step = step;
        Ok((loss, lr))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub generation: u64,
}

/// Retrieval quality of one published index generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefreshMetrics {
    /// Step whose parameters built this generation (0 for the initial index).
    pub step: u64,
    /// Step after which training switched to it.
    pub adopted_at: u64,
    pub generation: u64,
    /// Mean KL over the fixed probe set.
    pub probe_loss: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

/// Extra retrieval-quality measurements taken at every refresh.
pub trait RefreshProbe: Sync {
    fn measure(&self, params: &EncoderParams<f64>, snapshot: &IndexSnapshot<f64>) -> BTreeMap<String, f64>;
}

/// Everything a training run needs.
pub struct TrainingRun<'a> {
    pub config: TrainingConfig,
    pub corpus: &'a ChunkStore,
    pub examples: &'a [TrainingExample],
    pub lm: &'a dyn LanguageModel,
    pub vocab_size: usize,
    /// Starting parameters; seeded random initialization when absent.
    pub initial: Option<EncoderParams<f64>>,
    pub checkpoint_dir: Option<PathBuf>,
    pub probe: Option<&'a dyn RefreshProbe>,
    /// Receives one NDJSON line per step as it completes.
    pub metrics_log: Option<&'a mut dyn Write>,
}

impl<'a> TrainingRun<'a> {
    pub fn new(config: TrainingConfig, corpus: &'a ChunkStore, examples: &'a [TrainingExample], lm: &'a dyn LanguageModel, vocab_size: usize) -> Self {
        Self { config, corpus, examples, lm, vocab_size, initial: None, checkpoint_dir: None, probe: None, metrics_log: None }
    }
}

#[derive(Debug)]
pub struct TrainingOutcome {
    pub params: EncoderParams<f64>,
    pub steps: Vec<StepMetrics>,
    pub initial: RefreshMetrics,
    pub refreshes: Vec<RefreshMetrics>,
    pub index: Arc<VectorIndex<f64>>,
}

struct Pending<'s> {
    step: u64,
    adopt_at: u64,
    params: EncoderParams<f64>,
    checkpoint: Option<String>,
    handle: thread::ScopedJoinHandle<'s, Result<Arc<IndexSnapshot<f64>>, LsrError>>,
}

fn build_generation(index: &VectorIndex<f64>, params: &EncoderParams<f64>, corpus: &ChunkStore, mode: crate::index::IndexMode) -> Result<Arc<IndexSnapshot<f64>>, LsrError> {
    let embeddings = embed_all(params, corpus.chunks().iter().map(|c| (c.doc_id.as_str(), c.tokens.as_slice())))?;
    Ok(index.build(embeddings, mode)?)
}

/// Runs `total_steps` optimizer steps. Every `refresh_interval` steps the
/// corpus is re-embedded with the current parameters and a new index
/// generation is built on a background thread; training keeps using the old
/// snapshot and switches `refresh_lag` steps later. Switch points depend only
/// on the step count, so runs with a fixed seed are reproducible.
pub fn training_loop(run: TrainingRun<'_>) -> Result<TrainingOutcome, LsrError> {
    let TrainingRun { config, corpus, examples, lm, vocab_size, initial, checkpoint_dir, probe, mut metrics_log } = run;
    config.validate()?;
    if examples.is_empty() {
        return Err(LsrError::Config("no training examples".into()));
    }
    if corpus.is_empty() {
        return Err(LsrError::Config("empty retrieval corpus".into()));
    }
    let params = match initial {
        Some(p) => p,
        None => EncoderParams::init(vocab_size, config.dim, config.seed),
    };
    let mut trainer = Trainer::new(config.clone(), params, corpus, lm)?;
    let index = Arc::new(VectorIndex::new());
    let mut snapshot = build_generation(&index, trainer.params(), corpus, config.index_mode)?;

    let probe_set: Vec<&TrainingExample> = examples.iter().take(config.probe_examples.max(1)).collect();
    let measure = |trainer: &Trainer<'_>, params: &EncoderParams<f64>, snap: &IndexSnapshot<f64>, step: u64, adopted_at: u64, checkpoint: Option<String>| {
        Ok::<_, LsrError>(RefreshMetrics {
            step,
            adopted_at,
            generation: snap.generation(),
            probe_loss: trainer.evaluate_loss(params, &probe_set, snap)?,
            extra: probe.map(|p| p.measure(params, snap)).unwrap_or_default(),
            checkpoint,
        })
    };
    let initial_metrics = measure(&trainer, trainer.params(), &snapshot, 0, 0, None)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0usize;
    let batch_len = config.batch_size.min(examples.len());

    let mut steps = Vec::with_capacity(config.total_steps as usize);
    let mut refreshes = Vec::new();
    let mut last_good: Option<String> = None;

    thread::scope(|scope| -> Result<(), LsrError> {
        let mut pending: VecDeque<Pending<'_>> = VecDeque::new();
        for s in 1..=config.total_steps {
            if cursor + batch_len > order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let batch: Vec<&TrainingExample> = order[cursor..cursor + batch_len].iter().map(|&i| &examples[i]).collect();
            cursor += batch_len;

            let (loss, lr) = trainer.train_step(&batch, &snapshot)?;
            let m = StepMetrics { step: s, loss, lr, generation: snapshot.generation() };
            if let Some(out) = metrics_log.as_deref_mut() {
                let line = serde_json::to_string(&m).expect("metrics serialize");
                writeln!(out, "{line}").map_err(|e| LsrError::Domain(format!("metrics log: {e}")))?;
            }
            steps.push(m);

            let last = s == config.total_steps;
            while pending.front().is_some_and(|p| p.adopt_at <= s || last) {
                let p = pending.pop_front().expect("front exists");
                let built = p.handle.join().expect("rebuild thread panicked")?;
                snapshot = built;
                refreshes.push(measure(&trainer, &p.params, &snapshot, p.step, s, p.checkpoint)?);
                log::info!("step {s}: adopted index generation {} built at step {}", snapshot.generation(), p.step);
            }

            if s % config.refresh_interval == 0 {
                let params = trainer.params().clone();
                let checkpoint = match &checkpoint_dir {
                    Some(dir) => match save_checkpoint(dir, &params, s, config.seed) {
                        Ok(path) => {
                            let path = path.display().to_string();
                            last_good = Some(path.clone());
                            Some(path)
                        }
                        Err(e) => {
                            return Err(LsrError::Checkpoint {
                                path: dir.display().to_string(),
                                message: e.to_string(),
                                last_good: last_good.clone(),
                            })
                        }
                    },
                    None => None,
                };
                let worker_params = params.clone();
                let worker_index = Arc::clone(&index);
                let mode = config.index_mode;
                let handle = scope.spawn(move || build_generation(&worker_index, &worker_params, corpus, mode));
                let adopt_at = s + config.refresh_lag;
                pending.push_back(Pending { step: s, adopt_at, params, checkpoint, handle });
                if config.refresh_lag == 0 || last {
                    let p = pending.pop_front().expect("just pushed");
                    snapshot = p.handle.join().expect("rebuild thread panicked")?;
                    refreshes.push(measure(&trainer, &p.params, &snapshot, p.step, s, p.checkpoint)?);
                }
            }
        }
        Ok(())
    })?;

    Ok(TrainingOutcome { params: trainer.into_params(), steps, initial: initial_metrics, refreshes, index })
}
