//! Bundled synthetic topic world for end-to-end checks.
//!
//! Every topic `t` owns a key token `k<t>` and a set of topic words
//! `t<t>w<j>`; filler words `f<j>` are shared. Contexts and continuations
//! mix topic words with fillers and never contain a key. The mock LM boosts
//! a topic's words once its key is in the prompt, so a document helps the LM
//! exactly when it carries the matching key. The corpus holds three kinds of
//! chunks per topic:
//!
//! * oracle: the topic's key among some of its words (the useful documents);
//! * distractor: as many of the topic's words, next to another topic's key, so
//!   they look relevant lexically but steer the LM the wrong way;
//! * background: mostly filler, usually with a random topic's key.

mod planted;

pub use planted::{multiple_choice_world, open_qa_world, PlantedWorld};

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    chunk_corpus, make_training_examples, ChunkConfig, ChunkStore, CorpusError, CorpusManifest, RawDocument,
    TrainingSet,
};
use crate::encoder::EncoderParams;
use crate::index::IndexSnapshot;
use crate::lm::{MockLm, MockLmSpec, TopicSpec};
use crate::lm::LmError;
use crate::lsr::{RefreshProbe, TrainingConfig};
use crate::tokenizer::{Tokenizer, Vocabulary};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error("harness configuration error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    pub seed: u64,
    pub topics: usize,
    pub words_per_topic: usize,
    pub fillers: usize,
    /// Tokens per corpus chunk and per context/continuation.
    pub span: usize,
    pub corpus_chunks: usize,
    pub training_examples: usize,
    pub eval_documents: usize,
    /// Windows of `span` tokens per evaluation document.
    pub eval_windows: usize,
    /// Share of each topic's chunks that are oracles / distractors.
    pub oracle_share: f64,
    pub distractor_share: f64,
    /// Topic-word rate in contexts, oracles and distractors.
    pub text_topic_rate: f64,
    pub oracle_topic_rate: f64,
    pub distractor_topic_rate: f64,
    pub keys_per_document: usize,
    /// Share of background chunks carrying a random topic's key.
    pub background_key_rate: f64,
    pub boost: f64,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            topics: 10,
            words_per_topic: 10,
            fillers: 50,
            span: 32,
            corpus_chunks: 2000,
            training_examples: 500,
            eval_documents: 100,
            eval_windows: 4,
            oracle_share: 0.15,
            distractor_share: 0.35,
            text_topic_rate: 0.4,
            oracle_topic_rate: 0.3,
            distractor_topic_rate: 0.3,
            keys_per_document: 3,
            background_key_rate: 1.0,
            boost: 4.0,
        }
    }
}

impl HarnessConfig {
    /// Training recipe sized for the harness: far fewer steps than the
    /// large-scale defaults, with a correspondingly larger learning rate.
    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            learning_rate: 0.01,
            batch_size: 16,
            refresh_interval: 100,
            total_steps: 600,
            seed: self.seed,
            dim: 32,
            probe_examples: 50,
            ..TrainingConfig::default()
        }
    }

    /// Retrieval query length used when evaluating on the harness.
    pub fn query_window(&self) -> usize {
        self.span
    }
}

/// A generated world: tokenizer, corpus, training and evaluation text, the
/// mock LM spec and topic labels for every item.
#[derive(Debug, Clone)]
pub struct Harness {
    pub config: HarnessConfig,
    pub tokenizer: Arc<Tokenizer>,
    pub raw_corpus: Vec<RawDocument>,
    pub manifest: CorpusManifest,
    pub store: ChunkStore,
    pub training_docs: Vec<RawDocument>,
    pub training: TrainingSet,
    pub eval_docs: Vec<RawDocument>,
    pub lm_spec: MockLmSpec,
    /// Topic of every training example, aligned with `training.examples`.
    pub example_topics: Vec<usize>,
    /// Topic of every evaluation document.
    pub eval_topics: Vec<usize>,
    /// Ids of the chunks carrying each topic's key: the documents that help
    /// the LM on that topic.
    pub oracles: Vec<BTreeSet<String>>,
}

fn key(t: usize) -> String {
    format!("k{t}")
}

fn word(t: usize, j: usize) -> String {
    format!("t{t}w{j}")
}

fn filler(j: usize) -> String {
    format!("f{j}")
}

struct Gen<'c> {
    c: &'c HarnessConfig,
    rng: ChaCha8Rng,
}

impl Gen<'_> {
    fn filler(&mut self) -> String {
        filler(self.rng.gen_range(0..self.c.fillers))
    }

    fn topic_word(&mut self, t: usize) -> String {
        word(t, self.rng.gen_range(0..self.c.words_per_topic))
    }

    fn mixed(&mut self, t: usize, rate: f64, n: usize) -> Vec<String> {
        (0..n)
            .map(|_| if self.rng.gen_bool(rate) { self.topic_word(t) } else { self.filler() })
            .collect()
    }

    fn with_keys(&mut self, mut words: Vec<String>, key_topic: usize) -> Vec<String> {
        let mut slots: Vec<usize> = (0..words.len()).collect();
        slots.shuffle(&mut self.rng);
        for &s in slots.iter().take(self.c.keys_per_document) {
            words[s] = key(key_topic);
        }
        words
    }

    fn other_topic(&mut self, t: usize) -> usize {
        let u = self.rng.gen_range(0..self.c.topics - 1);
        if u >= t {
            u + 1
        } else {
            u
        }
    }
}

impl Harness {
    pub fn generate(config: HarnessConfig) -> Result<Self, HarnessError> {
        let c = &config;
        if c.topics < 2 || c.words_per_topic < 1 || c.fillers < 1 || c.span < 2 {
            return Err(HarnessError::Config("need at least two topics, one word each and span >= 2".into()));
        }
        if c.keys_per_document > c.span || c.oracle_share + c.distractor_share > 1.0 {
            return Err(HarnessError::Config("inconsistent document shares or key count".into()));
        }
        let mut vocab_words: Vec<String> = (0..c.fillers).map(filler).collect();
        for t in 0..c.topics {
            vocab_words.push(key(t));
            vocab_words.extend((0..c.words_per_topic).map(|j| word(t, j)));
        }
        vocab_words.sort();
        let tokenizer = Arc::new(Tokenizer::whitespace(Vocabulary::from_tokens(vocab_words)));
        let mut g = Gen { c, rng: ChaCha8Rng::seed_from_u64(c.seed) };

        let per_topic = c.corpus_chunks / c.topics;
        let n_oracle = ((per_topic as f64) * c.oracle_share).round() as usize;
        let n_distractor = ((per_topic as f64) * c.distractor_share).round() as usize;
        let mut raw_corpus = Vec::with_capacity(c.corpus_chunks);
        let mut key_sources: Vec<BTreeSet<String>> = vec![BTreeSet::new(); c.topics];
        for t in 0..c.topics {
            for i in 0..per_topic {
                let (kind, key_topic, words) = if i < n_oracle {
                    let w = g.mixed(t, c.oracle_topic_rate, c.span);
                    ("oracle", Some(t), w)
                } else if i < n_oracle + n_distractor {
                    let w = g.mixed(t, c.distractor_topic_rate, c.span);
                    ("distractor", Some(g.other_topic(t)), w)
                } else {
                    let w = g.mixed(t, 0.05, c.span);
                    let u = g.rng.gen_range(0..c.topics);
                    ("background", g.rng.gen_bool(c.background_key_rate).then_some(u), w)
                };
                let words = match key_topic {
                    Some(u) => g.with_keys(words, u),
                    None => words,
                };
                let source_id = format!("{kind}-t{t}-{i:04}");
                if let Some(u) = key_topic {
                    key_sources[u].insert(source_id.clone());
                }
                raw_corpus.push(RawDocument::new(source_id, words.join(" ")));
            }
        }
        raw_corpus.shuffle(&mut g.rng);

        let mut training_docs = Vec::with_capacity(c.training_examples);
        let mut example_topics = Vec::with_capacity(c.training_examples);
        for i in 0..c.training_examples {
            let t = i % c.topics;
            let words = g.mixed(t, c.text_topic_rate, 2 * c.span);
            training_docs.push(RawDocument::new(format!("train-t{t}-{i:04}"), words.join(" ")));
            example_topics.push(t);
        }
        let mut eval_docs = Vec::with_capacity(c.eval_documents);
        let mut eval_topics = Vec::with_capacity(c.eval_documents);
        for i in 0..c.eval_documents {
            let t = i % c.topics;
            let words = g.mixed(t, c.text_topic_rate, c.eval_windows * c.span);
            eval_docs.push(RawDocument::new(format!("eval-t{t}-{i:04}"), words.join(" ")));
            eval_topics.push(t);
        }

        let training = make_training_examples(&tokenizer, &training_docs, c.span, c.span)?;
        let excluded: BTreeSet<String> = training
            .excluded_source_ids
            .iter()
            .chain(eval_docs.iter().map(|d| &d.source_id))
            .cloned()
            .collect();
        let chunking = ChunkConfig { chunk_length: c.span, min_tail_length: c.span.min(8), dedup: true };
        let (manifest, chunks) = chunk_corpus(&tokenizer, &raw_corpus, &chunking, &excluded)?;
        let oracles = key_sources
            .iter()
            .map(|sources| chunks.iter().filter(|ch| sources.contains(&ch.source_id)).map(|ch| ch.doc_id.clone()).collect())
            .collect();
        let store = ChunkStore::new(chunks)?;

        let lm_spec = MockLmSpec {
            boost: c.boost,
            topics: (0..c.topics)
                .map(|t| TopicSpec { key: key(t), members: (0..c.words_per_topic).map(|j| word(t, j)).collect() })
                .collect(),
            ..MockLmSpec::default()
        };

        Ok(Self {
            config,
            tokenizer,
            raw_corpus,
            manifest,
            store,
            training_docs,
            training,
            eval_docs,
            lm_spec,
            example_topics,
            eval_topics,
            oracles,
        })
    }

    /// Fits the topic-keyed mock LM on the retrieval corpus text.
    pub fn language_model(&self) -> Result<MockLm, HarnessError> {
        Ok(self.lm_spec.build(&self.tokenizer, self.store.chunks().iter().map(|c| c.text.as_str()))?)
    }

    /// Mean reciprocal rank of the best-ranked key-carrying chunk of each probe
    /// example's topic, ranking the whole snapshot by exact cosine.
    pub fn oracle_mrr(&self, params: &EncoderParams<f64>, snapshot: &IndexSnapshot<f64>, probes: usize) -> f64 {
        let n = probes.min(self.training.examples.len());
        if n == 0 {
            return 0.0;
        }
        let mut total = 0.0;
        for (ex, &t) in self.training.examples.iter().zip(&self.example_topics).take(n) {
            let Ok(query) = params.embed(&ex.context) else { continue };
            let Ok(ranked) = snapshot.exact_top_k(&query, snapshot.len()) else { continue };
            if let Some(pos) = ranked.iter().position(|h| self.oracles[t].contains(&h.doc_id)) {
                total += 1.0 / (pos + 1) as f64;
            }
        }
        total / n as f64
    }
}

/// Reports oracle MRR over a fixed number of training contexts at each refresh.
pub struct MrrProbe<'h> {
    pub harness: &'h Harness,
    pub probes: usize,
}

impl RefreshProbe for MrrProbe<'_> {
    fn measure(&self, params: &EncoderParams<f64>, snapshot: &IndexSnapshot<f64>) -> BTreeMap<String, f64> {
        BTreeMap::from([("oracle_mrr".to_string(), self.harness.oracle_mrr(params, snapshot, self.probes))])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_world_has_the_advertised_sizes() {
        let h = Harness::generate(HarnessConfig::default()).unwrap();
        assert_eq!(h.store.len(), 2000);
        assert_eq!(h.training.examples.len(), 500);
        assert!(h.oracles.iter().all(|o| o.len() >= 30));
        assert_eq!(h.oracles.iter().map(BTreeSet::len).sum::<usize>(), 2000);
        assert_eq!(h.tokenizer.vocab_size(), 2 + 50 + 10 * 11);
        for ex in &h.training.examples {
            let text = h.tokenizer.detokenize(&ex.context);
            assert!(!text.split(' ').any(|w| w.starts_with('k')));
        }
    }

    #[test]
    fn generation_is_seeded() {
        let a = Harness::generate(HarnessConfig::default()).unwrap();
        let b = Harness::generate(HarnessConfig::default()).unwrap();
        let c = Harness::generate(HarnessConfig { seed: 1, ..HarnessConfig::default() }).unwrap();
        assert_eq!(a.raw_corpus, b.raw_corpus);
        assert_ne!(a.raw_corpus, c.raw_corpus);
    }
}
