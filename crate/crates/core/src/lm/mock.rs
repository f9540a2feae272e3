//! Deterministic topic-keyed mock LM.
//!
//! Base model: add-one smoothed bigram over a bundled token corpus, with a
//! beginning-of-sequence row for the first position. Topic rule: once a
//! topic's key token has appeared anywhere in the history (prompt plus the
//! continuation so far), every member token of that topic has its
//! probability multiplied by `boost` and the distribution is renormalized.
//! Conditionals depend only on the history, so teacher-forced scores are
//! additive over any split of the continuation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{ContinuationScore, LanguageModel, LmError, NextTokenDistribution, Prompt};
use crate::tokenizer::{TokenId, Tokenizer};

pub const DEFAULT_BOOST: f64 = 4.0;
pub const DEFAULT_WINDOW: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicRule {
    pub key: TokenId,
    pub members: Vec<TokenId>,
}

#[derive(Debug, Clone)]
pub struct MockLm {
    vocab_size: usize,
    window: usize,
    boost: f64,
    row_totals: Vec<u64>,
    pairs: HashMap<(TokenId, TokenId), u32>,
    topics: Vec<TopicRule>,
    key_topics: HashMap<TokenId, Vec<usize>>,
    member_of: Vec<Vec<usize>>,
    // topic_mass[prev * n_topics + t] = Σ_{w ∈ members(t)} count(prev, w)
    topic_mass: Vec<u64>,
}

impl MockLm {
    /// Fits the bigram table on `sequences`. Each sequence starts from the
    /// beginning-of-sequence row.
    pub fn fit(vocab_size: usize, sequences: &[Vec<TokenId>], topics: Vec<TopicRule>, boost: f64, window: usize) -> Result<Self, LmError> {
        if vocab_size == 0 {
            return Err(LmError::Config("vocab_size must be positive".into()));
        }
        if !(boost > 0.0) || !boost.is_finite() {
            return Err(LmError::Config(format!("boost must be positive, got {boost}")));
        }
        let bos = vocab_size as TokenId;
        let check = |id: TokenId| {
            if (id as usize) < vocab_size {
                Ok(id)
            } else {
                Err(LmError::Vocabulary { id, vocab_size })
            }
        };
        let mut row_totals = vec![0u64; vocab_size + 1];
        let mut pairs: HashMap<(TokenId, TokenId), u32> = HashMap::new();
        for seq in sequences {
            let mut prev = bos;
            for &t in seq {
                check(t)?;
                row_totals[prev as usize] += 1;
                *pairs.entry((prev, t)).or_insert(0) += 1;
                prev = t;
            }
        }

        let mut topics = topics;
        let mut key_topics: HashMap<TokenId, Vec<usize>> = HashMap::new();
        let mut member_of = vec![Vec::new(); vocab_size];
        for (ti, rule) in topics.iter_mut().enumerate() {
            check(rule.key)?;
            rule.members.sort_unstable();
            rule.members.dedup();
            for &m in &rule.members {
                member_of[check(m)? as usize].push(ti);
            }
            key_topics.entry(rule.key).or_default().push(ti);
        }
        let n_topics = topics.len();
        let mut topic_mass = vec![0u64; (vocab_size + 1) * n_topics];
        for (&(prev, next), &c) in &pairs {
            for &t in &member_of[next as usize] {
                topic_mass[prev as usize * n_topics + t] += u64::from(c);
            }
        }
        Ok(Self { vocab_size, window, boost, row_totals, pairs, topics, key_topics, member_of, topic_mass })
    }

    pub fn boost(&self) -> f64 {
        self.boost
    }

    pub fn topics(&self) -> &[TopicRule] {
        &self.topics
    }

    fn bos(&self) -> TokenId {
        self.vocab_size as TokenId
    }

    fn count(&self, prev: TokenId, next: TokenId) -> u64 {
        self.pairs.get(&(prev, next)).copied().map_or(0, u64::from)
    }

    fn base_denominator(&self, prev: TokenId) -> f64 {
        (self.row_totals[prev as usize] + self.vocab_size as u64) as f64
    }

    fn base(&self, prev: TokenId, next: TokenId) -> f64 {
        (self.count(prev, next) + 1) as f64 / self.base_denominator(prev)
    }

    fn is_boosted(&self, token: TokenId, active: &[usize]) -> bool {
        !active.is_empty() && self.member_of[token as usize].iter().any(|t| active.contains(t))
    }

    /// Base-model mass of the boosted set after `prev`.
    fn boosted_mass(&self, prev: TokenId, active: &[usize]) -> f64 {
        match active {
            [] => 0.0,
            [t] => {
                let n = self.topics.len();
                let counts = self.topic_mass[prev as usize * n + t];
                (counts + self.topics[*t].members.len() as u64) as f64 / self.base_denominator(prev)
            }
            _ => {
                let mut members: Vec<TokenId> =
                    active.iter().flat_map(|&t| self.topics[t].members.iter().copied()).collect();
                members.sort_unstable();
                members.dedup();
                members.iter().map(|&w| self.base(prev, w)).sum()
            }
        }
    }

    fn activate(&self, token: TokenId, active: &mut Vec<usize>) {
        if let Some(ts) = self.key_topics.get(&token) {
            for &t in ts {
                if !active.contains(&t) {
                    active.push(t);
                }
            }
        }
    }

    fn state(&self, history: &[TokenId]) -> (TokenId, Vec<usize>) {
        let mut active = Vec::new();
        for &t in history {
            self.activate(t, &mut active);
        }
        active.sort_unstable();
        (history.last().copied().unwrap_or(self.bos()), active)
    }

    fn conditional(&self, prev: TokenId, active: &[usize], next: TokenId) -> f64 {
        let z = 1.0 + (self.boost - 1.0) * self.boosted_mass(prev, active);
        let w = if self.is_boosted(next, active) { self.boost } else { 1.0 };
        self.base(prev, next) * w / z
    }

    fn validate(&self, tokens: &[TokenId]) -> Result<(), LmError> {
        match tokens.iter().find(|&&t| t as usize >= self.vocab_size) {
            Some(&id) => Err(LmError::Vocabulary { id, vocab_size: self.vocab_size }),
            None => Ok(()),
        }
    }
}

impl LanguageModel for MockLm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn context_window(&self) -> usize {
        self.window
    }

    fn score_continuation(&self, prompt: &Prompt, continuation: &[TokenId]) -> Result<ContinuationScore, LmError> {
        let needed = prompt.len() + continuation.len();
        if needed > self.window {
            return Err(LmError::Window { needed, window: self.window });
        }
        self.validate(prompt.tokens())?;
        self.validate(continuation)?;
        let (mut prev, mut active) = self.state(prompt.tokens());
        let mut logprobs = Vec::with_capacity(continuation.len());
        for &y in continuation {
            logprobs.push(self.conditional(prev, &active, y).ln());
            self.activate(y, &mut active);
            active.sort_unstable();
            prev = y;
        }
        ContinuationScore::new(logprobs)
    }

    fn next_token_distribution(&self, prompt: &Prompt) -> Result<NextTokenDistribution, LmError> {
        let needed = prompt.len() + 1;
        if needed > self.window {
            return Err(LmError::Window { needed, window: self.window });
        }
        self.validate(prompt.tokens())?;
        let (prev, active) = self.state(prompt.tokens());
        let probs = (0..self.vocab_size as TokenId).map(|w| self.conditional(prev, &active, w)).collect();
        NextTokenDistribution::new(probs)
    }
}

/// File form of a mock LM: topic rules by token string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockLmSpec {
    #[serde(default = "default_boost")]
    pub boost: f64,
    #[serde(default = "default_window")]
    pub context_window: usize,
    #[serde(default)]
    pub topics: Vec<TopicSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicSpec {
    pub key: String,
    pub members: Vec<String>,
}

fn default_boost() -> f64 {
    DEFAULT_BOOST
}

fn default_window() -> usize {
    DEFAULT_WINDOW
}

impl Default for MockLmSpec {
    fn default() -> Self {
        Self { boost: DEFAULT_BOOST, context_window: DEFAULT_WINDOW, topics: Vec::new() }
    }
}

impl MockLmSpec {
    /// Fits a mock LM over `texts` (one bigram sequence per text).
    pub fn build<'a, I>(&self, tokenizer: &Tokenizer, texts: I) -> Result<MockLm, LmError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let lookup = |piece: &str| {
            tokenizer.token_id(piece).ok_or_else(|| LmError::Config(format!("topic token {piece:?} not in vocabulary")))
        };
        let topics = self
            .topics
            .iter()
            .map(|t| {
                Ok(TopicRule {
                    key: lookup(&t.key)?,
                    members: t.members.iter().map(|m| lookup(m)).collect::<Result<_, _>>()?,
                })
            })
            .collect::<Result<Vec<_>, LmError>>()?;
        let seqs: Vec<Vec<TokenId>> = texts.into_iter().map(|t| tokenizer.tokenize(t)).collect();
        MockLm::fit(tokenizer.vocab_size(), &seqs, topics, self.boost, self.context_window)
    }
}
