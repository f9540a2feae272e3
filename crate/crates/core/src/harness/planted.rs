//! Small planted-answer worlds for the multiple-choice and open-QA protocols.
//! Each item has one planted chunk holding the question's words and an
//! answer key; the mock LM boosts the keyed answer after `Answer:`.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::HarnessError;
use crate::corpus::{ChunkStore, DocumentChunk};
use crate::eval::{McItem, QaItem};
use crate::lm::{MockLm, TopicRule};
use crate::tokenizer::{Tokenizer, Vocabulary, EOS};

const LETTERS: [&str; 4] = ["A", "B", "C", "D"];
const ANSWERS: [&str; 8] = ["paris", "lima", "oslo", "quito", "rome", "cairo", "delhi", "tokyo"];
/// Repetitions of each bigram-training pattern; large enough that `<eos>`
/// outweighs a boosted answer word right after that word.
const PATTERN_REPEATS: usize = 20;

#[derive(Debug, Clone)]
pub struct PlantedWorld<I> {
    pub tokenizer: Arc<Tokenizer>,
    pub store: ChunkStore,
    pub lm: Arc<MockLm>,
    pub items: Vec<I>,
    /// Planted chunk id per item.
    pub planted: Vec<String>,
}

impl<I> PlantedWorld<I> {
    /// One planted chunk per item, for use with a fixed selector.
    pub fn oracle_docs(&self) -> Vec<Vec<String>> {
        self.planted.iter().map(|id| vec![id.clone()]).collect()
    }
}

const PROMPT_WORDS: [&str; 3] = ["Knowledge:", "Question:", "Answer:"];

fn question_words(item: usize) -> Vec<String> {
    (0..4).map(|j| format!("q{item}x{j}")).collect()
}

fn fillers(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    (0..n).map(|_| format!("f{}", rng.gen_range(0..20))).collect()
}

fn build<I>(
    words: Vec<String>,
    docs: Vec<(String, Vec<String>)>,
    patterns: Vec<String>,
    topics: Vec<(String, String)>,
    items: Vec<I>,
    planted: Vec<String>,
) -> Result<PlantedWorld<I>, HarnessError> {
    let mut vocab = words;
    vocab.extend(PROMPT_WORDS.iter().map(|w| w.to_string()));
    vocab.sort();
    let tokenizer = Arc::new(Tokenizer::whitespace(Vocabulary::from_tokens(vocab)));
    let id = |w: &str| tokenizer.token_id(w).ok_or_else(|| HarnessError::Config(format!("{w} missing from vocabulary")));
    let chunks = docs
        .into_iter()
        .map(|(doc_id, ws)| {
            let text = ws.join(" ");
            DocumentChunk { source_id: doc_id.clone(), doc_id, tokens: tokenizer.tokenize(&text), text }
        })
        .collect::<Vec<_>>();
    let mut seqs: Vec<Vec<u32>> = chunks.iter().map(|c| c.tokens.clone()).collect();
    for p in &patterns {
        for _ in 0..PATTERN_REPEATS {
            seqs.push(tokenizer.tokenize(p));
        }
    }
    let rules = topics
        .iter()
        .map(|(key, member)| Ok(TopicRule { key: id(key)?, members: vec![id(member)?] }))
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let lm = MockLm::fit(tokenizer.vocab_size(), &seqs, rules, 4.0, 4096)?;
    Ok(PlantedWorld { store: ChunkStore::new(chunks)?, tokenizer, lm: Arc::new(lm), items, planted })
}

/// `n_items` four-way questions plus `distractors_per_item` chunks carrying
/// random answer keys.
pub fn multiple_choice_world(seed: u64, n_items: usize, distractors_per_item: usize) -> Result<PlantedWorld<McItem>, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut words: Vec<String> = LETTERS.iter().flat_map(|l| [l.to_string(), format!("{l}."), format!("ans{l}")]).collect();
    words.extend((0..20).map(|j| format!("f{j}")));
    let (mut docs, mut items, mut planted) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..n_items {
        let q = question_words(i);
        words.extend(q.iter().cloned());
        let gold = rng.gen_range(0..LETTERS.len());
        let mut body = q.clone();
        body.push(format!("ans{}", LETTERS[gold]));
        body.extend(fillers(&mut rng, 6));
        body.shuffle(&mut rng);
        planted.push(format!("planted-{i:03}"));
        docs.push((format!("planted-{i:03}"), body));
        for j in 0..distractors_per_item {
            let mut body = fillers(&mut rng, 8);
            body.push(q[rng.gen_range(0..q.len())].clone());
            body.push(format!("ans{}", LETTERS[rng.gen_range(0..LETTERS.len())]));
            body.shuffle(&mut rng);
            docs.push((format!("other-{i:03}-{j}"), body));
        }
        items.push(McItem {
            id: format!("mc-{i:03}"),
            question: q.join(" "),
            choices: fillers(&mut rng, 4),
            gold: Some(LETTERS[gold].to_string()),
        });
    }
    let patterns = LETTERS.iter().map(|l| format!("Answer: {l}")).collect();
    let topics = LETTERS.iter().map(|l| (format!("ans{l}"), l.to_string())).collect();
    build(words, docs, patterns, topics, items, planted)
}

/// `n_items` questions (at most 8), each answered by a distinct city name
/// keyed in its planted chunk.
pub fn open_qa_world(seed: u64, n_items: usize) -> Result<PlantedWorld<QaItem>, HarnessError> {
    if n_items > ANSWERS.len() {
        return Err(HarnessError::Config(format!("at most {} planted QA items", ANSWERS.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut words: Vec<String> = ANSWERS.iter().flat_map(|a| [a.to_string(), format!("ans_{a}")]).collect();
    words.extend((0..20).map(|j| format!("f{j}")));
    let mut answers = ANSWERS.to_vec();
    answers.shuffle(&mut rng);
    let (mut docs, mut items, mut planted) = (Vec::new(), Vec::new(), Vec::new());
    for (i, answer) in answers.iter().take(n_items).enumerate() {
        let q = question_words(i);
        words.extend(q.iter().cloned());
        let mut body = q.clone();
        body.push(format!("ans_{answer}"));
        body.extend(fillers(&mut rng, 6));
        body.shuffle(&mut rng);
        planted.push(format!("planted-{i:03}"));
        docs.push((format!("planted-{i:03}"), body));
        items.push(QaItem { id: format!("qa-{i:03}"), question: q.join(" "), golds: vec![format!("The {answer}.")] });
    }
    let patterns = ANSWERS.iter().map(|a| format!("Answer: {a} {EOS}")).collect();
    let topics = ANSWERS.iter().map(|a| (format!("ans_{a}"), a.to_string())).collect();
    build(words, docs, patterns, topics, items, planted)
}
