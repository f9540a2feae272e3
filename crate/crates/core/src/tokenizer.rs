//! Tokenizers shared by the corpus, encoder and mock LM.
//!
//! Two built-ins: a whitespace word splitter over a closed vocabulary, and a
//! byte-level tokenizer whose ids are the UTF-8 bytes themselves.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub type TokenId = u32;

pub const UNK: &str = "<unk>";
pub const EOS: &str = "<eos>";

#[derive(Debug, thiserror::Error)]
pub enum TokenizerError {
    #[error("input is not valid UTF-8: {0}")]
    InvalidUtf8(#[from] std::str::Utf8Error),
}

/// Closed word vocabulary. Ids 0 and 1 are always `<unk>` and `<eos>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from an explicit token list; specials are prepended
    /// when missing and duplicates are dropped (first occurrence wins).
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut out = Vocabulary { tokens: Vec::new(), index: HashMap::new() };
        out.push(UNK.to_string());
        out.push(EOS.to_string());
        for t in tokens {
            out.push(t.into());
        }
        out
    }

    /// Sorted set of whitespace-separated words found in `texts`.
    pub fn from_texts<'a, I>(texts: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let words: BTreeSet<&str> = texts.into_iter().flat_map(str::split_whitespace).collect();
        Self::from_tokens(words)
    }

    fn push(&mut self, token: String) {
        if self.index.contains_key(&token) {
            return;
        }
        self.index.insert(token.clone(), self.tokens.len() as TokenId);
        self.tokens.push(token);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn piece(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Tokenizer selection. Serialized as `{"kind": "whitespace", "tokens": [...]}`
/// or `{"kind": "byte"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Tokenizer {
    Whitespace {
        #[serde(with = "vocab_serde")]
        tokens: Vocabulary,
    },
    Byte,
}

mod vocab_serde {
    use super::Vocabulary;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vocabulary, s: S) -> Result<S::Ok, S::Error> {
        v.tokens().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vocabulary, D::Error> {
        let tokens = Vec::<String>::deserialize(d)?;
        Ok(Vocabulary::from_tokens(tokens))
    }
}

impl Tokenizer {
    pub fn whitespace(vocab: Vocabulary) -> Self {
        Tokenizer::Whitespace { tokens: vocab }
    }

    /// Stable identifier; whitespace tokenizers are fingerprinted by vocabulary.
    pub fn id(&self) -> String {
        match self {
            Tokenizer::Byte => "byte".to_string(),
            Tokenizer::Whitespace { tokens } => {
                let mut h = Sha256::new();
                for t in tokens.tokens() {
                    h.update(t.as_bytes());
                    h.update(b"\n");
                }
                format!("whitespace-{}", &hex::encode(h.finalize())[..12])
            }
        }
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            Tokenizer::Byte => 256,
            Tokenizer::Whitespace { tokens } => tokens.len(),
        }
    }

    /// Deterministic tokenization. Whitespace mode maps out-of-vocabulary words to `<unk>`.
    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        match self {
            Tokenizer::Byte => text.bytes().map(TokenId::from).collect(),
            Tokenizer::Whitespace { tokens } => text
                .split_whitespace()
                .map(|w| tokens.get(w).unwrap_or(0))
                .collect(),
        }
    }

    /// Tokenizes raw bytes, rejecting invalid UTF-8.
    pub fn tokenize_bytes(&self, raw: &[u8]) -> Result<Vec<TokenId>, TokenizerError> {
        let text = std::str::from_utf8(raw)?;
        Ok(self.tokenize(text))
    }

    /// Inverse of [`Tokenizer::tokenize`] up to [`Tokenizer::normalize`].
    /// Byte sequences that split a UTF-8 character decode lossily.
    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        match self {
            Tokenizer::Byte => {
                let bytes: Vec<u8> = ids.iter().map(|&id| id as u8).collect();
                String::from_utf8_lossy(&bytes).into_owned()
            }
            Tokenizer::Whitespace { tokens } => {
                let pieces: Vec<&str> =
                    ids.iter().map(|&id| tokens.piece(id).unwrap_or(UNK)).collect();
                pieces.join(" ")
            }
        }
    }

    /// The canonical form `detokenize(tokenize(text))` returns.
    pub fn normalize(&self, text: &str) -> String {
        self.detokenize(&self.tokenize(text))
    }

    /// Id of a single piece (a word, or one byte in byte mode).
    pub fn token_id(&self, piece: &str) -> Option<TokenId> {
        match self {
            Tokenizer::Byte => match piece.as_bytes() {
                [b] => Some(TokenId::from(*b)),
                _ => None,
            },
            Tokenizer::Whitespace { tokens } => tokens.get(piece),
        }
    }

    /// Tokens that end a generated answer: `<eos>` for words, newline for bytes.
    pub fn stop_tokens(&self) -> Vec<TokenId> {
        match self {
            Tokenizer::Byte => vec![TokenId::from(b'\n')],
            Tokenizer::Whitespace { tokens } => tokens.get(EOS).into_iter().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ws(words: &[&str]) -> Tokenizer {
        Tokenizer::whitespace(Vocabulary::from_tokens(words.iter().copied()))
    }

    #[test]
    fn empty_input_has_no_tokens() {
        assert!(ws(&["a"]).tokenize("").is_empty());
        assert!(Tokenizer::Byte.tokenize("").is_empty());
    }

    #[test]
    fn repeated_word_gives_equal_tokens() {
        let t = ws(&["a"]).tokenize("a a a");
        assert_eq!(t.len(), 3);
        assert!(t.iter().all(|&x| x == t[0]));
    }

    #[test]
    fn oov_words_become_unk_and_normalize() {
        let tok = ws(&["hello", "world"]);
        assert_eq!(tok.normalize("  hello\n\tmars  world "), "hello <unk> world");
    }

    #[test]
    fn invalid_utf8_is_rejected() {
        let err = Tokenizer::Byte.tokenize_bytes(&[0x66, 0xff, 0x66]).unwrap_err();
        assert!(matches!(err, TokenizerError::InvalidUtf8(_)));
    }

    #[test]
    fn byte_tokenizer_round_trips_utf8() {
        let s = "héllo, wörld\n✓";
        let tok = Tokenizer::Byte;
        assert_eq!(tok.detokenize(&tok.tokenize(s)), s);
        assert_eq!(tok.tokenize(s).len(), s.len());
    }

    #[test]
    fn vocabulary_specials_come_first() {
        let v = Vocabulary::from_texts(["b a", "c a"]);
        assert_eq!(v.tokens(), &["<unk>", "<eos>", "a", "b", "c"]);
    }

    #[test]
    fn tokenizer_serde_round_trip() {
        let tok = ws(&["x", "y"]);
        let json = serde_json::to_string(&tok).unwrap();
        assert!(json.contains("\"kind\":\"whitespace\""));
        let back: Tokenizer = serde_json::from_str(&json).unwrap();
        assert_eq!(back, tok);
        assert_eq!(back.id(), tok.id());
        let b: Tokenizer = serde_json::from_str(r#"{"kind":"byte"}"#).unwrap();
        assert_eq!(b, Tokenizer::Byte);
    }
}
