//! Word and character vocabularies with reserved padding and unknown ids.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const DEFAULT_MAX_SIZE: usize = 10_000;

/// Frequency-ranked token vocabulary. Ids 0 and 1 are PAD and UNK; the remaining ids
/// follow descending corpus frequency with ties broken lexicographically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

fn ranked<K: Ord + Clone + std::hash::Hash>(counts: HashMap<K, usize>) -> Vec<K> {
    let mut items: Vec<(K, usize)> = counts.into_iter().collect();
    items.sort_by(|(a, ca), (b, cb)| cb.cmp(ca).then_with(|| a.cmp(b)));
    items.into_iter().map(|(k, _)| k).collect()
}

impl Vocabulary {
    /// Builds from a tokenized training corpus, keeping the `max_size − 2` most frequent tokens.
    pub fn build<'a, I, S>(corpus: I, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        if max_size < 2 {
            return Err(Error::InvalidConfig(format!("vocabulary cap {max_size} leaves no room for PAD/UNK")));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut seen_any = false;
        for doc in corpus {
            for tok in doc {
                seen_any = true;
                let tok = tok.as_ref();
                if tok == PAD_TOKEN || tok == UNK_TOKEN {
                    continue;
                }
                *counts.entry(tok.to_string()).or_default() += 1;
            }
        }
        if !seen_any {
            return Err(Error::InvalidInput("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        tokens.extend(ranked(counts).into_iter().take(max_size - 2));
        Ok(Vocabulary::from(tokens))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or UNK.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.tokens[i].clone()).collect()
    }

    /// Hex SHA-256 over the id-ordered token list.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        hex_digest(h)
    }
}

pub(crate) fn hex_digest(h: Sha256) -> String {
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Character inventory of the training tokens, frequency ranked like [`Vocabulary`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<char>", into = "Vec<char>")]
pub struct CharVocabulary {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl From<Vec<char>> for CharVocabulary {
    fn from(chars: Vec<char>) -> Self {
        let index = chars.iter().enumerate().skip(2).map(|(i, c)| (*c, i)).collect();
        CharVocabulary { chars, index }
    }
}

impl From<CharVocabulary> for Vec<char> {
    fn from(v: CharVocabulary) -> Self {
        v.chars
    }
}

impl CharVocabulary {
    pub fn build<'a, I, S>(corpus: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut counts: HashMap<char, usize> = HashMap::new();
        for doc in corpus {
            for tok in doc {
                for c in tok.as_ref().chars() {
                    *counts.entry(c).or_default() += 1;
                }
            }
        }
        if counts.is_empty() {
            return Err(Error::InvalidInput("cannot build a character vocabulary from an empty corpus".into()));
        }
        // Slots 0 and 1 are placeholders for PAD and UNK and never looked up.
        let mut chars = vec!['\0', '\u{fffd}'];
        chars.extend(ranked(counts));
        Ok(CharVocabulary::from(chars))
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn id(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(UNK)
    }

    pub fn get(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    /// Character ids of `word`, truncated to `c_max` and padded with PAD.
    pub fn encode_word(&self, word: &str, c_max: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = word.chars().take(c_max).map(|c| self.id(c)).collect();
        ids.resize(c_max, PAD);
        ids
    }

    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.chars {
            let mut buf = [0u8; 4];
            h.update(c.encode_utf8(&mut buf).as_bytes());
            h.update([0u8]);
        }
        hex_digest(h)
    }
}
