use serde::{Deserialize, Serialize};

use super::dataset::{Story, Task};
use super::tokenize::tokenize;
use super::vocab::{CharVocabulary, Vocabulary, PAD};

pub const DEFAULT_MAX_TOKENS: usize = 200;
pub const DEFAULT_MAX_CHARS: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BatchLabels {
    /// One 0/1 row of three category flags per example.
    Multi(Vec<[u8; 3]>),
    /// One class index per example (1 = category present).
    Single(Vec<usize>),
}

/// Padded id tensors for a group of stories.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub t_max: usize,
    pub c_max: usize,
    /// `B × t_max`
    pub word_ids: Vec<usize>,
    /// `B × t_max × c_max`
    pub char_ids: Vec<usize>,
    pub lengths: Vec<usize>,
    pub labels: BatchLabels,
}

/// Unpadded view of one encoded example.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub words: &'a [usize],
    /// `words.len() × c_max` character ids
    pub chars: &'a [usize],
    pub c_max: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn example(&self, i: usize) -> Example<'_> {
        let len = self.lengths[i];
        let w0 = i * self.t_max;
        let c0 = w0 * self.c_max;
        Example {
            words: &self.word_ids[w0..w0 + len],
            chars: &self.char_ids[c0..c0 + len * self.c_max],
            c_max: self.c_max,
        }
    }
}

/// Tokenizes and encodes stories, truncating to `t_max` tokens and `c_max` characters per
/// token and padding with PAD. Out-of-vocabulary tokens map to UNK.
pub fn encode_batch(
    stories: &[&Story],
    vocab: &Vocabulary,
    chars: &CharVocabulary,
    t_max: usize,
    c_max: usize,
    task: Task,
) -> Batch {
    let token_lists: Vec<Vec<String>> = stories.iter().map(|s| tokenize(&s.text)).collect();
    let mut batch = encode_tokens(&token_lists, vocab, chars, t_max, c_max);
    batch.labels = match task {
        Task::Multi => BatchLabels::Multi(stories.iter().map(|s| s.labels.flags().map(u8::from)).collect()),
        Task::Single(c) => BatchLabels::Single(stories.iter().map(|s| s.class(c)).collect()),
    };
    batch
}

/// Encodes pre-tokenized texts; the labels are left empty.
pub fn encode_tokens<S: AsRef<str>>(
    token_lists: &[Vec<S>],
    vocab: &Vocabulary,
    chars: &CharVocabulary,
    t_max: usize,
    c_max: usize,
) -> Batch {
    let b = token_lists.len();
    let mut word_ids = vec![PAD; b * t_max];
    let mut char_ids = vec![PAD; b * t_max * c_max];
    let mut lengths = Vec::with_capacity(b);
    for (i, tokens) in token_lists.iter().enumerate() {
        let len = tokens.len().min(t_max);
        for (t, tok) in tokens.iter().take(len).enumerate() {
            let tok = tok.as_ref();
            word_ids[i * t_max + t] = vocab.id(tok);
            let c0 = (i * t_max + t) * c_max;
            char_ids[c0..c0 + c_max].copy_from_slice(&chars.encode_word(tok, c_max));
        }
        lengths.push(len);
    }
    Batch {
        t_max,
        c_max,
        word_ids,
        char_ids,
        lengths,
        labels: BatchLabels::Multi(Vec::new()),
    }
}
