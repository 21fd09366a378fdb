//! Story ingestion, tokenization, vocabularies and batching.

mod batch;
mod dataset;
pub mod synthetic;
mod tokenize;
mod vocab;

pub use batch::{encode_batch, encode_tokens, Batch, BatchLabels, Example, DEFAULT_MAX_CHARS, DEFAULT_MAX_TOKENS};
pub use dataset::{
    apply_index_splits, load_dataset, resolve_splits, stratified_split, write_dataset, Category, LabelSet,
    LoadedDataset, SplitName, SplitSource, Splits, Story, Task,
};
pub use tokenize::tokenize;
pub use vocab::{CharVocabulary, Vocabulary, DEFAULT_MAX_SIZE, PAD, PAD_TOKEN, UNK, UNK_TOKEN};
