use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Architecture, ModelConfig};
use crate::data::{encode_tokens, tokenize, Batch, CharVocabulary, Example, Task, Vocabulary, PAD};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::linalg::{logistic, softmax};
use crate::nn::{
    conv_feature_maps, conv_max_pool, dropout, grouped_conv_max_pool, lstm_forward, ConvFilter, Direction, LstmStack,
};
use crate::params::{glorot_uniform, uniform, ParamId, ParamSet};
use crate::tensor::Tensor;

/// Embedding tables start uniform in `[-EMBED_INIT, EMBED_INIT]`.
pub const EMBED_INIT: f64 = 0.1;

#[derive(Clone, Debug)]
struct Layout {
    embedding: ParamId,
    char_embedding: Option<ParamId>,
    char_filters: Vec<ConvFilter>,
    filters: Vec<ConvFilter>,
    lstm: Option<LstmStack>,
    fc_weight: ParamId,
    fc_bias: ParamId,
}

/// Node handles produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// `T × E` word embeddings of the example.
    pub embeddings: NodeId,
    /// `1 × n` input of the final fully-connected layer (before dropout).
    pub features: NodeId,
    /// `1 × C` pre-softmax or pre-sigmoid scores.
    pub logits: NodeId,
}

/// How the word-embedding rows enter the graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingInput {
    /// Row lookup into the embedding parameter (sparse gradients for training).
    Lookup,
    /// A copied `T × E` leaf that receives its own per-token gradient.
    Leaf,
}

/// Dropout behavior of a forward pass.
#[derive(Clone, Copy, Debug)]
pub enum Mode {
    Eval,
    /// Training with the dropout mask drawn from this seed.
    Train { seed: u64 },
}

/// Per-epoch training record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Dev accuracy (single-label) or dev Hamming score (multi-label).
    pub dev_metric: f64,
}

/// A network with its parameters and the vocabularies it reads.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub chars: CharVocabulary,
    pub params: ParamSet,
    layout: Layout,
}

/// A model together with the record of how it was trained.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub model: Model,
    pub history: Vec<EpochRecord>,
    /// Epoch (1-based) whose parameters were kept, if any epoch improved on the initial model.
    pub best_epoch: Option<usize>,
    pub best_dev_metric: f64,
}

impl Model {
    /// Builds the network for `config`, initializing parameters from `config.seed`.
    pub fn new(config: ModelConfig, vocab: Vocabulary, chars: CharVocabulary) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let e = config.embedding_dim;
        let embedding = params.insert("embedding", uniform(&[vocab.len(), e], EMBED_INIT, &mut rng));

        let mut seq_dim = e;
        let (char_embedding, char_filters) = if config.architecture.uses_chars() {
            let table = params.insert(
                "char_embedding",
                uniform(&[chars.len(), config.char_embedding_dim], EMBED_INIT, &mut rng),
            );
            let filters: Vec<_> = config
                .char_filter_widths
                .iter()
                .map(|&w| {
                    ConvFilter::init(&mut params, "char_conv", w, config.char_embedding_dim, config.char_filters_per_width, &mut rng)
                })
                .collect();
            seq_dim += filters.iter().map(|f| f.count).sum::<usize>();
            (Some(table), filters)
        } else {
            (None, Vec::new())
        };

        let filters: Vec<_> = if config.architecture.uses_conv() {
            config
                .filter_widths
                .iter()
                .map(|&w| ConvFilter::init(&mut params, "conv", w, seq_dim, config.filters_per_width, &mut rng))
                .collect()
        } else {
            Vec::new()
        };
        if !filters.is_empty() {
            seq_dim = filters.iter().map(|f| f.count).sum();
        }

        let lstm = if config.architecture.uses_lstm() {
            let direction = match config.architecture {
                Architecture::CnnRnnBidirecChar => Direction::Bidirectional,
                _ => Direction::Forward,
            };
            Some(LstmStack::init(&mut params, "lstm", seq_dim, config.lstm_hidden, config.lstm_layers, direction, &mut rng)?)
        } else {
            None
        };

        let n = config.feature_dim();
        let c = config.num_outputs();
        let fc_weight = params.insert("fc.weight", glorot_uniform(&[n, c], n, c, &mut rng));
        let fc_bias = params.insert("fc.bias", Tensor::zeros(&[c]));

        Ok(Model {
            config,
            vocab,
            chars,
            params,
            layout: Layout {
                embedding,
                char_embedding,
                char_filters,
                filters,
                lstm,
                fc_weight,
                fc_bias,
            },
        })
    }

    /// Builds vocabularies from training texts and an initialized model over them.
    pub fn from_training_texts<'a>(config: ModelConfig, texts: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let tokens: Vec<Vec<String>> = texts.into_iter().map(tokenize).collect();
        let vocab = Vocabulary::build(tokens.iter().map(|t| t.as_slice()), config.vocab_size)?;
        let chars = CharVocabulary::build(tokens.iter().map(|t| t.as_slice()))?;
        Model::new(config, vocab, chars)
    }

    pub fn task(&self) -> Task {
        self.config.task
    }

    pub fn embedding_param(&self) -> ParamId {
        self.layout.embedding
    }

    /// Width of the activation tap (input of the final fully-connected layer).
    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim()
    }

    /// Encodes stories or texts with this model's vocabularies and length limits.
    pub fn encode_texts<S: AsRef<str>>(&self, texts: &[S]) -> Batch {
        let tokens: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t.as_ref())).collect();
        self.encode_token_lists(&tokens)
    }

    pub fn encode_token_lists<S: AsRef<str>>(&self, tokens: &[Vec<S>]) -> Batch {
        encode_tokens(tokens, &self.vocab, &self.chars, self.config.max_tokens, self.config.max_chars)
    }

    /// Word-embedding rows for `words`, entering the graph as requested.
    pub fn embed_words(&self, g: &mut Graph<'_>, words: &[usize], input: EmbeddingInput) -> Result<NodeId> {
        if words.is_empty() {
            return Err(Error::InvalidInput("empty token sequence".into()));
        }
        match input {
            EmbeddingInput::Lookup => {
                let table = g.param(self.layout.embedding);
                g.gather(table, words, None)
            }
            EmbeddingInput::Leaf => {
                let table = self.params.get(self.layout.embedding);
                let e = table.cols();
                let mut data = Vec::with_capacity(words.len() * e);
                for &w in words {
                    if w >= table.rows() {
                        return Err(Error::InvalidInput(format!("word id {w} outside vocabulary")));
                    }
                    data.extend_from_slice(table.row(w));
                }
                Ok(g.input(Tensor::matrix(words.len(), e, data)?.with_grad(true)))
            }
        }
    }

    /// Character-CNN word features: one `1 × ΣF` row per word of `c_max` character ids.
    ///
    /// PAD characters embed to zero, so an all-PAD word yields `relu(bias)` maxima.
    pub fn char_cnn_embed(&self, g: &mut Graph<'_>, chars: &[usize], c_max: usize) -> Result<NodeId> {
        let table = self
            .layout
            .char_embedding
            .ok_or_else(|| Error::InvalidConfig(format!("{} has no character embeddings", self.config.architecture)))?;
        if c_max == 0 || chars.is_empty() || chars.len() % c_max != 0 {
            return Err(Error::InvalidInput("character ids must form whole words of c_max ids".into()));
        }
        let table = g.param(table);
        let emb = g.gather(table, chars, Some(PAD))?;
        let pooled = grouped_conv_max_pool(g, emb, chars.len() / c_max, &self.layout.char_filters)?;
        Ok(g.relu(pooled))
    }

    /// Full forward pass of one example.
    pub fn forward(&self, g: &mut Graph<'_>, ex: Example<'_>, input: EmbeddingInput, mode: Mode) -> Result<Forward> {
        let embeddings = self.embed_words(g, ex.words, input)?;
        self.forward_embedded(g, ex, embeddings, mode)
    }

    /// Forward pass from an already-placed `T × E` word-embedding node.
    pub fn forward_embedded(&self, g: &mut Graph<'_>, ex: Example<'_>, embeddings: NodeId, mode: Mode) -> Result<Forward> {
        let shape = g.value(embeddings).shape();
        if shape.len() != 2 || shape[0] != ex.words.len() || shape[1] != self.config.embedding_dim {
            return Err(Error::InvalidInput(format!(
                "embeddings of shape {shape:?} do not match {} tokens of width {}",
                ex.words.len(),
                self.config.embedding_dim
            )));
        }
        let seq = if self.config.architecture.uses_chars() {
            let char_feats = self.char_cnn_embed(g, ex.chars, ex.c_max)?;
            g.concat_cols(&[embeddings, char_feats])?
        } else {
            embeddings
        };
        let features = match self.config.architecture {
            Architecture::Cnn => {
                let pooled = conv_max_pool(g, seq, &self.layout.filters)?;
                g.relu(pooled)
            }
            Architecture::Rnn => self.run_lstm(g, seq)?,
            Architecture::CnnRnn | Architecture::CnnRnnBidirecChar => {
                let maps = conv_feature_maps(g, seq, &self.layout.filters)?;
                let maps = g.relu(maps);
                self.run_lstm(g, maps)?
            }
        };
        let dropped = match mode {
            Mode::Eval => features,
            Mode::Train { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                dropout(g, features, self.config.keep_prob, true, &mut rng)?
            }
        };
        let w = g.param(self.layout.fc_weight);
        let b = g.param(self.layout.fc_bias);
        let logits = g.affine(dropped, w, b)?;
        Ok(Forward {
            embeddings,
            features,
            logits,
        })
    }

    fn run_lstm(&self, g: &mut Graph<'_>, seq: NodeId) -> Result<NodeId> {
        let stack = self.layout.lstm.as_ref().expect("recurrent architecture has an LSTM");
        Ok(lstm_forward(g, seq, stack)?.1)
    }

    /// Training loss of one example: softmax cross-entropy (single) or mean binary
    /// cross-entropy over the three categories (multi).
    pub fn loss(&self, g: &mut Graph<'_>, logits: NodeId, target: &Target) -> Result<NodeId> {
        match (self.config.task, target) {
            (Task::Single(_), Target::Class(c)) => g.softmax_cross_entropy(logits, &[*c]),
            (Task::Multi, Target::Flags(f)) => g.sigmoid_bce(logits, &f.map(f64::from)),
            _ => Err(Error::InvalidInput(format!("target does not match task {}", self.config.task))),
        }
    }

    /// Pre-softmax / pre-sigmoid scores of one example, dropout off.
    pub fn logits(&self, ex: Example<'_>) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params);
        let f = self.forward(&mut g, ex, EmbeddingInput::Lookup, Mode::Eval)?;
        g.ensure_finite(f.logits, "logits")?;
        Ok(g.value(f.logits).data().to_vec())
    }

    /// Class probabilities (single) or per-category sigmoid activations (multi).
    pub fn outputs(&self, ex: Example<'_>) -> Result<Vec<f64>> {
        let z = self.logits(ex)?;
        Ok(match self.config.task {
            Task::Single(_) => softmax(&z),
            Task::Multi => z.iter().map(|&v| logistic(v)).collect(),
        })
    }

    /// Activations feeding the final fully-connected layer, dropout off.
    pub fn features(&self, ex: Example<'_>) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params);
        let f = self.forward(&mut g, ex, EmbeddingInput::Lookup, Mode::Eval)?;
        g.ensure_finite(f.features, "activations")?;
        Ok(g.value(f.features).data().to_vec())
    }

    /// `B × 2` softmax probabilities of a single-label model.
    pub fn probabilities_single(&self, batch: &Batch) -> Result<Vec<[f64; 2]>> {
        if !matches!(self.config.task, Task::Single(_)) {
            return Err(Error::InvalidConfig("probabilities_single called on a multi-label model".into()));
        }
        (0..batch.len())
            .map(|i| {
                let p = self.outputs(batch.example(i))?;
                Ok([p[0], p[1]])
            })
            .collect()
    }

    /// `B × 3` sigmoid activations of a multi-label model.
    pub fn activations_multi(&self, batch: &Batch) -> Result<Vec<[f64; 3]>> {
        if self.config.task != Task::Multi {
            return Err(Error::InvalidConfig("activations_multi called on a single-label model".into()));
        }
        (0..batch.len())
            .map(|i| {
                let a = self.outputs(batch.example(i))?;
                Ok([a[0], a[1], a[2]])
            })
            .collect()
    }

    /// Outputs for pre-tokenized texts; empty texts fall back to a single UNK token.
    pub fn outputs_for_tokens<S: AsRef<str>>(&self, tokens: &[Vec<S>]) -> Result<Vec<Vec<f64>>> {
        let unk = vec![crate::data::UNK_TOKEN.to_string()];
        let lists: Vec<Vec<String>> = tokens
            .iter()
            .map(|t| if t.is_empty() { unk.clone() } else { t.iter().map(|s| s.as_ref().to_string()).collect() })
            .collect();
        let batch = self.encode_token_lists(&lists);
        (0..batch.len()).map(|i| self.outputs(batch.example(i))).collect()
    }

    /// Sets the final fully-connected layer to zero.
    pub fn zero_head(&mut self) {
        self.params.get_mut(self.layout.fc_weight).fill(0.0);
        self.params.get_mut(self.layout.fc_bias).fill(0.0);
    }

    /// Parameter ids of the final layer (weight, bias).
    pub fn head_params(&self) -> (ParamId, ParamId) {
        (self.layout.fc_weight, self.layout.fc_bias)
    }

    /// Deterministic per-example dropout seed.
    pub fn dropout_seed(&self, epoch: usize, position: usize) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x5eed_d50f);
        rng.set_stream(((epoch as u64) << 32) | position as u64);
        rng.random()
    }
}

/// Gold label of one training example.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    Class(usize),
    Flags([bool; 3]),
}

/// Multi-label decision `C = 1(a ≥ t)` per category; the boundary counts as positive.
pub fn predict_multi(activations: &[f64; 3], t: f64) -> [bool; 3] {
    activations.map(|a| a >= t)
}
