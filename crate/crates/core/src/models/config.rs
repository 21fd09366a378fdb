use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Task, DEFAULT_MAX_CHARS, DEFAULT_MAX_SIZE, DEFAULT_MAX_TOKENS};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    /// Embedding, convolution, max-over-time pooling.
    Cnn,
    /// Embedding into a stacked LSTM, final state.
    Rnn,
    /// LSTM over unpooled convolution features.
    CnnRnn,
    /// CNN-RNN with character-CNN word features and a bidirectional LSTM.
    CnnRnnBidirecChar,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::Cnn,
        Architecture::Rnn,
        Architecture::CnnRnn,
        Architecture::CnnRnnBidirecChar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Cnn => "cnn",
            Architecture::Rnn => "rnn",
            Architecture::CnnRnn => "cnn-rnn",
            Architecture::CnnRnnBidirecChar => "cnn-rnn-bidirec-char",
        }
    }

    pub fn uses_conv(self) -> bool {
        !matches!(self, Architecture::Rnn)
    }

    pub fn uses_lstm(self) -> bool {
        !matches!(self, Architecture::Cnn)
    }

    pub fn uses_chars(self) -> bool {
        matches!(self, Architecture::CnnRnnBidirecChar)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown architecture {s:?}")))
    }
}

/// Architecture, task and every hyperparameter of a model and its training run.
///
/// Keep probabilities are the probability that a unit survives dropout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub task: Task,
    pub embedding_dim: usize,
    pub filter_widths: Vec<usize>,
    pub filters_per_width: usize,
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    pub char_embedding_dim: usize,
    pub char_filter_widths: Vec<usize>,
    pub char_filters_per_width: usize,
    pub keep_prob: f64,
    pub batch_size: usize,
    pub threshold: f64,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub vocab_size: usize,
    pub max_tokens: usize,
    pub max_chars: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Published hyperparameters for each architecture.
    pub fn new(architecture: Architecture, task: Task) -> Self {
        let mut c = ModelConfig {
            architecture,
            task,
            embedding_dim: 300,
            filter_widths: vec![3, 4, 5],
            filters_per_width: 100,
            lstm_layers: 1,
            lstm_hidden: 300,
            char_embedding_dim: 0,
            char_filter_widths: Vec::new(),
            char_filters_per_width: 0,
            keep_prob: 0.8,
            batch_size: 64,
            threshold: 0.5,
            learning_rate: 1e-4,
            clip_norm: 2.0,
            max_epochs: 50,
            patience: 5,
            vocab_size: DEFAULT_MAX_SIZE,
            max_tokens: DEFAULT_MAX_TOKENS,
            max_chars: DEFAULT_MAX_CHARS,
            seed: 42,
        };
        match architecture {
            Architecture::Cnn => {
                c.filters_per_width = 128;
                c.batch_size = 128;
                c.keep_prob = 0.8;
                c.lstm_layers = 0;
                c.lstm_hidden = 0;
            }
            Architecture::Rnn => {
                c.filter_widths.clear();
                c.filters_per_width = 0;
                c.lstm_layers = 2;
                c.lstm_hidden = 60;
                c.batch_size = 64;
                c.keep_prob = 0.75;
            }
            Architecture::CnnRnn => {}
            Architecture::CnnRnnBidirecChar => {
                c.char_embedding_dim = 50;
                c.char_filter_widths = vec![3, 4, 5];
                c.char_filters_per_width = 100;
            }
        }
        c
    }

    /// Smaller widths (embedding 100, recurrent hidden 100) for quick CPU runs.
    pub fn reduced(architecture: Architecture, task: Task) -> Self {
        let mut c = ModelConfig::new(architecture, task);
        c.embedding_dim = 100;
        if c.lstm_hidden > 100 {
            c.lstm_hidden = 100;
        }
        c
    }

    /// Applies a JSON object of field overrides; unknown keys are rejected.
    pub fn with_overrides(&self, overrides: &serde_json::Value) -> Result<Self> {
        let serde_json::Value::Object(map) = overrides else {
            return Err(Error::InvalidConfig("config overrides must be a JSON object".into()));
        };
        let mut base = serde_json::to_value(self)?;
        let obj = base.as_object_mut().expect("config serializes to an object");
        for (k, v) in map {
            if !obj.contains_key(k) {
                return Err(Error::InvalidConfig(format!("unknown config field {k:?}")));
            }
            obj.insert(k.clone(), v.clone());
        }
        let cfg: ModelConfig = serde_json::from_value(base).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn num_outputs(&self) -> usize {
        self.task.num_outputs()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive");
        }
        if self.architecture.uses_conv() && (self.filter_widths.is_empty() || self.filters_per_width == 0) {
            return bad("convolutional architectures need filter widths and a filter count");
        }
        if self.filter_widths.contains(&0) || self.char_filter_widths.contains(&0) {
            return bad("filter widths must be positive");
        }
        if self.architecture.uses_lstm() && (self.lstm_layers == 0 || self.lstm_hidden == 0) {
            return bad("recurrent architectures need at least one LSTM layer and unit");
        }
        if self.architecture.uses_chars() {
            if self.char_embedding_dim == 0 || self.char_filter_widths.is_empty() || self.char_filters_per_width == 0 {
                return bad("character CNN needs an embedding size, widths and a filter count");
            }
            if self.char_filter_widths.iter().any(|&w| w > self.max_chars) {
                return bad("character filter wider than max_chars");
            }
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return bad("keep_prob must lie in (0, 1]");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie in (0, 1)");
        }
        if self.batch_size == 0 || self.max_tokens == 0 || self.max_chars == 0 || self.max_epochs == 0 {
            return bad("batch_size, max_tokens, max_chars and max_epochs must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return bad("learning_rate and clip_norm must be positive");
        }
        if self.vocab_size < 3 {
            return bad("vocab_size must leave room for PAD, UNK and one token");
        }
        Ok(())
    }

    /// Width of the layer feeding the final fully-connected layer.
    pub fn feature_dim(&self) -> usize {
        match self.architecture {
            Architecture::Cnn => self.filter_widths.len() * self.filters_per_width,
            Architecture::Rnn | Architecture::CnnRnn => self.lstm_hidden,
            Architecture::CnnRnnBidirecChar => 2 * self.lstm_hidden,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Category;

    #[test]
    fn published_defaults() {
        let single = Task::Single(Category::Commenting);
        let cnn = ModelConfig::new(Architecture::Cnn, single);
        assert_eq!((cnn.filter_widths.clone(), cnn.filters_per_width, cnn.batch_size, cnn.keep_prob), (vec![3, 4, 5], 128, 128, 0.8));
        let rnn = ModelConfig::new(Architecture::Rnn, single);
        assert_eq!((rnn.lstm_layers, rnn.lstm_hidden, rnn.batch_size, rnn.keep_prob), (2, 60, 64, 0.75));
        let cr = ModelConfig::new(Architecture::CnnRnn, single);
        assert_eq!((cr.filters_per_width, cr.embedding_dim, cr.lstm_hidden), (100, 300, 300));
        let bi = ModelConfig::new(Architecture::CnnRnnBidirecChar, Task::Multi);
        assert_eq!((bi.char_filter_widths.clone(), bi.char_filters_per_width, bi.lstm_hidden), (vec![3, 4, 5], 100, 300));
        assert_eq!(bi.feature_dim(), 600);
        for c in [cnn, rnn, cr, bi] {
            assert_eq!(c.learning_rate, 1e-4);
            assert_eq!(c.clip_norm, 2.0);
            assert_eq!(c.vocab_size, 10_000);
            c.validate().unwrap();
        }
    }

    #[test]
    fn overrides_apply_and_reject_unknown_keys() {
        let base = ModelConfig::new(Architecture::Cnn, Task::Multi);
        let c = base.with_overrides(&serde_json::json!({"batch_size": 8, "threshold": 0.4})).unwrap();
        assert_eq!((c.batch_size, c.threshold), (8, 0.4));
        assert!(base.with_overrides(&serde_json::json!({"hidden": 3})).is_err());
        assert!(base.with_overrides(&serde_json::json!({"keep_prob": 0.0})).is_err());
    }

    #[test]
    fn architecture_names_round_trip() {
        for a in Architecture::ALL {
            assert_eq!(a.name().parse::<Architecture>().unwrap(), a);
        }
    }
}
