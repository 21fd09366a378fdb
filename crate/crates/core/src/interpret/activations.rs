use std::fmt;
use std::str::FromStr;

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::models::Model;

/// Internal layers whose activations can be extracted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Layer {
    /// The feature vector fed to the output layer (after pooling/recurrence and ReLU).
    FcInput,
}

impl Layer {
    pub const ALL: [Layer; 1] = [Layer::FcInput];

    pub fn tag(self) -> &'static str {
        match self {
            Layer::FcInput => "fc-input",
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Layer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Layer::ALL.into_iter().find(|l| l.tag() == s).ok_or_else(|| {
            let known: Vec<&str> = Layer::ALL.iter().map(|l| l.tag()).collect();
            Error::InvalidInput(format!("unknown layer '{s}' (known: {})", known.join(", ")))
        })
    }
}

/// One activation row per example in `batch`, computed in evaluation mode.
pub fn extract_activations(model: &Model, batch: &Batch, layer: Layer) -> Result<Vec<Vec<f64>>> {
    match layer {
        Layer::FcInput => (0..batch.len()).map(|i| model.features(batch.example(i))).collect(),
    }
}
