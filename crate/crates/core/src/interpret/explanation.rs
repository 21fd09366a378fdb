use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Technique {
    Lime,
    Saliency,
}

/// A surrogate feature and its signed weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureWeight {
    pub token: String,
    pub weight: f64,
}

/// Per-token importance for one prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub technique: Technique,
    pub tokens: Vec<String>,
    /// One weight per token: signed for LIME, non-negative gradient norms for saliency.
    pub weights: Vec<f64>,
    pub target_class: usize,
    /// Model outputs for the unperturbed input.
    pub probabilities: Vec<f64>,
    /// LIME only: the selected features, largest magnitude first.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub features: Vec<FeatureWeight>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub intercept: Option<f64>,
}
