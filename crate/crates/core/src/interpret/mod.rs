//! Post-hoc interpretation: local explanations, activation clustering and embedding maps.

mod activations;
mod explanation;
pub mod kmeans;
pub mod lime;
mod neighbors;
pub mod saliency;
mod summaries;
mod svg;
pub mod tsne;

pub use activations::{extract_activations, Layer};
pub use explanation::{Explanation, FeatureWeight, Technique};
pub use kmeans::{choose_k, kmeans, silhouette, KMeansResult, KSelection};
pub use lime::{lime_explain, LimeConfig};
pub use neighbors::{seed_word_neighbors, Neighbor, SeedNeighbors};
pub use saliency::saliency_map;
pub use summaries::{is_stopword, summarize_clusters, ClusterSummary, Representative};
pub use svg::heatmap_svg;
pub use tsne::{tsne, TsneConfig, TsneResult};
