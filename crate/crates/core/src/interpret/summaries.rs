use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::data::tokenize;
use crate::error::{Error, Result};

pub const TOP_TERMS: usize = 10;
pub const REPRESENTATIVES: usize = 3;

const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any", "are", "as", "at", "be",
    "because", "been", "before", "being", "below", "between", "both", "but", "by", "can", "could", "did", "do",
    "does", "doing", "down", "during", "each", "few", "for", "from", "further", "had", "has", "have", "having",
    "he", "her", "here", "hers", "herself", "him", "himself", "his", "how", "i", "if", "in", "into", "is", "it",
    "its", "itself", "just", "me", "more", "most", "my", "myself", "no", "nor", "not", "now", "of", "off", "on",
    "once", "only", "or", "other", "our", "ours", "ourselves", "out", "over", "own", "same", "she", "should", "so",
    "some", "such", "than", "that", "the", "their", "theirs", "them", "themselves", "then", "there", "these",
    "they", "this", "those", "through", "to", "too", "under", "until", "up", "very", "was", "we", "were", "what",
    "when", "where", "which", "while", "who", "whom", "why", "will", "with", "would", "you", "your", "yours",
    "yourself", "yourselves", "<unk>", "<pad>",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.contains(&token)
}

fn is_content(token: &str) -> bool {
    token.chars().any(char::is_alphanumeric) && !is_stopword(token)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Representative {
    pub index: usize,
    pub distance: f64,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusterSummary {
    pub cluster: usize,
    pub size: usize,
    /// Highest TF-IDF terms when each cluster's stories form one document.
    pub top_terms: Vec<(String, f64)>,
    /// Stories nearest the centroid.
    pub representatives: Vec<Representative>,
}

/// Describes every cluster by its distinctive terms and most central stories.
pub fn summarize_clusters(
    texts: &[String],
    points: &[Vec<f64>],
    assignments: &[usize],
    centroids: &[Vec<f64>],
) -> Result<Vec<ClusterSummary>> {
    if texts.len() != points.len() || points.len() != assignments.len() {
        return Err(Error::Contract("texts, points and assignments must align".into()));
    }
    let k = centroids.len();
    if assignments.iter().any(|&c| c >= k) {
        return Err(Error::Contract("assignment outside the centroid range".into()));
    }
    let mut tf: Vec<HashMap<String, f64>> = vec![HashMap::new(); k];
    for (text, &c) in texts.iter().zip(assignments) {
        for tok in tokenize(text).into_iter().filter(|t| is_content(t)) {
            *tf[c].entry(tok).or_insert(0.0) += 1.0;
        }
    }
    let mut df: BTreeMap<&str, f64> = BTreeMap::new();
    for doc in &tf {
        for term in doc.keys() {
            *df.entry(term.as_str()).or_insert(0.0) += 1.0;
        }
    }
    let n = k as f64;
    let mut out = Vec::with_capacity(k);
    for c in 0..k {
        let mut terms: Vec<(String, f64)> = tf[c]
            .iter()
            .map(|(t, &count)| (t.clone(), count * (((1.0 + n) / (1.0 + df[t.as_str()])).ln() + 1.0)))
            .collect();
        terms.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        terms.truncate(TOP_TERMS);
        let mut members: Vec<Representative> = assignments
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == c)
            .map(|(i, _)| Representative {
                index: i,
                distance: points[i].iter().zip(&centroids[c]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
                text: texts[i].clone(),
            })
            .collect();
        let size = members.len();
        members.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.index.cmp(&b.index)));
        members.truncate(REPRESENTATIVES);
        out.push(ClusterSummary {
            cluster: c,
            size,
            top_terms: terms,
            representatives: members,
        });
    }
    Ok(out)
}
