use serde::Serialize;

use crate::error::{Error, Result};

/// Spelling suggestions listed when a seed word is missing.
const SUGGESTIONS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Neighbor {
    pub word: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedNeighbors {
    pub seed: String,
    /// Cosine similarity in the original embedding space, most similar first.
    pub original: Vec<Neighbor>,
    /// Euclidean distance in the projection, nearest first.
    pub projected: Vec<Neighbor>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn nearest_spellings(words: &[String], seed: &str) -> Vec<String> {
    let mut ranked: Vec<(usize, &String)> = words.iter().map(|w| (strsim::levenshtein(seed, w), w)).collect();
    ranked.sort();
    ranked.into_iter().take(SUGGESTIONS).map(|(_, w)| w.clone()).collect()
}

/// The `k` nearest words to `seed` in both spaces (fewer when the vocabulary is small).
/// The seed itself is never its own neighbour.
pub fn seed_word_neighbors(
    words: &[String],
    original: &[Vec<f64>],
    projected: &[[f64; 2]],
    seed: &str,
    k: usize,
) -> Result<SeedNeighbors> {
    if words.len() != original.len() || words.len() != projected.len() {
        return Err(Error::Contract("words, vectors and projection must align".into()));
    }
    let s = words.iter().position(|w| w == seed).ok_or_else(|| {
        Error::InvalidInput(format!(
            "seed word '{seed}' is not among the projected words; closest spellings: {}",
            nearest_spellings(words, seed).join(", ")
        ))
    })?;
    let others = || (0..words.len()).filter(move |&i| i != s);
    let mut orig: Vec<Neighbor> = others()
        .map(|i| Neighbor {
            word: words[i].clone(),
            score: cosine(&original[s], &original[i]),
        })
        .collect();
    orig.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.word.cmp(&b.word)));
    orig.truncate(k);
    let mut proj: Vec<Neighbor> = others()
        .map(|i| Neighbor {
            word: words[i].clone(),
            score: ((projected[s][0] - projected[i][0]).powi(2) + (projected[s][1] - projected[i][1]).powi(2)).sqrt(),
        })
        .collect();
    proj.sort_by(|a, b| a.score.total_cmp(&b.score).then_with(|| a.word.cmp(&b.word)));
    proj.truncate(k);
    Ok(SeedNeighbors {
        seed: seed.to_string(),
        original: orig,
        projected: proj,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (Vec<String>, Vec<Vec<f64>>, Vec<[f64; 2]>) {
        let words = ["groping", "touching", "ogling", "staring"].map(String::from).to_vec();
        let vecs = vec![vec![1.0, 0.0], vec![0.9, 0.1], vec![0.0, 1.0], vec![0.1, 0.9]];
        let proj = vec![[0.0, 0.0], [0.5, 0.0], [5.0, 5.0], [5.0, 4.0]];
        (words, vecs, proj)
    }

    #[test]
    fn excludes_seed_and_truncates() {
        let (w, v, p) = setup();
        let n = seed_word_neighbors(&w, &v, &p, "groping", 10).unwrap();
        assert_eq!(n.original.len(), 3);
        assert!(n.original.iter().all(|x| x.word != "groping"));
        assert_eq!(n.original[0].word, "touching");
        assert_eq!(n.projected[0].word, "touching");
        assert_eq!(n.projected[0].score, 0.5);
    }

    #[test]
    fn missing_seed_lists_spellings() {
        let (w, v, p) = setup();
        let err = seed_word_neighbors(&w, &v, &p, "groped", 2).unwrap_err().to_string();
        assert!(err.contains("groping"), "{err}");
    }
}
