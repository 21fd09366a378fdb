//! Keyword-determined synthetic stories for smoke tests and separability checks.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{Category, LabelSet, Story};

const FILLER: &[&str] = &[
    "i", "was", "walking", "near", "the", "market", "with", "my", "friend", "when", "a", "man", "on", "road",
    "evening", "bus", "stop", "station", "college", "morning", "we", "were", "going", "home", "from", "work",
    "it", "happened", "there", "crowded", "train", "after", "class", "during", "day", "outside", "shop", "park",
    "street", "near", "office", "he", "they", "some", "people", "around", "this", "that", "time", "again",
];

const LOCATIONS: &[&str] = &["metro", "bus stop", "market", "college gate", "railway station"];

/// Words that mark each category in the synthetic corpus.
pub fn keywords(category: Category) -> &'static [&'static str] {
    match category {
        Category::Commenting => &["commented", "remarks", "whistled"],
        Category::Ogling => &["stared", "leering", "ogled"],
        Category::Groping => &["touched", "groped", "grabbed"],
    }
}

/// `n` stories whose labels are exactly the categories whose keywords they contain.
///
/// Label combinations cycle through all eight subsets so every stratum is populated.
pub fn keyword_corpus(n: usize, seed: u64) -> Vec<Story> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|id| {
            let labels = LabelSet::from_bits((id % 8) as u8);
            let len = rng.random_range(6..=14);
            let mut words: Vec<&str> = (0..len).map(|_| *FILLER.choose(&mut rng).unwrap()).collect();
            for c in Category::ALL {
                if labels.contains(c) {
                    let kw = *keywords(c).choose(&mut rng).unwrap();
                    let at = rng.random_range(0..=words.len());
                    words.insert(at, kw);
                }
            }
            let mut story = Story::new(id, words.join(" "), labels);
            story.location = Some(LOCATIONS.choose(&mut rng).unwrap().to_string());
            story
        })
        .collect()
}
