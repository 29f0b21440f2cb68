//! Seeded inputs shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rolecast::corpus::{Document, Source};

pub fn random_points(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

const NAMES: [&str; 8] = [
    "Encana",
    "Jared Polis",
    "Erie Rising",
    "Lafayette",
    "Elise Jones",
    "Boulder County",
    "Cliff Willmeng",
    "Broomfield",
];
const WORDS: [&str; 12] = [
    "harmed",
    "protected",
    "poisoned",
    "helped",
    "sued",
    "residents",
    "wells",
    "water",
    "the",
    "town",
    "council",
    "drilling",
];

/// An article-like document of `sentences` sentences.
pub fn synthetic_article(sentences: usize, seed: u64) -> Document {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let text: Vec<String> = (0..sentences)
        .map(|_| {
            let name = NAMES[rng.gen_range(0..NAMES.len())];
            let words: Vec<&str> = (0..rng.gen_range(4..12))
                .map(|_| WORDS[rng.gen_range(0..WORDS.len())])
                .collect();
            format!("{name} {}.", words.join(" "))
        })
        .collect();
    Document::new("bench", text.join(" "), Source::Article)
}
