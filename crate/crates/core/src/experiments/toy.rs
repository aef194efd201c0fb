//! Synthetic data for end-to-end checks at desk scale.

use super::dataset::Example;
use crate::numeric::Rng;
use crate::pretrain::Corpus;

pub const MARKER_A: &str = "alpha";
pub const MARKER_B: &str = "omega";
const FILLER: usize = 40;

/// Filler words `w0 … w39` with both markers inserted at distinct random
/// positions. Label 0 when `alpha` comes first, 1 otherwise.
pub fn marker_order(n: usize, seed: u64) -> Vec<Example> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|_| {
            let len = 6 + rng.below(19);
            let mut words: Vec<String> = (0..len).map(|_| format!("w{}", rng.below(FILLER))).collect();
            let i = rng.below(len + 1);
            words.insert(i, MARKER_A.into());
            let j = rng.below(len + 2);
            words.insert(j, MARKER_B.into());
            let a = words.iter().position(|w| w == MARKER_A).expect("marker");
            let b = words.iter().position(|w| w == MARKER_B).expect("marker");
            Example {
                label: usize::from(b < a),
                text: words.join(" "),
            }
        })
        .collect()
}

const SUBJECTS: [&str; 8] = ["cat", "dog", "bird", "fish", "horse", "mouse", "goat", "frog"];
const COLORS: [&str; 8] = ["red", "blue", "green", "black", "white", "grey", "brown", "pink"];
const VERBS: [&str; 6] = ["sees", "likes", "chases", "finds", "hears", "meets"];
const PLACES: [&str; 6] = ["park", "house", "river", "field", "barn", "road"];

/// Documents about one animal each: every sentence follows
/// `the <color> <animal> <verb> the <animal> near the <place> .`, with the
/// color bound to the animal, so masked words are predictable from context.
pub fn pretrain_corpus(docs: usize, seed: u64) -> Corpus {
    let mut rng = Rng::new(seed);
    let documents = (0..docs)
        .map(|_| {
            let s = rng.below(SUBJECTS.len());
            let sentences = 2 + rng.below(4);
            (0..sentences)
                .map(|_| {
                    let o = rng.below(SUBJECTS.len());
                    format!(
                        "The {} {} {} the {} {} near the {}.",
                        COLORS[s],
                        SUBJECTS[s],
                        VERBS[rng.below(VERBS.len())],
                        COLORS[o],
                        SUBJECTS[o],
                        PLACES[rng.below(PLACES.len())]
                    )
                })
                .collect()
        })
        .collect();
    Corpus { documents }
}
