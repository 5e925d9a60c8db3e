//! Seeded toy learner corpus: grammatical sentences with injected article
//! and subject-verb agreement errors.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use crate::gecmetrics::{extract_system_edits, M2Sentence};
use crate::SeededRng;

const SINGULAR: &[&str] = &["the cat", "a dog", "he", "she", "my friend", "the teacher", "this girl"];
const PLURAL: &[&str] = &["the cats", "they", "we", "my parents", "the students"];
// (singular form, plural form)
const VERBS: &[(&str, &str)] = &[
    ("eats", "eat"),
    ("likes", "like"),
    ("sees", "see"),
    ("wants", "want"),
    ("reads", "read"),
    ("finds", "find"),
];
const OBJECTS: &[&str] = &["an apple", "a book", "the ball", "an egg", "a letter", "the car"];
const TAILS: &[&str] = &["", "every day", "today", "at school", "in the park"];

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn is_article(w: &str) -> bool {
    matches!(w, "a" | "an" | "the")
}

/// `n` (erroneous source, correction) pairs. Every source differs from its
/// correction.
pub fn synthetic_pairs(n: usize, seed: u64) -> Vec<(Vec<String>, Vec<String>)> {
    let mut rng = SeededRng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let plural = rng.gen_bool(0.4);
            let subject = if plural { PLURAL } else { SINGULAR }.choose(&mut rng).unwrap();
            let &(sg, pl) = VERBS.choose(&mut rng).unwrap();
            let (verb, wrong_verb) = if plural { (pl, sg) } else { (sg, pl) };
            let object = OBJECTS.choose(&mut rng).unwrap();
            let tail = TAILS.choose(&mut rng).unwrap();
            let target = words(&format!("{subject} {verb} {object} {tail} ."));

            let mut source = target.clone();
            let verb_at = words(subject).len();
            let obj_at = verb_at + 1;
            match rng.gen_range(0..3) {
                0 => source[verb_at] = wrong_verb.to_string(),
                1 => {
                    source.remove(obj_at);
                }
                _ => {
                    let swapped = match source[obj_at].as_str() {
                        "a" => "an",
                        "an" => "a",
                        _ => "a",
                    };
                    source[obj_at] = swapped.to_string();
                }
            }
            // occasionally a second, independent error
            if rng.gen_bool(0.25) && source[verb_at] == verb {
                source[verb_at] = wrong_verb.to_string();
            }
            debug_assert!(source != target && is_article(&target[obj_at]));
            (source, target)
        })
        .collect()
}

/// Gold annotations (a single annotator) derived from the corrections.
pub fn synthetic_gold(pairs: &[(Vec<String>, Vec<String>)]) -> Vec<M2Sentence> {
    pairs
        .iter()
        .map(|(s, t)| {
            let mut m = M2Sentence::new(s.clone());
            m.annotators.insert(0, extract_system_edits(s, t));
            m
        })
        .collect()
}
