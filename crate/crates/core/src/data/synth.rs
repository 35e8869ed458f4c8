//! Deterministic synthetic English-like text for self-contained runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SUBJECTS: [&str; 24] = [
    "the farmer", "a young girl", "the old man", "my brother", "the teacher", "a small dog",
    "the captain", "her mother", "the doctor", "a stranger", "the king", "our neighbour",
    "the baker", "a tired student", "the engineer", "his sister", "the painter", "a quiet boy",
    "the soldier", "the merchant", "a little cat", "the writer", "the nurse", "my friend",
];
const VERBS: [&str; 20] = [
    "walked to", "looked at", "found", "carried", "opened", "painted", "visited", "cleaned",
    "forgot", "repaired", "watched", "built", "sold", "bought", "followed", "remembered",
    "closed", "described", "reached", "left",
];
const OBJECTS: [&str; 24] = [
    "the river", "a wooden box", "the garden", "the red door", "an old letter", "the market",
    "the bridge", "a broken chair", "the school", "the long road", "a green bottle", "the forest",
    "the kitchen", "a heavy bag", "the library", "the station", "a silver key", "the hill",
    "the harbour", "a blue coat", "the tower", "the village", "a small boat", "the field",
];
const TAILS: [&str; 16] = [
    "in the morning", "after the rain", "before dinner", "at night", "with great care",
    "without a word", "for the first time", "once again", "near the end of the day",
    "in a hurry", "during the winter", "on a sunny afternoon", "as usual", "at last",
    "with a smile", "in silence",
];
const LINKS: [&str; 6] = ["Then", "Later", "Soon", "After that", "Meanwhile", "Finally"];

fn zipf<'a, R: Rng>(rng: &mut R, words: &[&'a str]) -> &'a str {
    // weights proportional to 1 / (rank + 1)
    let total: f64 = (1..=words.len()).map(|r| 1.0 / r as f64).sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in words.iter().enumerate() {
        let p = 1.0 / (i + 1) as f64;
        if u < p {
            return w;
        }
        u -= p;
    }
    words[words.len() - 1]
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

/// At least `min_bytes` of text made of short stories joined by end-of-text
/// markers. The same seed always gives the same text.
pub fn synthetic_corpus(min_bytes: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::with_capacity(min_bytes + 4096);
    let mut doc = 0u64;
    while out.len() < min_bytes {
        doc += 1;
        let subject = zipf(&mut rng, &SUBJECTS);
        out.push_str(&format!("Story {doc}.\n"));
        let n = rng.random_range(3..9);
        for i in 0..n {
            let s = if i == 0 || rng.random_bool(0.3) {
                subject.to_string()
            } else {
                zipf(&mut rng, &SUBJECTS).to_string()
            };
            let mut sentence = if i == 0 {
                capitalize(&s)
            } else {
                format!("{}, {}", zipf(&mut rng, &LINKS), s)
            };
            sentence.push(' ');
            sentence.push_str(zipf(&mut rng, &VERBS));
            sentence.push(' ');
            sentence.push_str(zipf(&mut rng, &OBJECTS));
            if rng.random_bool(0.6) {
                sentence.push(' ');
                sentence.push_str(zipf(&mut rng, &TAILS));
            }
            sentence.push_str(if rng.random_bool(0.1) { "!" } else { "." });
            out.push_str(&sentence);
            out.push(if i + 1 == n { '\n' } else { ' ' });
        }
        out.push_str("<|endoftext|>");
    }
    out
}
