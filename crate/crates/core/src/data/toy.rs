//! Seeded synthetic review corpus for smoke tests and learning checks.
//!
//! Sentences come from a handful of templates. Aspect spans are one to
//! three tokens long, end in a head noun and may start with up to two
//! modifiers. Modifiers also occur outside spans, so labelling them needs
//! the right-hand context.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Example, Label};

pub const HEADS: [&str; 12] = [
    "battery", "screen", "keyboard", "price", "service", "food", "staff", "graphics", "design", "speaker",
    "camera", "menu",
];
pub const MODIFIERS: [&str; 8] = ["touch", "sound", "night", "front", "main", "power", "lunch", "wine"];
pub const OPINIONS: [&str; 10] = [
    "great", "awful", "fast", "slow", "amazing", "poor", "nice", "terrible", "excellent", "cheap",
];
pub const FUNCTION: [&str; 15] = [
    "the", "a", "is", "was", "and", "but", "it", "i", "really", "very", "so", "this", "with", "has", "loved",
];
pub const FILLER: [&str; 15] = [
    "phone", "day", "we", "they", "time", "bought", "thing", "also", "just", "think", "ok", "came", "went",
    "here", ".",
];

pub const SENTENCES: usize = 200;
pub const SMALL_SENTENCES: usize = 40;
pub const EMBEDDING_DIM: usize = 16;

/// Every word the generator can emit.
pub fn vocabulary() -> Vec<&'static str> {
    HEADS
        .iter()
        .chain(&MODIFIERS)
        .chain(&OPINIONS)
        .chain(&FUNCTION)
        .chain(&FILLER)
        .copied()
        .collect()
}

struct Builder {
    tokens: Vec<String>,
    labels: Vec<Label>,
}

impl Builder {
    fn words(&mut self, words: &[&str]) {
        for w in words {
            self.tokens.push(w.to_string());
            self.labels.push(Label::O);
        }
    }

    fn span<R: Rng>(&mut self, rng: &mut R) {
        let n_mod = rng.gen_range(0..3);
        let mut mods: Vec<&str> = MODIFIERS.choose_multiple(rng, n_mod).copied().collect();
        mods.push(HEADS.choose(rng).unwrap());
        for (i, w) in mods.iter().enumerate() {
            self.tokens.push(w.to_string());
            self.labels.push(if i == 0 { Label::B } else { Label::I });
        }
    }
}

fn pick<R: Rng>(rng: &mut R, words: &[&'static str]) -> &'static str {
    words.choose(rng).unwrap()
}

fn sentence<R: Rng>(rng: &mut R) -> Example {
    let mut b = Builder {
        tokens: Vec::new(),
        labels: Vec::new(),
    };
    match rng.gen_range(0..6) {
        0 => {
            b.words(&["the"]);
            b.span(rng);
            b.words(&[pick(rng, &["is", "was"])]);
            if rng.gen_bool(0.5) {
                b.words(&[pick(rng, &["really", "very", "so"])]);
            }
            b.words(&[pick(rng, &OPINIONS), "."]);
        }
        1 => {
            b.words(&[pick(rng, &OPINIONS)]);
            b.span(rng);
            b.words(&["and", pick(rng, &OPINIONS)]);
            b.span(rng);
            b.words(&["."]);
        }
        2 => {
            b.words(&["i", "loved", "the"]);
            b.span(rng);
            b.words(&["."]);
        }
        3 => {
            b.words(&["it", "has", "a", pick(rng, &OPINIONS)]);
            b.span(rng);
            b.words(&["but", "the"]);
            b.span(rng);
            b.words(&["is", pick(rng, &OPINIONS), "."]);
        }
        4 => {
            b.words(&["this", "phone", "has", pick(rng, &OPINIONS)]);
            b.span(rng);
            b.words(&["."]);
        }
        _ => {
            // no aspects; modifiers appear without a head noun
            b.words(&[pick(rng, &["we", "they"]), pick(rng, &["came", "went"]), "here"]);
            b.words(&[pick(rng, &MODIFIERS), "time", "and", "it", "was", pick(rng, &["ok", "just"]), "."]);
        }
    }
    Example {
        tokens: b.tokens,
        labels: b.labels,
    }
}

pub fn generate_corpus(n: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sentence(&mut rng)).collect()
}

/// Vectors for every vocabulary word, rendered in the embedding file format
/// with a header. Words of the same category share a random centroid and
/// differ by smaller per-word noise, the way related words cluster in
/// pre-trained embeddings.
pub fn generate_embeddings(dim: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let categories: [&[&str]; 5] = [&HEADS, &MODIFIERS, &OPINIONS, &FUNCTION, &FILLER];
    let mut out = format!("{} {dim}\n", vocabulary().len());
    for words in categories {
        let centroid: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for w in words {
            out.push_str(w);
            for c in &centroid {
                let v = c + WORD_NOISE * rng.gen_range(-1.0f32..1.0);
                out.push_str(&format!(" {v:.6}"));
            }
            out.push('\n');
        }
    }
    out
}

const WORD_NOISE: f32 = 0.5;

pub const CORPUS_SEED: u64 = 2024;
pub const EMBEDDING_SEED: u64 = 17;

#[cfg(test)]
mod tests {
    use std::collections::HashSet;
    use std::path::PathBuf;

    use super::*;
    use crate::data::{parse_corpus, parse_embeddings, render_corpus, LoadMode};
    use crate::metrics::extract_spans;

    fn fixture(name: &str) -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
    }

    #[test]
    fn vocabulary_has_sixty_distinct_words() {
        let v = vocabulary();
        assert_eq!(v.len(), 60);
        assert_eq!(v.iter().collect::<HashSet<_>>().len(), 60);
    }

    #[test]
    fn corpus_is_valid_and_uses_the_vocabulary() {
        let vocab: HashSet<&str> = vocabulary().into_iter().collect();
        let corpus = generate_corpus(SENTENCES, CORPUS_SEED);
        let text = render_corpus(&corpus);
        assert_eq!(parse_corpus(&text, LoadMode::Strict).unwrap().examples, corpus);
        let mut lengths = HashSet::new();
        for ex in &corpus {
            assert!(ex.tokens.iter().all(|t| vocab.contains(t.as_str())));
            for (s, e) in extract_spans(&ex.labels) {
                lengths.insert(e - s + 1);
            }
        }
        assert_eq!(lengths, HashSet::from([1, 2, 3]));
    }

    #[test]
    fn bundled_fixtures_match_the_generator() {
        let corpus = generate_corpus(SENTENCES, CORPUS_SEED);
        if std::env::var_os("REGENERATE_FIXTURES").is_some() {
            std::fs::write(fixture("toy_corpus.tsv"), render_corpus(&corpus)).unwrap();
            std::fs::write(fixture("toy_small.tsv"), render_corpus(&corpus[..SMALL_SENTENCES])).unwrap();
            std::fs::write(fixture("toy_embeddings.txt"), generate_embeddings(EMBEDDING_DIM, EMBEDDING_SEED)).unwrap();
        }
        let on_disk = std::fs::read_to_string(fixture("toy_corpus.tsv")).unwrap();
        assert_eq!(on_disk, render_corpus(&corpus));
        let small = std::fs::read_to_string(fixture("toy_small.tsv")).unwrap();
        assert_eq!(small, render_corpus(&corpus[..SMALL_SENTENCES]));
        let emb = std::fs::read_to_string(fixture("toy_embeddings.txt")).unwrap();
        assert_eq!(emb, generate_embeddings(EMBEDDING_DIM, EMBEDDING_SEED));
        assert_eq!(parse_embeddings(&emb).unwrap().dim(), EMBEDDING_DIM);
    }
}
