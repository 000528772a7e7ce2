//! Synthetic picture-description corpus for tests and offline demos.
//!
//! Transcripts are built from short scene sentences. Two speaking styles are
//! mixed: a fluent one dominated by content nouns and locations, and a
//! disfluent one with fillers, pronouns and few content words. Token vectors
//! come from [`fixture_embed`]: a damped [`synth_embed`] vector whose first
//! coordinate carries the word's style (+1 filler or pronoun, −1 content noun).
//!
//! The label is a planted linear rule on the mean token vector:
//! `AD ⇔ u·mean(E) ≥ θ`, with `u` the normalised difference between the mean
//! vectors of the disfluent and fluent vocabularies and `θ` the midpoint of
//! the two style means. Transcripts whose score falls within `margin` of `θ`
//! are redrawn, so the rule separates the corpus with a margin.

use crate::embedding::{synth_embed, EmbeddedTranscript};
use crate::Class;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureConfig {
    pub transcripts: usize,
    pub dim: usize,
    pub seed: u64,
    /// Sentences per transcript, inclusive range.
    pub sentences: (usize, usize),
    pub margin: f64,
    pub id_prefix: String,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            transcripts: 200,
            dim: 16,
            seed: 7,
            sentences: (3, 6),
            margin: 0.02,
            id_prefix: "syn".into(),
        }
    }
}

const SUBJECTS: &[&str] = &["boy", "girl", "mother", "woman", "kid", "sister"];
const OBJECTS: &[&str] = &["cookie", "cookies", "jar", "dishes", "plate", "towel", "cup", "curtain", "water"];
const PLACES: &[&str] = &["stool", "sink", "floor", "cupboard", "window", "counter", "shelf", "kitchen"];
const VERBS: &[&str] = &["taking", "reaching", "washing", "drying", "falling", "holding", "running", "spilling", "standing"];
const AUX: &[&str] = &["is", "was", "are"];
const PREPS: &[&str] = &["on", "in", "from", "at", "near", "under", "over"];
const FILLERS: &[&str] = &["um", "uh", "er", "well"];
const PRONOUNS: &[&str] = &["she", "he", "it", "they", "something", "that"];
const DETS: &[&str] = &["the", "a"];

fn tag_of(word: &str) -> &'static str {
    if SUBJECTS.contains(&word) || OBJECTS.contains(&word) || PLACES.contains(&word) {
        "NOUN"
    } else if VERBS.contains(&word) {
        "VERB"
    } else if AUX.contains(&word) {
        "AUX"
    } else if PREPS.contains(&word) {
        "ADP"
    } else if FILLERS.contains(&word) {
        "INTJ"
    } else if PRONOUNS.contains(&word) {
        "PRON"
    } else if DETS.contains(&word) {
        "DET"
    } else {
        "X"
    }
}

fn style_of(word: &str) -> f64 {
    if FILLERS.contains(&word) || PRONOUNS.contains(&word) {
        1.0
    } else if SUBJECTS.contains(&word) || OBJECTS.contains(&word) || PLACES.contains(&word) {
        -1.0
    } else {
        0.0
    }
}

/// Fixture token vector; `dim` must be at least 1.
pub fn fixture_embed(word: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut v: Vec<f64> = synth_embed(word, dim, seed).into_iter().map(|x| 0.5 * x).collect();
    if let Some(first) = v.first_mut() {
        *first = style_of(word);
    }
    v
}

fn pick<R: Rng>(rng: &mut R, words: &[&'static str]) -> &'static str {
    words.choose(rng).copied().expect("non-empty word list")
}

/// One sentence in the fluent (`disfluent = false`) or disfluent style.
fn sentence<R: Rng>(rng: &mut R, disfluent: bool) -> Vec<&'static str> {
    let mut out = Vec::new();
    if disfluent {
        for _ in 0..rng.random_range(1..=2) {
            out.push(pick(rng, FILLERS));
        }
        out.push(pick(rng, PRONOUNS));
        out.push(pick(rng, AUX));
        if rng.random_bool(0.5) {
            out.push(pick(rng, FILLERS));
        }
        out.push(pick(rng, VERBS));
        if rng.random_bool(0.5) {
            out.push(pick(rng, PRONOUNS));
        }
        if rng.random_bool(0.3) {
            out.extend([pick(rng, DETS), pick(rng, OBJECTS)]);
        }
    } else {
        out.extend([pick(rng, DETS), pick(rng, SUBJECTS), pick(rng, AUX), pick(rng, VERBS)]);
        out.extend([pick(rng, DETS), pick(rng, OBJECTS)]);
        if rng.random_bool(0.7) {
            out.extend([pick(rng, PREPS), pick(rng, DETS), pick(rng, PLACES)]);
        }
    }
    out
}

fn mean_of(words: &[&str], dim: usize, seed: u64) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    for w in words {
        for (a, v) in m.iter_mut().zip(fixture_embed(w, dim, seed)) {
            *a += v / words.len() as f64;
        }
    }
    m
}

/// Planted direction `u` and threshold `θ` of the labelling rule.
pub fn planted_rule(dim: usize, seed: u64) -> (Vec<f64>, f64) {
    let disfluent: Vec<&str> = FILLERS.iter().chain(PRONOUNS).copied().collect();
    let fluent: Vec<&str> = SUBJECTS.iter().chain(OBJECTS).chain(PLACES).copied().collect();
    let a = mean_of(&disfluent, dim, seed);
    let b = mean_of(&fluent, dim, seed);
    let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let norm = diff.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let u: Vec<f64> = diff.iter().map(|v| v / norm).collect();
    let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x + y) / 2.0).collect();
    let theta = u.iter().zip(&mid).map(|(x, y)| x * y).sum();
    (u, theta)
}

pub fn planted_label(t: &EmbeddedTranscript, rule: &(Vec<f64>, f64)) -> Class {
    if planted_score(t, rule) >= rule.1 {
        Class::Ad
    } else {
        Class::Hc
    }
}

fn planted_score(t: &EmbeddedTranscript, rule: &(Vec<f64>, f64)) -> f64 {
    rule.0.iter().zip(t.mean_vector()).map(|(a, b)| a * b).sum()
}

/// Generate `cfg.transcripts` labelled transcripts, alternating speaking style.
pub fn synthetic_corpus(cfg: &FixtureConfig) -> Vec<EmbeddedTranscript> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rule = planted_rule(cfg.dim, cfg.seed);
    let width = cfg.transcripts.max(1).to_string().len();
    let mut out = Vec::with_capacity(cfg.transcripts);
    let mut attempts = 0usize;

    while out.len() < cfg.transcripts {
        attempts += 1;
        assert!(attempts < cfg.transcripts * 1000 + 1000, "fixture rejection sampling did not converge");
        let idx = out.len();
        // each transcript mixes styles; the mixing weight sets its lean
        let lean = if idx % 2 == 0 { 0.9 } else { 0.0 };
        let n_sent = rng.random_range(cfg.sentences.0..=cfg.sentences.1);
        let sentences: Vec<Vec<&str>> = (0..n_sent)
            .map(|_| {
                let disfluent = rng.random_bool(lean);
                sentence(&mut rng, disfluent)
            })
            .collect();
        let tokens: Vec<String> = sentences.iter().flatten().map(|w| w.to_string()).collect();
        let mut t = EmbeddedTranscript {
            transcript_id: format!("{}{:0width$}", cfg.id_prefix, idx),
            gold_label: None,
            vectors: tokens.iter().map(|w| fixture_embed(w, cfg.dim, cfg.seed)).collect(),
            pos_tags: Some(tokens.iter().map(|w| tag_of(w).to_string()).collect()),
            utterance_lengths: Some(sentences.iter().map(Vec::len).collect()),
            tokens,
        };
        if (planted_score(&t, &rule) - rule.1).abs() < cfg.margin {
            continue;
        }
        t.gold_label = Some(planted_label(&t, &rule));
        out.push(t);
    }
    out
}

/// Deterministic train/eval split: every `eval_every`-th transcript is held out.
pub fn split(corpus: Vec<EmbeddedTranscript>, eval_every: usize) -> (Vec<EmbeddedTranscript>, Vec<EmbeddedTranscript>) {
    let step = eval_every.max(2);
    let (mut train, mut eval) = (Vec::new(), Vec::new());
    for (i, t) in corpus.into_iter().enumerate() {
        if i % step == step - 1 {
            eval.push(t);
        } else {
            train.push(t);
        }
    }
    (train, eval)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic_and_valid() {
        let cfg = FixtureConfig {
            transcripts: 20,
            ..FixtureConfig::default()
        };
        let a = synthetic_corpus(&cfg);
        assert_eq!(a, synthetic_corpus(&cfg));
        assert_eq!(a.len(), 20);
        for t in &a {
            t.validate().unwrap();
            assert_eq!(t.dim(), 16);
            assert_eq!(t.utterance_spans().last().unwrap().end, t.len());
        }
    }

    #[test]
    fn labels_follow_the_planted_rule_and_both_classes_appear() {
        let corpus = synthetic_corpus(&FixtureConfig::default());
        let rule = planted_rule(16, 7);
        assert!(corpus.iter().all(|t| t.gold_label == Some(planted_label(t, &rule))));
        let ad = corpus.iter().filter(|t| t.gold_label == Some(Class::Ad)).count();
        assert!(ad > 60 && ad < 140, "AD count {ad}");
    }

    #[test]
    fn split_holds_out_every_kth() {
        let corpus = synthetic_corpus(&FixtureConfig {
            transcripts: 10,
            ..FixtureConfig::default()
        });
        let (train, eval) = split(corpus, 5);
        assert_eq!(train.len(), 8);
        assert_eq!(eval.len(), 2);
        assert_eq!(eval[0].transcript_id, "syn04");
    }
}
