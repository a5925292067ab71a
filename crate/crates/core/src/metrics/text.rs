use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::corpus::tokenize;

/// Surface statistics of one text.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructuralProfile {
    pub characters: usize,
    pub words: usize,
    pub sentences: usize,
    pub syllables: usize,
    /// Token count; equals `words` for a single text.
    pub avg_length: f64,
    pub ttr: f64,
    pub ari: f64,
    pub fkgl: f64,
}

/// Runs of `.`, `!` or `?`, at least one.
pub fn sentence_count(text: &str) -> usize {
    let mut runs = 0;
    let mut in_run = false;
    for c in text.chars() {
        let term = matches!(c, '.' | '!' | '?');
        if term && !in_run {
            runs += 1;
        }
        in_run = term;
    }
    runs.max(1)
}

/// Vowel groups (`y` counts as a vowel) minus a silent final `e`, at least one.
pub fn syllable_count(word: &str) -> usize {
    let letters: Vec<char> = word
        .chars()
        .filter(|c| c.is_alphabetic())
        .flat_map(char::to_lowercase)
        .collect();
    let vowel = |c: char| matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y');
    let mut groups = 0;
    let mut prev = false;
    for &c in &letters {
        let v = vowel(c);
        if v && !prev {
            groups += 1;
        }
        prev = v;
    }
    let n = letters.len();
    // "make" drops its final e, "table" keeps it.
    if groups > 1 && n >= 2 && letters[n - 1] == 'e' && !vowel(letters[n - 2]) {
        let consonant_le = letters[n - 2] == 'l' && n >= 3 && !vowel(letters[n - 3]);
        if !consonant_le {
            groups -= 1;
        }
    }
    groups.max(1)
}

pub fn type_token_ratio(tokens: &[String]) -> Option<f64> {
    if tokens.is_empty() {
        return None;
    }
    let unique: HashSet<&str> = tokens.iter().map(String::as_str).collect();
    Some(unique.len() as f64 / tokens.len() as f64)
}

/// `4.71·c/w + 0.5·w/s − 21.43`.
pub fn ari(characters: usize, words: usize, sentences: usize) -> f64 {
    4.71 * characters as f64 / words as f64 + 0.5 * words as f64 / sentences as f64 - 21.43
}

/// `0.39·w/s + 11.8·syl/w − 15.59`.
pub fn fkgl(words: usize, sentences: usize, syllables: usize) -> f64 {
    0.39 * words as f64 / sentences as f64 + 11.8 * syllables as f64 / words as f64 - 15.59
}

pub fn structural_profile(text: &str) -> Result<StructuralProfile, MetricError> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(MetricError::EmptyText);
    }
    let characters = text.chars().filter(|c| c.is_alphanumeric()).count();
    let words = tokens.len();
    let sentences = sentence_count(text);
    let syllables = tokens.iter().map(|t| syllable_count(t)).sum();
    Ok(StructuralProfile {
        characters,
        words,
        sentences,
        syllables,
        avg_length: words as f64,
        ttr: type_token_ratio(&tokens).expect("non-empty"),
        ari: ari(characters, words, sentences),
        fkgl: fkgl(words, sentences, syllables),
    })
}
