use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::lexicon::Lexicon;
use super::MetricError;
use crate::corpus::tokenize;

const DEFAULT_STOPWORDS: &str = include_str!("../../data/stopwords.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stopwords(HashSet<String>);

impl Default for Stopwords {
    fn default() -> Self {
        Stopwords::parse(DEFAULT_STOPWORDS)
    }
}

impl Stopwords {
    pub fn parse(list: &str) -> Self {
        Stopwords(
            list.lines()
                .map(|l| l.trim().to_lowercase())
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .collect(),
        )
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }

    /// Tokens that are neither stopwords nor free of letters.
    pub fn content_tokens(&self, text: &str) -> Vec<String> {
        tokenize(text)
            .into_iter()
            .filter(|t| t.chars().any(char::is_alphabetic) && !self.contains(t))
            .collect()
    }
}

fn entropy_bits(p: &[f64]) -> f64 {
    -p.iter().filter(|x| **x > 0.0).map(|x| x * x.log2()).sum::<f64>()
}

/// Jensen-Shannon divergence in bits; both inputs must be distributions of equal length.
pub fn js_divergence(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "distributions differ in support size");
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    let js = entropy_bits(&m) - 0.5 * (entropy_bits(p) + entropy_bits(q));
    js.clamp(0.0, 1.0)
}

/// `[pos, neg, neutral]` token shares with add-one smoothing.
pub fn sentiment_distribution(text: &str, lexicon: &Lexicon) -> Result<[f64; 3], MetricError> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(MetricError::EmptyText);
    }
    let (mut pos, mut neg) = (0usize, 0usize);
    for t in &tokens {
        if lexicon.matches("emo_pos", t) {
            pos += 1;
        } else if lexicon.matches("emo_neg", t) {
            neg += 1;
        }
    }
    let neutral = tokens.len() - pos - neg;
    let total = (tokens.len() + 3) as f64;
    Ok([(pos + 1) as f64 / total, (neg + 1) as f64 / total, (neutral + 1) as f64 / total])
}

/// Share of interaction content types that reappear in the final text; 0 when the interaction has none.
pub fn coverage(interaction_texts: &[&str], final_text: &str, stopwords: &Stopwords) -> f64 {
    let interaction: HashSet<String> = interaction_texts
        .iter()
        .flat_map(|t| stopwords.content_tokens(t))
        .collect();
    if interaction.is_empty() {
        return 0.0;
    }
    let fin: HashSet<String> = stopwords.content_tokens(final_text).into_iter().collect();
    interaction.intersection(&fin).count() as f64 / interaction.len() as f64
}

/// Document frequencies over a reference collection.
#[derive(Debug, Clone)]
pub struct IdfTable {
    docs: usize,
    df: HashMap<String, usize>,
}

impl IdfTable {
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a str>) -> Result<Self, MetricError> {
        let mut df: HashMap<String, usize> = HashMap::new();
        let mut n = 0;
        for doc in docs {
            n += 1;
            let types: HashSet<String> = tokenize(doc).into_iter().collect();
            for t in types {
                *df.entry(t).or_default() += 1;
            }
        }
        if n < 2 {
            return Err(MetricError::TooFewDocuments(n));
        }
        Ok(IdfTable { docs: n, df })
    }

    /// `ln(D / (1 + df)) + 1`.
    pub fn idf(&self, token: &str) -> f64 {
        let df = self.df.get(token).copied().unwrap_or(0);
        (self.docs as f64 / (1 + df) as f64).ln() + 1.0
    }

    pub fn documents(&self) -> usize {
        self.docs
    }
}

/// Mean IDF over the final text's content tokens; 0 when it has none.
pub fn specificity(final_text: &str, idf: &IdfTable, stopwords: &Stopwords) -> f64 {
    let tokens = stopwords.content_tokens(final_text);
    if tokens.is_empty() {
        return 0.0;
    }
    tokens.iter().map(|t| idf.idf(t)).sum::<f64>() / tokens.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeliberationScores {
    pub emotional_shift: f64,
    pub coverage: f64,
    pub specificity: f64,
}

pub fn deliberation_metrics(
    initial_text: &str,
    final_text: &str,
    interaction_texts: &[&str],
    idf: &IdfTable,
    lexicon: &Lexicon,
    stopwords: &Stopwords,
) -> Result<DeliberationScores, MetricError> {
    if tokenize(final_text).is_empty() {
        return Err(MetricError::EmptyText);
    }
    let p = sentiment_distribution(initial_text, lexicon)?;
    let q = sentiment_distribution(final_text, lexicon)?;
    Ok(DeliberationScores {
        emotional_shift: js_divergence(&p, &q),
        coverage: coverage(interaction_texts, final_text, stopwords),
        specificity: specificity(final_text, idf, stopwords),
    })
}
