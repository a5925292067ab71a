//! Category word lists and per-100-token rates.
//!
//! File format: `[category]` header lines, then one lowercase pattern per
//! line. A trailing `*` matches any token beginning with the stem. Lines
//! starting with `#` are comments.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::corpus::tokenize;

const DEFAULT_LEXICON: &str = include_str!("../../data/lexicon.txt");

/// Categories every dimension formula reads.
pub const REQUIRED_CATEGORIES: [&str; 16] = [
    "affect", "emo_pos", "emo_neg", "emo_anx", "emo_anger", "certainty", "tentative", "insight", "cause", "discrep",
    "social", "family", "cogproc", "we", "they", "impulse",
];

#[derive(Debug, Clone, PartialEq, Eq)]
enum Pattern {
    Exact(String),
    Stem(String),
}

impl Pattern {
    fn matches(&self, token: &str) -> bool {
        match self {
            Pattern::Exact(w) => token == w,
            Pattern::Stem(s) => token.starts_with(s.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    categories: BTreeMap<String, Vec<Pattern>>,
}

impl Default for Lexicon {
    fn default() -> Self {
        Lexicon::parse(DEFAULT_LEXICON).expect("bundled lexicon")
    }
}

impl Lexicon {
    pub fn parse(src: &str) -> Result<Self, MetricError> {
        let bad = |line: usize, message: String| MetricError::Lexicon { line, message };
        let mut categories: BTreeMap<String, Vec<Pattern>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (i, raw) in src.lines().enumerate() {
            let line = raw.trim();
            let n = i + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if name.is_empty() {
                    return Err(bad(n, "empty category name".into()));
                }
                if categories.contains_key(name) {
                    return Err(bad(n, format!("category {name:?} declared twice")));
                }
                categories.insert(name.to_string(), Vec::new());
                current = Some(name.to_string());
                continue;
            }
            let cat = current
                .as_ref()
                .ok_or_else(|| bad(n, "pattern before any [category] header".into()))?;
            if line.chars().any(|c| c.is_uppercase()) {
                return Err(bad(n, format!("pattern {line:?} is not lowercase")));
            }
            if line.chars().any(char::is_whitespace) {
                return Err(bad(n, format!("pattern {line:?} contains whitespace")));
            }
            let pattern = match line.strip_suffix('*') {
                Some(stem) if stem.is_empty() => return Err(bad(n, "bare wildcard".into())),
                Some(stem) if stem.contains('*') => return Err(bad(n, format!("non-terminal wildcard in {line:?}"))),
                Some(stem) => Pattern::Stem(stem.to_string()),
                None if line.contains('*') => return Err(bad(n, format!("non-terminal wildcard in {line:?}"))),
                None => Pattern::Exact(line.to_string()),
            };
            categories.get_mut(cat).expect("inserted at header").push(pattern);
        }
        Ok(Lexicon { categories })
    }

    pub fn load(path: &Path) -> Result<Self, MetricError> {
        let text = std::fs::read_to_string(path).map_err(|e| MetricError::Lexicon {
            line: 0,
            message: format!("{}: {e}", path.display()),
        })?;
        Lexicon::parse(&text)
    }

    /// Parse-level validity plus presence of every category the dimension formulas use.
    pub fn validate_for_dimensions(&self) -> Result<(), MetricError> {
        match REQUIRED_CATEGORIES.iter().find(|c| !self.categories.contains_key(**c)) {
            Some(c) => Err(MetricError::MissingCategory(c.to_string())),
            None => Ok(()),
        }
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.categories.keys().map(String::as_str)
    }

    pub fn pattern_count(&self, category: &str) -> usize {
        self.categories.get(category).map_or(0, Vec::len)
    }

    pub fn matches(&self, category: &str, token: &str) -> bool {
        self.categories
            .get(category)
            .is_some_and(|ps| ps.iter().any(|p| p.matches(token)))
    }

    /// Per-100-token rate for each category; a token counts at most once per category.
    pub fn rates_for_tokens(&self, tokens: &[String]) -> Result<BTreeMap<String, f64>, MetricError> {
        if tokens.is_empty() {
            return Err(MetricError::EmptyText);
        }
        Ok(self
            .categories
            .keys()
            .map(|cat| {
                let hits = tokens.iter().filter(|t| self.matches(cat, t)).count();
                (cat.clone(), 100.0 * hits as f64 / tokens.len() as f64)
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionScores {
    pub categories: BTreeMap<String, f64>,
    pub emotional_appeal: f64,
    pub credibility: f64,
    pub logical_structure: f64,
    pub social: f64,
    pub cognitive_complexity: f64,
    pub confidence_shift: f64,
    pub emotional_influence: f64,
    pub cognitive_engagement: f64,
    pub behavioral_readiness: f64,
    pub echo_chamber: f64,
}

impl DimensionScores {
    pub const DIMENSIONS: [&'static str; 5] =
        ["emotional_appeal", "credibility", "logical_structure", "social", "cognitive_complexity"];
    pub const COMPOSITES: [&'static str; 5] = [
        "confidence_shift",
        "emotional_influence",
        "cognitive_engagement",
        "behavioral_readiness",
        "echo_chamber",
    ];

    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "emotional_appeal" => self.emotional_appeal,
            "credibility" => self.credibility,
            "logical_structure" => self.logical_structure,
            "social" => self.social,
            "cognitive_complexity" => self.cognitive_complexity,
            "confidence_shift" => self.confidence_shift,
            "emotional_influence" => self.emotional_influence,
            "cognitive_engagement" => self.cognitive_engagement,
            "behavioral_readiness" => self.behavioral_readiness,
            "echo_chamber" => self.echo_chamber,
            other => return self.categories.get(other).copied(),
        })
    }
}

/// Category rates plus the five dimensions (mean of their member-category rates) and the five composites.
pub fn lexicon_scores(text: &str, lexicon: &Lexicon) -> Result<DimensionScores, MetricError> {
    lexicon.validate_for_dimensions()?;
    let categories = lexicon.rates_for_tokens(&tokenize(text))?;
    let r = |c: &str| categories[c];
    let mean = |cs: &[&str]| cs.iter().map(|c| r(c)).sum::<f64>() / cs.len() as f64;
    Ok(DimensionScores {
        emotional_appeal: mean(&["affect", "emo_pos", "emo_neg", "emo_anx", "emo_anger"]),
        credibility: mean(&["certainty", "tentative", "insight", "cause"]),
        logical_structure: mean(&["cause", "insight", "discrep"]),
        social: mean(&["social", "family"]),
        cognitive_complexity: mean(&["cogproc", "insight", "discrep"]),
        confidence_shift: r("certainty") - r("tentative"),
        emotional_influence: r("emo_pos") - (r("emo_neg") + r("emo_anx")),
        cognitive_engagement: r("insight") + r("cause") + r("discrep"),
        behavioral_readiness: r("we") + r("impulse"),
        echo_chamber: r("they") - r("we"),
        categories,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeChange {
    pub initial: f64,
    pub final_value: f64,
    pub delta: f64,
}

/// The five composites on each text, with final−initial deltas.
pub fn persuasion_dimensions(
    initial_text: &str,
    final_text: &str,
    lexicon: &Lexicon,
) -> Result<BTreeMap<&'static str, CompositeChange>, MetricError> {
    let a = lexicon_scores(initial_text, lexicon)?;
    let b = lexicon_scores(final_text, lexicon)?;
    Ok(DimensionScores::COMPOSITES
        .iter()
        .map(|name| {
            let (i, f) = (a.get(name).expect("composite"), b.get(name).expect("composite"));
            (
                *name,
                CompositeChange {
                    initial: i,
                    final_value: f,
                    delta: f - i,
                },
            )
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_lexicon_is_complete() {
        let lex = Lexicon::default();
        lex.validate_for_dimensions().unwrap();
        assert!(lex.pattern_count("certainty") > 5);
    }

    #[test]
    fn two_hits_in_fifty_tokens() {
        let lex = Lexicon::parse("[x]\nfoo\nba*\n").unwrap();
        let mut words = vec!["zzz"; 48];
        words.push("foo");
        words.push("banana");
        let tokens: Vec<String> = words.iter().map(|s| s.to_string()).collect();
        assert_eq!(lex.rates_for_tokens(&tokens).unwrap()["x"], 4.0);
    }

    #[test]
    fn token_counts_once_per_category() {
        let lex = Lexicon::parse("[x]\nhap*\nhappy\n").unwrap();
        let tokens = vec!["happy".to_string(), "sad".to_string()];
        assert_eq!(lex.rates_for_tokens(&tokens).unwrap()["x"], 50.0);
    }

    #[test]
    fn malformed_lexicons() {
        assert!(Lexicon::parse("foo\n").is_err());
        assert!(Lexicon::parse("[x]\nFoo\n").is_err());
        assert!(Lexicon::parse("[x]\nf*o\n").is_err());
        assert!(Lexicon::parse("[x]\n*\n").is_err());
        assert!(Lexicon::parse("[x]\n[x]\n").is_err());
        assert!(matches!(
            Lexicon::parse("[x]\nfoo\n").unwrap().validate_for_dimensions(),
            Err(MetricError::MissingCategory(_))
        ));
    }

    #[test]
    fn identical_texts_have_zero_deltas() {
        let lex = Lexicon::default();
        let t = "We must act now because they might never listen.";
        for change in persuasion_dimensions(t, t, &lex).unwrap().values() {
            assert_eq!(change.delta, 0.0);
        }
    }

    #[test]
    fn composites_follow_their_formulas() {
        let lex = Lexicon::default();
        let s = lexicon_scores("We always think they might hurt us because maybe fear", &lex).unwrap();
        let c = &s.categories;
        assert_eq!(s.confidence_shift, c["certainty"] - c["tentative"]);
        assert_eq!(s.echo_chamber, c["they"] - c["we"]);
        assert_eq!(s.cognitive_engagement, c["insight"] + c["cause"] + c["discrep"]);
    }
}
