//! Correctness, agreement, text and deliberation measures over persisted records.

mod deliberation;
mod lexicon;
mod text;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Veracity;
use crate::persona::{Demographic, RoundKind};
use crate::session::Session;

pub use deliberation::{
    coverage, deliberation_metrics, js_divergence, sentiment_distribution, specificity, DeliberationScores, IdfTable,
    Stopwords,
};
pub use lexicon::{lexicon_scores, persuasion_dimensions, CompositeChange, DimensionScores, Lexicon, REQUIRED_CATEGORIES};
pub use text::{ari, fkgl, sentence_count, structural_profile, syllable_count, type_token_ratio, StructuralProfile};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("rate is undefined over zero judgments")]
    UndefinedRate,
    #[error("judgment sets cover different claims; only in initial: {only_initial:?}, only in final: {only_final:?}")]
    ClaimMismatch {
        only_initial: Vec<String>,
        only_final: Vec<String>,
    },
    #[error("verdict lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 paired verdicts, got {0}")]
    TooFewPairs(usize),
    #[error("value {0} is not a ±1 label")]
    NotALabel(i8),
    #[error("text has no tokens")]
    EmptyText,
    #[error("lexicon line {line}: {message}")]
    Lexicon { line: usize, message: String },
    #[error("lexicon lacks category {0:?}")]
    MissingCategory(String),
    #[error("IDF needs at least 2 documents, got {0}")]
    TooFewDocuments(usize),
    #[error("no eligible agent-sessions for {0}")]
    NoEligible(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentEntry {
    pub claim_id: String,
    pub verdict: i8,
    pub truth: i8,
}

/// Scored judgments; unverified claims and unparsed verdicts never enter.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentSet {
    entries: Vec<JudgmentEntry>,
}

impl JudgmentSet {
    pub fn new(entries: Vec<JudgmentEntry>) -> Result<Self, MetricError> {
        if let Some(bad) = entries
            .iter()
            .flat_map(|e| [e.verdict, e.truth])
            .find(|v| *v != 1 && *v != -1)
        {
            return Err(MetricError::NotALabel(bad));
        }
        Ok(JudgmentSet { entries })
    }

    /// Adds a judgment if it is scoreable; returns whether it was kept.
    pub fn push(&mut self, claim_id: &str, verdict: Option<i8>, veracity: Veracity) -> bool {
        match (verdict, veracity.truth()) {
            (Some(v @ (1 | -1)), Some(truth)) => {
                self.entries.push(JudgmentEntry {
                    claim_id: claim_id.to_string(),
                    verdict: v,
                    truth,
                });
                true
            }
            _ => false,
        }
    }

    pub fn entries(&self) -> &[JudgmentEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn claim_multiset(&self) -> BTreeMap<&str, usize> {
        let mut m = BTreeMap::new();
        for e in &self.entries {
            *m.entry(e.claim_id.as_str()).or_default() += 1;
        }
        m
    }
}

/// Fraction of entries whose verdict equals the truth label.
pub fn correctness_rate(set: &JudgmentSet) -> Result<f64, MetricError> {
    if set.is_empty() {
        return Err(MetricError::UndefinedRate);
    }
    let correct = set.entries.iter().filter(|e| e.verdict == e.truth).count();
    Ok(correct as f64 / set.len() as f64)
}

/// `CR_f − CR_i`, defined only when both sets judge the same claim multiset.
pub fn delta_cr(initial: &JudgmentSet, final_set: &JudgmentSet) -> Result<f64, MetricError> {
    let (a, b) = (initial.claim_multiset(), final_set.claim_multiset());
    if a != b {
        let surplus = |x: &BTreeMap<&str, usize>, y: &BTreeMap<&str, usize>| {
            x.iter()
                .flat_map(|(k, n)| std::iter::repeat_n(k.to_string(), n.saturating_sub(*y.get(k).unwrap_or(&0))))
                .collect::<Vec<_>>()
        };
        return Err(MetricError::ClaimMismatch {
            only_initial: surplus(&a, &b),
            only_final: surplus(&b, &a),
        });
    }
    Ok(correctness_rate(final_set)? - correctness_rate(initial)?)
}

/// 2×2 agreement counts with `a` as reference: `tp` both +1, `tn` both −1, `fp` b=+1/a=−1, `fn_` b=−1/a=+1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contingency {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Contingency {
    pub fn from_labels(a: &[i8], b: &[i8]) -> Result<Self, MetricError> {
        if a.len() != b.len() {
            return Err(MetricError::LengthMismatch(a.len(), b.len()));
        }
        let mut c = Contingency::default();
        for (&x, &y) in a.iter().zip(b) {
            for v in [x, y] {
                if v != 1 && v != -1 {
                    return Err(MetricError::NotALabel(v));
                }
            }
            match (x, y) {
                (1, 1) => c.tp += 1,
                (-1, 1) => c.fp += 1,
                (1, -1) => c.fn_ += 1,
                _ => c.tn += 1,
            }
        }
        Ok(c)
    }

    /// `[[tp, fn], [fp, tn]]`, rows indexed by `a`.
    pub fn table(&self) -> [[u64; 2]; 2] {
        [[self.tp, self.fn_], [self.fp, self.tn]]
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mcc {
    pub value: f64,
    /// Some marginal is zero, so the value is fixed at 0.
    pub degenerate: bool,
    pub contingency: Contingency,
}

pub fn mcc_from_contingency(c: Contingency) -> Mcc {
    let (tp, fp, fn_, tn) = (c.tp as f64, c.fp as f64, c.fn_ as f64, c.tn as f64);
    let marginals = [tp + fp, tp + fn_, tn + fp, tn + fn_];
    if marginals.contains(&0.0) {
        return Mcc {
            value: 0.0,
            degenerate: true,
            contingency: c,
        };
    }
    let denom = marginals.iter().product::<f64>().sqrt();
    Mcc {
        value: ((tp * tn - fp * fn_) / denom).clamp(-1.0, 1.0),
        degenerate: false,
        contingency: c,
    }
}

pub fn mcc(a: &[i8], b: &[i8]) -> Result<Mcc, MetricError> {
    let c = Contingency::from_labels(a, b)?;
    if a.len() < 2 {
        return Err(MetricError::TooFewPairs(a.len()));
    }
    Ok(mcc_from_contingency(c))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipRate {
    pub rate: f64,
    pub flips: usize,
    pub eligible: usize,
}

/// Percentage of agents (per demographic) whose Final verdict differs from their Initial one.
/// Demographics with no agent carrying both verdicts are absent from the map.
pub fn stance_flip_rate(sessions: &[Session]) -> BTreeMap<Demographic, FlipRate> {
    let mut counts: BTreeMap<Demographic, (usize, usize)> = BTreeMap::new();
    for agent in sessions.iter().flat_map(|s| &s.agents) {
        if let (Some(i), Some(f)) = (agent.verdict_at(RoundKind::Initial), agent.verdict_at(RoundKind::Final)) {
            let slot = counts.entry(agent.demographic).or_default();
            slot.1 += 1;
            if i != f {
                slot.0 += 1;
            }
        }
    }
    counts
        .into_iter()
        .map(|(d, (flips, eligible))| {
            (
                d,
                FlipRate {
                    rate: 100.0 * flips as f64 / eligible as f64,
                    flips,
                    eligible,
                },
            )
        })
        .collect()
}

pub fn stance_flip_rate_for(sessions: &[Session], demographic: Demographic) -> Result<FlipRate, MetricError> {
    stance_flip_rate(sessions)
        .remove(&demographic)
        .ok_or_else(|| MetricError::NoEligible(demographic.to_string()))
}

/// Initial and Final judgment sets over the agents selected by `keep`.
///
/// An agent enters both sets or neither, so the sets always share a claim
/// multiset. Returns the number of agents excluded for unparsed verdicts or
/// unverified claims.
pub fn stage_sets<'a>(
    sessions: impl IntoIterator<Item = &'a Session>,
    mut keep: impl FnMut(&Session, usize) -> bool,
) -> (JudgmentSet, JudgmentSet, usize) {
    let (mut initial, mut fin) = (JudgmentSet::default(), JudgmentSet::default());
    let mut excluded = 0;
    for s in sessions {
        for (idx, agent) in s.agents.iter().enumerate() {
            if !keep(s, idx) {
                continue;
            }
            let (i, f) = (agent.verdict_at(RoundKind::Initial), agent.verdict_at(RoundKind::Final));
            if i.is_some() && f.is_some() && s.claim.veracity.truth().is_some() {
                initial.push(&s.claim.id, i, s.claim.veracity);
                fin.push(&s.claim.id, f, s.claim.veracity);
            } else {
                excluded += 1;
            }
        }
    }
    (initial, fin, excluded)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(pairs: &[(&str, i8, i8)]) -> JudgmentSet {
        JudgmentSet::new(
            pairs
                .iter()
                .map(|(c, v, t)| JudgmentEntry {
                    claim_id: c.to_string(),
                    verdict: *v,
                    truth: *t,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn correctness_examples() {
        assert_eq!(correctness_rate(&set(&[("a", 1, 1); 5])).unwrap(), 1.0);
        let s = set(&[("a", 1, 1), ("b", -1, 1), ("c", 1, 1)]);
        assert!((correctness_rate(&s).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(correctness_rate(&JudgmentSet::default()), Err(MetricError::UndefinedRate));
    }

    #[test]
    fn unverified_and_unparsed_are_not_scored() {
        let mut s = JudgmentSet::default();
        assert!(!s.push("a", Some(1), Veracity::Unverified));
        assert!(!s.push("a", None, Veracity::TrueInfo));
        assert!(s.push("a", Some(-1), Veracity::Misinformation));
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn delta_cr_examples() {
        let ids: Vec<String> = (0..10).map(|i| format!("c{i}")).collect();
        let mk = |correct: usize| {
            set(&ids
                .iter()
                .enumerate()
                .map(|(i, c)| (c.as_str(), if i < correct { 1 } else { -1 }, 1))
                .collect::<Vec<_>>())
        };
        assert!((delta_cr(&mk(5), &mk(6)).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(delta_cr(&mk(5), &mk(5)).unwrap(), 0.0);
        let err = delta_cr(&set(&[("a", 1, 1)]), &set(&[("b", 1, 1)])).unwrap_err();
        assert_eq!(
            err,
            MetricError::ClaimMismatch {
                only_initial: vec!["a".into()],
                only_final: vec!["b".into()]
            }
        );
    }

    #[test]
    fn mcc_examples() {
        let a = [1, -1, 1, -1];
        assert_eq!(mcc(&a, &a).unwrap().value, 1.0);
        // tp=3 fp=1 fn=2 tn=4
        let a = [1, 1, 1, -1, 1, 1, -1, -1, -1, -1];
        let b = [1, 1, 1, 1, -1, -1, -1, -1, -1, -1];
        let m = mcc(&a, &b).unwrap();
        assert_eq!(
            m.contingency,
            Contingency {
                tp: 3,
                fp: 1,
                fn_: 2,
                tn: 4
            }
        );
        assert!((m.value - 10.0 / 600f64.sqrt()).abs() < 1e-12);
        let constant = mcc(&[1, 1, 1], &[1, -1, 1]).unwrap();
        assert_eq!((constant.value, constant.degenerate), (0.0, true));
        assert!(matches!(mcc(&[1], &[1, 1]), Err(MetricError::LengthMismatch(1, 2))));
    }
}
