//! Claim corpora: raw dataset adapters, the canonical JSONL schema, stance
//! filtering and seeded sampling.
//!
//! Three raw layouts are understood:
//!
//! * `FN`: CSV with a `headline,label` header; label is `Real` or `Fake`.
//! * `RE`: a JSON array of threads, each `{id, event, source, veracity, replies: [{text, label}]}`
//!   where reply labels are `0` support, `1` deny, `2` query, `3` comment.
//! * `SS`: TSV with a `claim_id	claim	reply	label` header; labels `agree`/`disagree`
//!   (aliases `supporting`/`refuting`) map to stances, `query`/`discuss`/`irrelevant` are dropped.
//!
//! Every layout normalises to [`Claim`] plus a list of [`Stance`]s.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("record {record}: {message}")]
    Malformed { record: usize, message: String },
    #[error("record {record}: unknown label value {value:?}")]
    UnknownLabel { record: usize, value: String },
    #[error("requested {requested} pairs but only {available} are available (short by {})", requested - available)]
    Shortfall { requested: usize, available: usize },
    #[error("mean of {0} is undefined over an empty set")]
    UndefinedMean(&'static str),
    #[error("stance references unknown claim {0:?}")]
    UnknownClaim(String),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Veracity {
    #[serde(rename = "true")]
    TrueInfo,
    #[serde(rename = "false")]
    Misinformation,
    #[serde(rename = "unverified")]
    Unverified,
}

impl Veracity {
    /// Ground truth as a `±1` label; `None` for unverified claims.
    pub fn truth(self) -> Option<i8> {
        match self {
            Veracity::TrueInfo => Some(1),
            Veracity::Misinformation => Some(-1),
            Veracity::Unverified => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dataset {
    FN,
    RE,
    SS,
}

impl FromStr for Dataset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "FN" => Ok(Dataset::FN),
            "RE" => Ok(Dataset::RE),
            "SS" => Ok(Dataset::SS),
            other => Err(format!("unknown dataset format {other:?} (expected FN, RE or SS)")),
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dataset::FN => "FN",
            Dataset::RE => "RE",
            Dataset::SS => "SS",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub id: String,
    pub text: String,
    pub veracity: Veracity,
    pub dataset: Dataset,
    #[serde(rename = "event", default, skip_serializing_if = "Option::is_none")]
    pub event_or_topic: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Support,
    Refute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Human,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stance {
    pub claim_id: String,
    pub text: String,
    pub polarity: Polarity,
    pub origin: Origin,
}

/// One supporting and one refuting stance for the same claim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersuasionPair {
    pub claim_id: String,
    pub supporting: Stance,
    pub refuting: Stance,
}

impl PersuasionPair {
    /// Returns `None` unless the polarities and claim ids line up.
    pub fn new(supporting: Stance, refuting: Stance) -> Option<Self> {
        let ok = supporting.polarity == Polarity::Support
            && refuting.polarity == Polarity::Refute
            && supporting.claim_id == refuting.claim_id;
        ok.then(|| PersuasionPair {
            claim_id: supporting.claim_id.clone(),
            supporting,
            refuting,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenStats {
    pub mean_tokens_claim: f64,
    pub mean_tokens_support: f64,
    pub mean_tokens_refute: f64,
}

pub type ClaimWithStances = (Claim, Vec<Stance>);

fn is_separator(c: char) -> bool {
    c.is_whitespace()
        || matches!(
            c,
            '-' | '\u{2010}' | '\u{2011}' | '\u{2012}' | '\u{2013}' | '\u{2014}' | '\u{2015}' | '\u{2212}'
        )
}

/// Whitespace/hyphen split, edge punctuation stripped, lowercased.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(is_separator)
        .map(|raw| raw.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn word_count(text: &str) -> usize {
    tokenize(text).len()
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn non_empty(record: usize, field: &str, value: &str) -> Result<String> {
    let trimmed = value.trim();
    if trimmed.is_empty() {
        return Err(CorpusError::Malformed {
            record,
            message: format!("empty {field}"),
        });
    }
    Ok(trimmed.to_string())
}

/// Parses a raw dataset file into claims and their stances.
pub fn parse_claims(path: &Path, format: Dataset) -> Result<Vec<ClaimWithStances>> {
    let data = read_to_string(path)?;
    parse_claims_str(&data, format)
}

pub fn parse_claims_str(data: &str, format: Dataset) -> Result<Vec<ClaimWithStances>> {
    match format {
        Dataset::FN => parse_fn(data),
        Dataset::RE => parse_re(data),
        Dataset::SS => parse_ss(data),
    }
}

fn parse_fn(data: &str) -> Result<Vec<ClaimWithStances>> {
    if data.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(data.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| CorpusError::Malformed {
            record: 0,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
            .ok_or_else(|| CorpusError::Malformed {
                record: 0,
                message: format!("missing column {name:?}"),
            })
    };
    let (text_col, label_col) = (col("headline")?, col("label")?);
    let mut out = Vec::new();
    for (idx, row) in reader.records().enumerate() {
        let record = idx + 1;
        let row = row.map_err(|e| CorpusError::Malformed {
            record,
            message: e.to_string(),
        })?;
        let field = |i: usize| {
            row.get(i).ok_or_else(|| CorpusError::Malformed {
                record,
                message: format!("missing field {i}"),
            })
        };
        let text = non_empty(record, "headline", field(text_col)?)?;
        let label = field(label_col)?.trim();
        let veracity = match label.to_ascii_lowercase().as_str() {
            "real" | "true" => Veracity::TrueInfo,
            "fake" | "false" => Veracity::Misinformation,
            _ => {
                return Err(CorpusError::UnknownLabel {
                    record,
                    value: label.to_string(),
                })
            }
        };
        out.push((
            Claim {
                id: format!("fn-{record}"),
                text,
                veracity,
                dataset: Dataset::FN,
                event_or_topic: None,
            },
            Vec::new(),
        ));
    }
    Ok(out)
}

#[derive(Deserialize)]
struct ReThread {
    id: serde_json::Value,
    #[serde(default)]
    event: Option<String>,
    source: String,
    veracity: String,
    #[serde(default)]
    replies: Vec<ReReply>,
}

#[derive(Deserialize)]
struct ReReply {
    text: String,
    label: serde_json::Value,
}

fn parse_re(data: &str) -> Result<Vec<ClaimWithStances>> {
    if data.trim().is_empty() {
        return Ok(Vec::new());
    }
    let threads: Vec<serde_json::Value> =
        serde_json::from_str(data).map_err(|e| CorpusError::Malformed {
            record: 0,
            message: format!("expected a JSON array of threads: {e}"),
        })?;
    let mut out = Vec::with_capacity(threads.len());
    for (idx, value) in threads.into_iter().enumerate() {
        let record = idx + 1;
        let thread: ReThread =
            serde_json::from_value(value).map_err(|e| CorpusError::Malformed {
                record,
                message: e.to_string(),
            })?;
        let id = match &thread.id {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Number(n) => n.to_string(),
            other => {
                return Err(CorpusError::Malformed {
                    record,
                    message: format!("thread id must be a string or number, got {other}"),
                })
            }
        };
        let veracity = match thread.veracity.trim().to_ascii_lowercase().as_str() {
            "true" => Veracity::TrueInfo,
            "false" => Veracity::Misinformation,
            "unverified" => Veracity::Unverified,
            _ => {
                return Err(CorpusError::UnknownLabel {
                    record,
                    value: thread.veracity,
                })
            }
        };
        let mut stances = Vec::new();
        for reply in thread.replies {
            let label = match &reply.label {
                serde_json::Value::Number(n) => n.to_string(),
                serde_json::Value::String(s) => s.trim().to_ascii_lowercase(),
                other => other.to_string(),
            };
            let polarity = match label.as_str() {
                "0" | "support" => Some(Polarity::Support),
                "1" | "deny" => Some(Polarity::Refute),
                "2" | "3" | "query" | "comment" => None,
                _ => return Err(CorpusError::UnknownLabel { record, value: label }),
            };
            if let Some(polarity) = polarity {
                stances.push(Stance {
                    claim_id: id.clone(),
                    text: non_empty(record, "reply text", &reply.text)?,
                    polarity,
                    origin: Origin::Human,
                });
            }
        }
        out.push((
            Claim {
                id,
                text: non_empty(record, "source text", &thread.source)?,
                veracity,
                dataset: Dataset::RE,
                event_or_topic: thread.event,
            },
            stances,
        ));
    }
    Ok(out)
}

fn parse_ss(data: &str) -> Result<Vec<ClaimWithStances>> {
    if data.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .has_headers(true)
        .from_reader(data.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| CorpusError::Malformed {
            record: 0,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
            .ok_or_else(|| CorpusError::Malformed {
                record: 0,
                message: format!("missing column {name:?}"),
            })
    };
    let (id_col, claim_col, reply_col, label_col) =
        (col("claim_id")?, col("claim")?, col("reply")?, col("label")?);

    // Rows are (claim, reply); group them back into one claim per id, first-seen order.
    let mut order: Vec<String> = Vec::new();
    let mut grouped: BTreeMap<String, ClaimWithStances> = BTreeMap::new();
    for (idx, row) in reader.records().enumerate() {
        let record = idx + 1;
        let row = row.map_err(|e| CorpusError::Malformed {
            record,
            message: e.to_string(),
        })?;
        let field = |i: usize| {
            row.get(i).ok_or_else(|| CorpusError::Malformed {
                record,
                message: format!("missing field {i}"),
            })
        };
        let id = non_empty(record, "claim_id", field(id_col)?)?;
        let text = non_empty(record, "claim", field(claim_col)?)?;
        let label = field(label_col)?.trim().to_ascii_lowercase();
        let polarity = match label.as_str() {
            "agree" | "supporting" | "support" => Some(Polarity::Support),
            "disagree" | "refuting" | "refute" => Some(Polarity::Refute),
            "query" | "querying" | "discuss" | "discussing" | "irrelevant" => None,
            _ => return Err(CorpusError::UnknownLabel { record, value: label }),
        };
        let entry = grouped.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            (
                Claim {
                    id: id.clone(),
                    text: text.clone(),
                    veracity: Veracity::Misinformation,
                    dataset: Dataset::SS,
                    event_or_topic: None,
                },
                Vec::new(),
            )
        });
        if entry.0.text != text {
            return Err(CorpusError::Malformed {
                record,
                message: format!("claim {id:?} appears with differing text"),
            });
        }
        if let Some(polarity) = polarity {
            entry.1.push(Stance {
                claim_id: id,
                text: non_empty(record, "reply", field(reply_col)?)?,
                polarity,
                origin: Origin::Human,
            });
        }
    }
    Ok(order
        .into_iter()
        .filter_map(|id| grouped.remove(&id))
        .collect())
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            record: idx + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, &item).expect("corpus types serialize");
        buf.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(&buf).map_err(io_err)
}

/// Reads a canonical claim file.
pub fn read_claims(path: &Path) -> Result<Vec<Claim>> {
    let claims: Vec<Claim> = read_jsonl(path)?;
    for (idx, claim) in claims.iter().enumerate() {
        non_empty(idx + 1, "claim text", &claim.text)?;
    }
    Ok(claims)
}

pub fn read_stances(path: &Path) -> Result<Vec<Stance>> {
    read_jsonl(path)
}

pub fn write_claims(path: &Path, claims: &[Claim]) -> Result<()> {
    write_jsonl(path, claims)
}

pub fn write_stances(path: &Path, stances: &[Stance]) -> Result<()> {
    write_jsonl(path, stances)
}

/// Writes the claim and stance halves of a parsed corpus to two canonical files.
pub fn write_canonical(
    claims_path: &Path,
    stances_path: &Path,
    corpus: &[ClaimWithStances],
) -> Result<()> {
    write_jsonl(claims_path, corpus.iter().map(|(c, _)| c))?;
    write_jsonl(stances_path, corpus.iter().flat_map(|(_, s)| s.iter()))
}

/// Joins canonical claims with their stances, preserving claim file order.
pub fn load_canonical(claims_path: &Path, stances_path: Option<&Path>) -> Result<Vec<ClaimWithStances>> {
    let claims = read_claims(claims_path)?;
    let stances = match stances_path {
        Some(p) => read_stances(p)?,
        None => Vec::new(),
    };
    join_stances(claims, stances)
}

pub fn join_stances(claims: Vec<Claim>, stances: Vec<Stance>) -> Result<Vec<ClaimWithStances>> {
    let index: BTreeMap<&str, usize> = claims
        .iter()
        .enumerate()
        .map(|(i, c)| (c.id.as_str(), i))
        .collect();
    let mut buckets: Vec<Vec<Stance>> = vec![Vec::new(); claims.len()];
    for stance in stances {
        let i = *index
            .get(stance.claim_id.as_str())
            .ok_or_else(|| CorpusError::UnknownClaim(stance.claim_id.clone()))?;
        buckets[i].push(stance);
    }
    Ok(claims.into_iter().zip(buckets).collect())
}

/// Drops stances shorter than `min_words`, then drops claims lacking either polarity.
/// Idempotent.
pub fn filter_stances(corpus: &[ClaimWithStances], min_words: usize) -> Vec<ClaimWithStances> {
    corpus
        .iter()
        .filter_map(|(claim, stances)| {
            let kept: Vec<Stance> = stances
                .iter()
                .filter(|s| word_count(&s.text) >= min_words)
                .cloned()
                .collect();
            let has = |p| kept.iter().any(|s: &Stance| s.polarity == p);
            (has(Polarity::Support) && has(Polarity::Refute)).then(|| (claim.clone(), kept))
        })
        .collect()
}

/// Every Support×Refute combination for one claim, support-major order.
pub fn cross_pairs(stances: &[Stance]) -> Vec<PersuasionPair> {
    let supports = stances.iter().filter(|s| s.polarity == Polarity::Support);
    supports
        .flat_map(|s| {
            stances
                .iter()
                .filter(|r| r.polarity == Polarity::Refute)
                .filter_map(move |r| PersuasionPair::new(s.clone(), r.clone()))
        })
        .collect()
}

/// Filters by word count and expands each surviving claim into its candidate pairs.
pub fn filter_stance_pairs(
    corpus: &[ClaimWithStances],
    min_words: usize,
) -> Vec<(Claim, Vec<PersuasionPair>)> {
    filter_stances(corpus, min_words)
        .into_iter()
        .map(|(claim, stances)| {
            let pairs = cross_pairs(&stances);
            (claim, pairs)
        })
        .collect()
}

/// Seeded sampling without replacement over pairs.
///
/// Each pair carries one supporting and one refuting stance, so the output's
/// support and refute usage counts are always equal.
pub fn sample_balanced(
    pairs: &[PersuasionPair],
    n: usize,
    seed: u64,
) -> Result<Vec<PersuasionPair>> {
    if n > pairs.len() {
        return Err(CorpusError::Shortfall {
            requested: n,
            available: pairs.len(),
        });
    }
    let mut idx: Vec<usize> = (0..pairs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    idx.truncate(n);
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| pairs[i].clone()).collect())
}

fn mean_tokens<'a>(field: &'static str, texts: impl Iterator<Item = &'a str>) -> Result<f64> {
    let (mut total, mut count) = (0usize, 0usize);
    for text in texts {
        total += word_count(text);
        count += 1;
    }
    if count == 0 {
        return Err(CorpusError::UndefinedMean(field));
    }
    Ok(total as f64 / count as f64)
}

pub fn token_stats(claims: &[Claim], stances: &[Stance]) -> Result<TokenStats> {
    let by = |p: Polarity| {
        stances
            .iter()
            .filter(move |s| s.polarity == p)
            .map(|s| s.text.as_str())
    };
    Ok(TokenStats {
        mean_tokens_claim: mean_tokens("claim tokens", claims.iter().map(|c| c.text.as_str()))?,
        mean_tokens_support: mean_tokens("supporting-stance tokens", by(Polarity::Support))?,
        mean_tokens_refute: mean_tokens("refuting-stance tokens", by(Polarity::Refute))?,
    })
}

/// Distinct claim ids, for quick membership checks.
pub fn claim_ids(corpus: &[ClaimWithStances]) -> HashSet<&str> {
    corpus.iter().map(|(c, _)| c.id.as_str()).collect()
}
