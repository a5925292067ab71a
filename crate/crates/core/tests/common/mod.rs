#![allow(dead_code)]

pub mod stub;

use std::path::{Path, PathBuf};

use pandora_core::corpus::{self, Claim, Dataset, Origin, Polarity, Stance, Veracity};
use pandora_core::plan::ExperimentPlan;

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub fn words(tag: &str, n: usize) -> String {
    let mut v = vec![tag; n].join(" ");
    v.push('.');
    v
}

pub struct ClaimSpec {
    pub id: String,
    pub veracity: Veracity,
    pub support_words: usize,
    pub refute_words: usize,
}

impl ClaimSpec {
    pub fn new(id: impl Into<String>, veracity: Veracity, support_words: usize, refute_words: usize) -> Self {
        ClaimSpec {
            id: id.into(),
            veracity,
            support_words,
            refute_words,
        }
    }
}

/// Writes canonical claim and stance files; returns their paths.
pub fn write_corpus(dir: &Path, specs: &[ClaimSpec]) -> (PathBuf, PathBuf) {
    let claims: Vec<Claim> = specs
        .iter()
        .map(|s| Claim {
            id: s.id.clone(),
            text: format!("Report {} says the old bridge closed overnight", s.id),
            veracity: s.veracity,
            dataset: Dataset::SS,
            event_or_topic: None,
        })
        .collect();
    let stances: Vec<Stance> = specs
        .iter()
        .flat_map(|s| {
            [
                Stance {
                    claim_id: s.id.clone(),
                    text: words("confirmed", s.support_words),
                    polarity: Polarity::Support,
                    origin: Origin::Human,
                },
                Stance {
                    claim_id: s.id.clone(),
                    text: words("debunked", s.refute_words),
                    polarity: Polarity::Refute,
                    origin: Origin::Human,
                },
            ]
        })
        .collect();
    let cp = dir.join("claims.jsonl");
    let sp = dir.join("stances.jsonl");
    corpus::write_claims(&cp, &claims).unwrap();
    corpus::write_stances(&sp, &stances).unwrap();
    (cp, sp)
}

/// A scripted plan over a corpus in `dir`; `extra` is spliced in as top-level TOML keys.
pub fn scripted_plan(dir: &Path, out: &str, policy: &str, extra: &str) -> ExperimentPlan {
    let text = format!(
        "output = \"{out}\"\n{extra}\n[corpus]\nclaims = \"claims.jsonl\"\nstances = \"stances.jsonl\"\n\n\
         [[backends]]\nname = \"scripted\"\nkind = \"scripted\"\npolicy = \"{policy}\"\n"
    );
    ExperimentPlan::from_toml_str(&text, dir).unwrap()
}

/// Every file under `root` with its bytes, sorted by relative path.
pub fn snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}
