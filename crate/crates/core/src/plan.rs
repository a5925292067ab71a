//! Declarative experiment plans (TOML).
//!
//! ```toml
//! output = "runs/smoke"
//! runs = 1
//! seed = 7
//! group_mode = "both"
//!
//! [corpus]
//! claims = "claims.jsonl"
//! stances = "stances.jsonl"
//! persuasion = "human"
//!
//! [[backends]]
//! name = "scripted"
//! kind = "scripted"
//! policy = "always-true"
//! ```
//!
//! Relative paths resolve against the plan file's directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{self, Claim, ClaimWithStances, CorpusError, Origin, PersuasionPair, Stance};
use crate::gateway::{Backend, EndpointConfig, GatewayError, GenerationConfig, RemoteBackend, ScriptedBackend, ScriptedPolicy};
use crate::persona::{Demographic, PromptError, StanceOrder, TemplateSet};
use crate::session::GroupMode;

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error("cannot read plan {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("plan {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid plan: {0}")]
    Invalid(String),
    #[error("plan references missing file {0}")]
    MissingFile(PathBuf),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PersuasionSource {
    #[default]
    Human,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRef {
    pub claims: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stances: Option<PathBuf>,
    #[serde(default)]
    pub persuasion: PersuasionSource,
    #[serde(default = "default_min_words")]
    pub min_words: usize,
    /// Number of persuasion pairs to sample; all pairs when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<usize>,
    /// Keep at most one pair per claim (the first after sampling).
    #[serde(default)]
    pub one_pair_per_claim: bool,
}

fn default_min_words() -> usize {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Scripted,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSpec {
    pub name: String,
    pub kind: BackendKind,
    /// Scripted policy string, e.g. `always-true` or `follower:p_follow=0.6`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<String>,
    /// Endpoint config file for remote backends.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_in_flight: Option<usize>,
}

impl BackendSpec {
    pub fn build(&self, seed: u64) -> Result<Backend, PlanError> {
        match self.kind {
            BackendKind::Scripted => {
                let policy: ScriptedPolicy = self
                    .policy
                    .as_deref()
                    .unwrap_or("always-true")
                    .parse()
                    .map_err(|e| PlanError::Invalid(format!("backend {}: {e}", self.name)))?;
                Ok(Backend::Scripted(ScriptedBackend::new(policy, seed)))
            }
            BackendKind::Remote => {
                let mut cfg = match &self.config {
                    Some(p) => EndpointConfig::from_file(p)?,
                    None => EndpointConfig::default().with_env_overrides(),
                };
                if let Some(url) = &self.endpoint {
                    if std::env::var(crate::gateway::ENV_ENDPOINT).map_or(true, |v| v.trim().is_empty()) {
                        cfg.endpoint = url.clone();
                    }
                }
                if let Some(n) = self.max_in_flight {
                    cfg.max_in_flight = n;
                }
                Ok(Backend::Remote(Arc::new(RemoteBackend::new(cfg)?)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub output: PathBuf,
    #[serde(default = "one")]
    pub runs: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default)]
    pub group_mode: GroupMode,
    #[serde(default = "all_demographics")]
    pub demographics: Vec<Demographic>,
    #[serde(default = "yes")]
    pub multi_agent: bool,
    #[serde(default)]
    pub single_agent: bool,
    /// Adds no-persuasion control judgments to single-agent runs.
    #[serde(default = "yes")]
    pub control: bool,
    #[serde(default)]
    pub stance_order: StanceOrder,
    /// Directory overriding the bundled prompt templates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates: Option<PathBuf>,
    pub corpus: CorpusRef,
    #[serde(default)]
    pub generation: GenerationConfig,
    pub backends: Vec<BackendSpec>,
}

fn one() -> u32 {
    1
}
fn yes() -> bool {
    true
}
fn default_concurrency() -> usize {
    4
}
fn all_demographics() -> Vec<Demographic> {
    Demographic::ALL.to_vec()
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentPlan {
    /// Parses and resolves paths, then validates.
    pub fn load(path: &Path) -> Result<Self, PlanError> {
        let text = std::fs::read_to_string(path).map_err(|source| PlanError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut plan: ExperimentPlan = toml::from_str(&text).map_err(|e| PlanError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        plan.resolve_paths(&base);
        plan.validate()?;
        Ok(plan)
    }

    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self, PlanError> {
        let mut plan: ExperimentPlan = toml::from_str(text).map_err(|e| PlanError::Parse {
            path: base.to_path_buf(),
            message: e.to_string(),
        })?;
        plan.resolve_paths(base);
        plan.validate()?;
        Ok(plan)
    }

    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.output);
        resolve(base, &mut self.corpus.claims);
        if let Some(s) = &mut self.corpus.stances {
            resolve(base, s);
        }
        if let Some(t) = &mut self.templates {
            resolve(base, t);
        }
        for b in &mut self.backends {
            if let Some(c) = &mut b.config {
                resolve(base, c);
            }
        }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        let mut files = vec![&self.corpus.claims];
        files.extend(self.corpus.stances.as_ref());
        files.extend(self.backends.iter().filter_map(|b| b.config.as_ref()));
        if let Some(missing) = files.into_iter().find(|p| !p.is_file()) {
            return Err(PlanError::MissingFile(missing.clone()));
        }
        if let Some(t) = &self.templates {
            if !t.is_dir() {
                return Err(PlanError::MissingFile(t.clone()));
            }
        }
        if self.runs == 0 {
            return Err(PlanError::Invalid("runs must be at least 1".into()));
        }
        if self.concurrency == 0 {
            return Err(PlanError::Invalid("concurrency must be at least 1".into()));
        }
        if self.backends.is_empty() {
            return Err(PlanError::Invalid("no backends".into()));
        }
        if self.demographics.is_empty() {
            return Err(PlanError::Invalid("no demographics".into()));
        }
        for (i, b) in self.backends.iter().enumerate() {
            if self.backends[..i].iter().any(|o| o.name == b.name) {
                return Err(PlanError::Invalid(format!("duplicate backend name {:?}", b.name)));
            }
            if b.kind == BackendKind::Scripted {
                b.policy
                    .as_deref()
                    .unwrap_or("always-true")
                    .parse::<ScriptedPolicy>()
                    .map_err(|e| PlanError::Invalid(format!("backend {}: {e}", b.name)))?;
            }
        }
        if !self.multi_agent && !self.single_agent {
            return Err(PlanError::Invalid("neither multi_agent nor single_agent is enabled".into()));
        }
        self.generation.validate()?;
        Ok(())
    }

    /// Keeps only the named backend.
    pub fn select_backend(&mut self, name: &str) -> Result<(), PlanError> {
        self.backends.retain(|b| b.name == name);
        if self.backends.is_empty() {
            return Err(PlanError::Invalid(format!("no backend named {name:?}")));
        }
        Ok(())
    }

    pub fn template_set(&self) -> Result<TemplateSet, PlanError> {
        let set = match &self.templates {
            Some(dir) => TemplateSet::load_dir(dir)?,
            None => TemplateSet::default(),
        };
        Ok(set.with_stance_order(self.stance_order))
    }

    pub fn load_corpus(&self) -> Result<Vec<ClaimWithStances>, PlanError> {
        Ok(corpus::load_canonical(&self.corpus.claims, self.corpus.stances.as_deref())?)
    }

    /// Claims with the persuasion pairs this plan will use, in corpus order.
    pub fn persuasion_pairs(&self) -> Result<Vec<(Claim, Vec<PersuasionPair>)>, PlanError> {
        let wanted = match self.corpus.persuasion {
            PersuasionSource::Human => Origin::Human,
            PersuasionSource::Llm => Origin::Llm,
        };
        let corpus: Vec<ClaimWithStances> = self
            .load_corpus()?
            .into_iter()
            .map(|(c, s)| {
                let kept: Vec<Stance> = s.into_iter().filter(|s| s.origin == wanted).collect();
                (c, kept)
            })
            .collect();
        let mut grouped = corpus::filter_stance_pairs(&corpus, self.corpus.min_words);
        if let Some(n) = self.corpus.sample {
            let flat: Vec<PersuasionPair> = grouped.iter().flat_map(|(_, p)| p.iter().cloned()).collect();
            let picked = corpus::sample_balanced(&flat, n, self.seed)?;
            for (claim, pairs) in &mut grouped {
                *pairs = picked.iter().filter(|p| p.claim_id == claim.id).cloned().collect();
            }
            grouped.retain(|(_, p)| !p.is_empty());
        }
        if self.corpus.one_pair_per_claim {
            grouped.iter_mut().for_each(|(_, p)| p.truncate(1));
        }
        Ok(grouped)
    }
}
