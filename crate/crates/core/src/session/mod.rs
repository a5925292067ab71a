//! The multi-agent round protocol, single-agent judgments, verdict import and
//! batch execution.
//!
//! A session runs five stages (Initial, Persuasion, Discuss1, Discuss2, Final)
//! for every agent. Within a stage agents answer in label order, and every
//! agent's prompt at stage `k` carries the memory of all answers from stages
//! before `k`, so agents within a stage never see each other's current reply.

mod batch;

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{Claim, PersuasionPair, Veracity};
use crate::gateway::{parse_verdict, ChatBackend, ChatTurn, GatewayError, GenerationConfig, Verdict};
use crate::persona::{render_memory, Demographic, MemoryLine, PromptError, RoundKind, TemplateSet};

pub use batch::{
    run_batch, run_batch_with, BackendEntry, BatchError, BatchOptions, BatchSummary, CellFailure, Manifest, RunStatus,
    ERRORS_FILE, JUDGMENTS_FILE, MANIFEST_FILE, SESSIONS_FILE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupKind {
    Hom,
    Het,
}

impl fmt::Display for GroupKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GroupKind::Hom => "hom",
            GroupKind::Het => "het",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GroupConfig {
    Homogeneous { demographic: Demographic },
    Heterogeneous { a: Demographic, b: Demographic },
}

impl GroupConfig {
    pub fn homogeneous(d: Demographic) -> Self {
        GroupConfig::Homogeneous { demographic: d }
    }

    /// `a` paired with its counterpart.
    pub fn heterogeneous(a: Demographic) -> Self {
        GroupConfig::Heterogeneous {
            a,
            b: a.counterpart(),
        }
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        match *self {
            GroupConfig::Heterogeneous { a, b } if b != a.counterpart() => Err(SessionError::InvalidGroup(
                format!("{b} is not the counterpart of {a}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn members(&self) -> [Demographic; 2] {
        match *self {
            GroupConfig::Homogeneous { demographic } => [demographic, demographic],
            GroupConfig::Heterogeneous { a, b } => [a, b],
        }
    }

    pub fn kind(&self) -> GroupKind {
        match self {
            GroupConfig::Homogeneous { .. } => GroupKind::Hom,
            GroupConfig::Heterogeneous { .. } => GroupKind::Het,
        }
    }

    pub fn label(&self) -> String {
        let [a, b] = self.members();
        format!("{a}-{b}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GroupMode {
    Hom,
    Het,
    #[default]
    Both,
}

/// Homogeneous configs first, then one heterogeneous config per counterpart pair.
pub fn build_groups(demographics: &[Demographic], mode: GroupMode) -> Vec<GroupConfig> {
    let mut out: Vec<GroupConfig> = Vec::new();
    let mut push = |g: GroupConfig| {
        if !out.contains(&g) {
            out.push(g);
        }
    };
    if matches!(mode, GroupMode::Hom | GroupMode::Both) {
        demographics.iter().for_each(|d| push(GroupConfig::homogeneous(*d)));
    }
    if matches!(mode, GroupMode::Het | GroupMode::Both) {
        for d in demographics {
            // Canonical orientation: the pair's first member is the one listed first in ALL.
            let first = Demographic::ALL
                .into_iter()
                .find(|x| *x == *d || *x == d.counterpart())
                .expect("every demographic is in ALL");
            push(GroupConfig::heterogeneous(first));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageEntry {
    pub stage: RoundKind,
    pub prompt: String,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentTranscript {
    pub label: String,
    pub demographic: Demographic,
    pub entries: Vec<StageEntry>,
}

impl AgentTranscript {
    pub fn entry(&self, stage: RoundKind) -> Option<&StageEntry> {
        self.entries.iter().find(|e| e.stage == stage)
    }

    pub fn verdict_at(&self, stage: RoundKind) -> Option<i8> {
        self.entry(stage).and_then(|e| e.verdict.as_ref()).map(|v| v.value)
    }
}

/// One multi-agent interaction. A session whose transcripts stop short of the
/// Final stage is a checkpoint that [`SessionRunner::resume`] can continue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub run_index: u32,
    #[serde(default)]
    pub backend: String,
    pub claim: Claim,
    pub pair: PersuasionPair,
    pub group: GroupConfig,
    pub agents: Vec<AgentTranscript>,
}

impl Session {
    fn slots_done(&self) -> usize {
        self.agents.iter().map(|a| a.entries.len()).sum()
    }

    pub fn is_complete(&self) -> bool {
        self.slots_done() == self.agents.len() * RoundKind::ORDER.len()
    }

    /// Memory lines of every stage strictly before `stage`, stage-major then agent order.
    pub fn memory_before(&self, stage: RoundKind) -> Vec<MemoryLine> {
        RoundKind::ORDER
            .iter()
            .take_while(|s| **s != stage)
            .flat_map(|s| {
                self.agents.iter().filter_map(move |a| {
                    a.entry(*s).map(|e| MemoryLine {
                        stage: *s,
                        agent: a.label.clone(),
                        text: e.response.clone(),
                    })
                })
            })
            .collect()
    }

    /// Checks stage order, memory contents and persona preambles.
    pub fn check_invariants(&self, templates: &TemplateSet) -> Result<(), String> {
        let members = self.group.members();
        if self.agents.len() != members.len() {
            return Err(format!("{} agents for a {}-member group", self.agents.len(), members.len()));
        }
        for (agent, expected) in self.agents.iter().zip(members) {
            if agent.demographic != expected {
                return Err(format!("agent {} is {} but the group expects {expected}", agent.label, agent.demographic));
            }
            let preamble = templates.preamble(agent.demographic);
            for (i, entry) in agent.entries.iter().enumerate() {
                if entry.stage != RoundKind::ORDER[i] {
                    return Err(format!("agent {}: entry {i} is {} not {}", agent.label, entry.stage, RoundKind::ORDER[i]));
                }
                if !entry.prompt.starts_with(&preamble) {
                    return Err(format!("agent {} {}: prompt lacks preamble {preamble:?}", agent.label, entry.stage));
                }
                if entry.verdict.is_some() == entry.parse_error.is_some() {
                    return Err(format!("agent {} {}: needs exactly one of verdict/parse_error", agent.label, entry.stage));
                }
                if entry.stage.needs_memory() {
                    let memory = render_memory(&self.memory_before(entry.stage));
                    if !entry.prompt.contains(&memory) {
                        return Err(format!("agent {} {}: memory block mismatch", agent.label, entry.stage));
                    }
                } else if !crate::persona::parse_memory(&entry.prompt).is_empty() {
                    return Err(format!("agent {} {}: unexpected memory", agent.label, entry.stage));
                }
            }
        }
        if self.is_complete() {
            Ok(())
        } else {
            Err("session stops before the Final stage".into())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubjectKind {
    LlmPersona,
    HumanImported,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Subject {
    pub demographic: Demographic,
    pub kind: SubjectKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    WithPersuasion,
    NoPersuasion,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::WithPersuasion => "p",
            Condition::NoPersuasion => "no-p",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub claim_id: String,
    pub subject: Subject,
    pub condition: Condition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<RoundKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub veracity: Option<Veracity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_index: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub familiar: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub participant: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("backend failed at {stage} for agent {agent}: {source}")]
    Backend {
        stage: RoundKind,
        agent: String,
        /// Everything answered before the failure.
        checkpoint: Box<Session>,
        #[source]
        source: GatewayError,
    },
    #[error("single-agent judgment failed: {0}")]
    Judgment(#[source] GatewayError),
    #[error("{0}")]
    InvalidGroup(String),
    #[error("expected {expected} agent backends, got {got}")]
    AgentCount { expected: usize, got: usize },
    #[error("verdict file {path} row {row}: {message}")]
    VerdictRow { path: PathBuf, row: usize, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn parsed(response: &str) -> (Option<Verdict>, Option<String>) {
    match parse_verdict(response) {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    }
}

const AGENT_LABELS: [&str; 26] = [
    "A", "B", "C", "D", "E", "F", "G", "H", "I", "J", "K", "L", "M", "N", "O", "P", "Q", "R", "S", "T",
    "U", "V", "W", "X", "Y", "Z",
];

/// Prompt rendering plus generation settings shared by every session in a batch.
#[derive(Debug, Clone, Copy)]
pub struct SessionRunner<'a> {
    pub templates: &'a TemplateSet,
    pub config: &'a GenerationConfig,
}

impl<'a> SessionRunner<'a> {
    pub fn new(templates: &'a TemplateSet, config: &'a GenerationConfig) -> Self {
        SessionRunner { templates, config }
    }

    /// Runs the five stages for a two-agent group; `agents[i]` answers for member `i`.
    pub fn run_session(
        &self,
        agents: &[&dyn ChatBackend],
        claim: &Claim,
        pair: &PersuasionPair,
        group: GroupConfig,
        run_index: u32,
    ) -> Result<Session, SessionError> {
        group.validate()?;
        self.run_members(agents, claim, pair, group, &group.members(), run_index)
    }

    /// The general engine: any number of agents ≥ 2 sharing one memory.
    pub fn run_members(
        &self,
        agents: &[&dyn ChatBackend],
        claim: &Claim,
        pair: &PersuasionPair,
        group: GroupConfig,
        members: &[Demographic],
        run_index: u32,
    ) -> Result<Session, SessionError> {
        if pair.claim_id != claim.id {
            return Err(PromptError::ClaimMismatch {
                claim: claim.id.clone(),
                pair: pair.claim_id.clone(),
            }
            .into());
        }
        if members.len() < 2 || members.len() > AGENT_LABELS.len() {
            return Err(SessionError::InvalidGroup(format!("{} members", members.len())));
        }
        let session = Session {
            session_id: format!("{}/{}/r{run_index}", claim.id, group.label()),
            run_index,
            backend: agents.first().map(|a| a.describe()).unwrap_or_default(),
            claim: claim.clone(),
            pair: pair.clone(),
            group,
            agents: members
                .iter()
                .zip(AGENT_LABELS)
                .map(|(d, label)| AgentTranscript {
                    label: label.to_string(),
                    demographic: *d,
                    entries: Vec::new(),
                })
                .collect(),
        };
        self.resume(agents, session)
    }

    /// Continues a checkpoint from its first unanswered (stage, agent) slot.
    pub fn resume(&self, agents: &[&dyn ChatBackend], mut session: Session) -> Result<Session, SessionError> {
        let n = session.agents.len();
        if agents.len() != n {
            return Err(SessionError::AgentCount {
                expected: n,
                got: agents.len(),
            });
        }
        for slot in session.slots_done()..n * RoundKind::ORDER.len() {
            let stage = RoundKind::ORDER[slot / n];
            let idx = slot % n;
            let memory = stage.needs_memory().then(|| render_memory(&session.memory_before(stage)));
            let agent = &session.agents[idx];
            let pair = stage.needs_pair().then_some(&session.pair);
            let prompt = self.templates.render_round_prompt(
                stage,
                agent.demographic,
                &session.claim,
                pair,
                memory.as_deref(),
            )?;
            let response = match agents[idx].complete(self.config, &[ChatTurn::user(prompt.clone())]) {
                Ok(r) => r,
                Err(source) => {
                    return Err(SessionError::Backend {
                        stage,
                        agent: agent.label.clone(),
                        checkpoint: Box::new(session),
                        source,
                    })
                }
            };
            let (verdict, parse_error) = parsed(&response);
            session.agents[idx].entries.push(StageEntry {
                stage,
                prompt,
                response,
                verdict,
                parse_error,
            });
        }
        Ok(session)
    }

    /// One persona judgment, with or without the persuasion pair.
    pub fn run_single_agent(
        &self,
        backend: &dyn ChatBackend,
        demographic: Demographic,
        claim: &Claim,
        pair: Option<&PersuasionPair>,
    ) -> Result<JudgmentRecord, SessionError> {
        let prompt = self.templates.render_judgment_prompt(demographic, claim, pair)?;
        let response = backend
            .complete(self.config, &[ChatTurn::user(prompt)])
            .map_err(SessionError::Judgment)?;
        let (verdict, parse_error) = parsed(&response);
        Ok(JudgmentRecord {
            id: None,
            claim_id: claim.id.clone(),
            subject: Subject {
                demographic,
                kind: SubjectKind::LlmPersona,
            },
            condition: if pair.is_some() {
                Condition::WithPersuasion
            } else {
                Condition::NoPersuasion
            },
            verdict,
            parse_error,
            stage: None,
            veracity: Some(claim.veracity),
            run_index: None,
            backend: Some(backend.describe()),
            familiar: None,
            participant: None,
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerdictRow {
    claim_id: String,
    group: String,
    belief: serde_json::Value,
    condition: String,
    #[serde(default)]
    familiar: Option<bool>,
    #[serde(default)]
    participant: Option<String>,
    #[serde(default)]
    veracity: Option<Veracity>,
}

/// Reads human verdicts, one JSON object per line:
/// `{"claim_id", "group", "belief": "true"|"false", "condition": "p"|"no-p", "familiar"?, "participant"?}`.
pub fn import_human_verdicts(path: &Path) -> Result<Vec<JudgmentRecord>, SessionError> {
    let io = |source| SessionError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let row_err = |message: String| SessionError::VerdictRow {
            path: path.to_path_buf(),
            row: idx + 1,
            message,
        };
        let row: VerdictRow = serde_json::from_str(&line).map_err(|e| row_err(e.to_string()))?;
        let demographic: Demographic = row.group.parse().map_err(|e: PromptError| row_err(e.to_string()))?;
        let value = match &row.belief {
            serde_json::Value::Bool(b) => Some(*b),
            serde_json::Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
                "true" => Some(true),
                "false" => Some(false),
                _ => None,
            },
            _ => None,
        }
        .ok_or_else(|| row_err(format!("belief must be \"true\" or \"false\", got {}", row.belief)))?;
        let condition = match row.condition.trim().to_ascii_lowercase().as_str() {
            "p" | "persuasion" => Condition::WithPersuasion,
            "no-p" | "nop" | "no-persuasion" => Condition::NoPersuasion,
            other => return Err(row_err(format!("unknown condition {other:?}"))),
        };
        if row.claim_id.trim().is_empty() {
            return Err(row_err("empty claim_id".into()));
        }
        out.push(JudgmentRecord {
            id: None,
            claim_id: row.claim_id,
            subject: Subject {
                demographic,
                kind: SubjectKind::HumanImported,
            },
            condition,
            verdict: Some(Verdict {
                value: if value { 1 } else { -1 },
                raw_text: if value { "true" } else { "false" }.to_string(),
                confidence_note: None,
            }),
            parse_error: None,
            stage: None,
            veracity: row.veracity,
            run_index: None,
            backend: None,
            familiar: row.familiar,
            participant: row.participant,
        });
    }
    Ok(out)
}
