//! Chat-completion backends, verdict parsing and persuasion-pair generation.

mod remote;
mod scripted;
mod verdict;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{Claim, Origin, PersuasionPair, Polarity, Stance};
use crate::persona::TemplateSet;

pub use remote::{EndpointConfig, RemoteBackend, ENV_API_KEY, ENV_ENDPOINT};
pub use scripted::{FollowerParams, InitialLean, ScriptedBackend, ScriptedPolicy};
pub use verdict::{parse_verdict, UnparseableVerdict, Verdict, MISINFORMATION, TRUE_INFORMATION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub content: String,
}

impl ChatTurn {
    pub fn user(content: impl Into<String>) -> Self {
        ChatTurn {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub max_output_tokens: u32,
    pub model_name: String,
    pub retries: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            temperature: 0.5,
            top_p: 0.9,
            max_output_tokens: 256,
            model_name: "gpt-35-turbo".into(),
            retries: 3,
            seed: None,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::Config(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GatewayError::Config(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::Config("max_output_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid conversation: {0}")]
    InvalidTurns(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("endpoint returned {status}: {message}")]
    Endpoint { status: u16, message: String },
    #[error("backend returned an empty completion")]
    EmptyOutput,
    #[error("malformed endpoint response: {0}")]
    Protocol(String),
    #[error("model refused to argue claim {claim_id:?}: {text:?}")]
    Refusal { claim_id: String, text: String },
    #[error("configuration: {0}")]
    Config(String),
}

impl GatewayError {
    /// Whether a later attempt might succeed.
    pub fn is_transient(&self) -> bool {
        matches!(self, GatewayError::RetriesExhausted { .. })
            || matches!(self, GatewayError::Endpoint { status, .. } if *status == 429 || *status >= 500)
    }
}

/// Anything that can continue a conversation. Implementations must be
/// shareable across concurrent sessions.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, config: &GenerationConfig, turns: &[ChatTurn]) -> Result<String, GatewayError>;

    /// A short stable description recorded in run manifests.
    fn describe(&self) -> String;
}

pub(crate) fn check_turns(turns: &[ChatTurn]) -> Result<(), GatewayError> {
    let last = turns
        .last()
        .ok_or_else(|| GatewayError::InvalidTurns("no turns".into()))?;
    if last.role != Role::User {
        return Err(GatewayError::InvalidTurns("last turn must come from the user".into()));
    }
    if let Some(i) = turns
        .iter()
        .position(|t| t.role != Role::System && t.content.trim().is_empty())
    {
        return Err(GatewayError::InvalidTurns(format!("turn {i} has empty content")));
    }
    Ok(())
}

#[derive(Clone)]
pub enum Backend {
    Remote(Arc<RemoteBackend>),
    Scripted(ScriptedBackend),
}

impl fmt::Debug for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

impl Backend {
    /// A copy for one agent: scripted backends get a fresh seed, remote ones are shared.
    pub fn for_agent(&self, seed: u64) -> Backend {
        match self {
            Backend::Remote(r) => Backend::Remote(Arc::clone(r)),
            Backend::Scripted(s) => Backend::Scripted(s.with_seed(seed)),
        }
    }
}

impl ChatBackend for Backend {
    fn complete(&self, config: &GenerationConfig, turns: &[ChatTurn]) -> Result<String, GatewayError> {
        match self {
            Backend::Remote(r) => r.complete(config, turns),
            Backend::Scripted(s) => s.complete(config, turns),
        }
    }

    fn describe(&self) -> String {
        match self {
            Backend::Remote(r) => r.describe(),
            Backend::Scripted(s) => s.describe(),
        }
    }
}

const DEFAULT_REFUSAL_CUES: &str = include_str!("../../data/refusal_cues.txt");

/// Phrases whose presence marks a generation as a refusal.
#[derive(Debug, Clone)]
pub struct RefusalCues(Vec<String>);

impl Default for RefusalCues {
    fn default() -> Self {
        RefusalCues::parse(DEFAULT_REFUSAL_CUES)
    }
}

impl RefusalCues {
    pub fn parse(list: &str) -> Self {
        RefusalCues(
            list.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(|l| l.to_lowercase().replace('\u{2019}', "'"))
                .collect(),
        )
    }

    pub fn is_refusal(&self, text: &str) -> bool {
        let lowered = text.to_lowercase().replace('\u{2019}', "'");
        self.0.iter().any(|cue| lowered.contains(cue.as_str()))
    }
}

/// Asks the backend for one argument that the claim is true and one that it
/// is false; "support" always means "argues the claim is true".
pub fn generate_persuasion_pair(
    backend: &dyn ChatBackend,
    config: &GenerationConfig,
    templates: &TemplateSet,
    refusals: &RefusalCues,
    claim: &Claim,
) -> Result<PersuasionPair, GatewayError> {
    if claim.text.trim().is_empty() {
        return Err(GatewayError::InvalidTurns(format!("claim {:?} has no text", claim.id)));
    }
    let argue = |target: bool, polarity: Polarity| -> Result<Stance, GatewayError> {
        let prompt = templates.render_persuasion_generation_prompt(claim, target);
        let text = backend.complete(config, &[ChatTurn::user(prompt)])?;
        if refusals.is_refusal(&text) {
            return Err(GatewayError::Refusal {
                claim_id: claim.id.clone(),
                text,
            });
        }
        Ok(Stance {
            claim_id: claim.id.clone(),
            text: text.trim().to_string(),
            polarity,
            origin: Origin::Llm,
        })
    };
    let supporting = argue(true, Polarity::Support)?;
    let refuting = argue(false, Polarity::Refute)?;
    Ok(PersuasionPair::new(supporting, refuting).expect("polarities fixed above"))
}
