//! Demographic personas and prompt templates.
//!
//! Templates are plain UTF-8 files with `{slot}` markers. The default set is
//! compiled in from `templates/`; [`TemplateSet::load_dir`] reads a frozen copy
//! from disk so experiments can be rerun against a pinned prompt version.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Claim, PersuasionPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Demographic {
    Rural,
    Urban,
    Female,
    Male,
    Young,
    Old,
}

impl Demographic {
    pub const ALL: [Demographic; 6] = [
        Demographic::Rural,
        Demographic::Urban,
        Demographic::Female,
        Demographic::Male,
        Demographic::Young,
        Demographic::Old,
    ];

    pub fn counterpart(self) -> Demographic {
        match self {
            Demographic::Rural => Demographic::Urban,
            Demographic::Urban => Demographic::Rural,
            Demographic::Female => Demographic::Male,
            Demographic::Male => Demographic::Female,
            Demographic::Young => Demographic::Old,
            Demographic::Old => Demographic::Young,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Demographic::Rural => "rural",
            Demographic::Urban => "urban",
            Demographic::Female => "female",
            Demographic::Male => "male",
            Demographic::Young => "young",
            Demographic::Old => "old",
        }
    }
}

impl fmt::Display for Demographic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Demographic {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, PromptError> {
        Demographic::ALL
            .into_iter()
            .find(|d| d.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| PromptError::UnknownDemographic(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TemplateKind {
    PersuasionGen,
    Judgment,
    JudgmentNoPersuasion,
    RoundInitial,
    RoundPersuasion,
    RoundDiscuss1,
    RoundDiscuss2,
    RoundFinal,
    BeliefElicitation,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 9] = [
        TemplateKind::PersuasionGen,
        TemplateKind::Judgment,
        TemplateKind::JudgmentNoPersuasion,
        TemplateKind::RoundInitial,
        TemplateKind::RoundPersuasion,
        TemplateKind::RoundDiscuss1,
        TemplateKind::RoundDiscuss2,
        TemplateKind::RoundFinal,
        TemplateKind::BeliefElicitation,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            TemplateKind::PersuasionGen => "persuasion_generation.txt",
            TemplateKind::Judgment => "judgment.txt",
            TemplateKind::JudgmentNoPersuasion => "judgment_no_persuasion.txt",
            TemplateKind::RoundInitial => "round_initial.txt",
            TemplateKind::RoundPersuasion => "round_persuasion.txt",
            TemplateKind::RoundDiscuss1 => "round_discuss1.txt",
            TemplateKind::RoundDiscuss2 => "round_discuss2.txt",
            TemplateKind::RoundFinal => "round_final.txt",
            TemplateKind::BeliefElicitation => "belief_elicitation.txt",
        }
    }

    fn allowed_slots(self) -> &'static [Slot] {
        use Slot::*;
        match self {
            TemplateKind::PersuasionGen => &[Claim, TargetTruth],
            TemplateKind::Judgment | TemplateKind::RoundPersuasion => &[Group, Claim, Support, Refute],
            TemplateKind::JudgmentNoPersuasion | TemplateKind::RoundInitial => &[Group, Claim],
            TemplateKind::RoundDiscuss1 | TemplateKind::RoundDiscuss2 => {
                &[Group, Claim, Support, Refute, Memory]
            }
            TemplateKind::RoundFinal => &[Group, Claim, Memory],
            TemplateKind::BeliefElicitation => &[Group],
        }
    }
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    Group,
    Claim,
    Support,
    Refute,
    Memory,
    TargetTruth,
}

impl Slot {
    fn name(self) -> &'static str {
        match self {
            Slot::Group => "group",
            Slot::Claim => "claim",
            Slot::Support => "support",
            Slot::Refute => "refute",
            Slot::Memory => "memory",
            Slot::TargetTruth => "target_truth",
        }
    }

    fn from_name(name: &str) -> Option<Slot> {
        [
            Slot::Group,
            Slot::Claim,
            Slot::Support,
            Slot::Refute,
            Slot::Memory,
            Slot::TargetTruth,
        ]
        .into_iter()
        .find(|s| s.name() == name)
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("{kind} template: slot {{{slot}}} was not provided")]
    MissingSlot { kind: TemplateKind, slot: Slot },
    #[error("{kind} template: slot {{{slot}}} is not allowed for this kind")]
    ForeignSlot { kind: TemplateKind, slot: Slot },
    #[error("{kind} template: unknown slot {{{name}}}")]
    UnknownSlot { kind: TemplateKind, name: String },
    #[error("{kind} template: unterminated slot marker")]
    Unterminated { kind: TemplateKind },
    #[error("persuasion pair belongs to claim {pair:?}, not {claim:?}")]
    ClaimMismatch { claim: String, pair: String },
    #[error("unknown demographic {0:?}")]
    UnknownDemographic(String),
    #[error("group surface-form table: {0}")]
    GroupTable(String),
    #[error("cannot read template {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Slot(Slot),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    kind: TemplateKind,
    source: String,
    segments: Vec<Segment>,
}

impl PromptTemplate {
    pub fn parse(kind: TemplateKind, source: &str) -> Result<Self, PromptError> {
        let source = source.trim_end_matches(['\n', '\r']).to_string();
        let mut segments = Vec::new();
        let mut rest = source.as_str();
        while let Some(open) = rest.find('{') {
            if open > 0 {
                segments.push(Segment::Text(rest[..open].to_string()));
            }
            let close = rest[open..]
                .find('}')
                .ok_or(PromptError::Unterminated { kind })?;
            let name = &rest[open + 1..open + close];
            let slot = Slot::from_name(name).ok_or_else(|| PromptError::UnknownSlot {
                kind,
                name: name.to_string(),
            })?;
            if !kind.allowed_slots().contains(&slot) {
                return Err(PromptError::ForeignSlot { kind, slot });
            }
            segments.push(Segment::Slot(slot));
            rest = &rest[open + close + 1..];
        }
        if !rest.is_empty() {
            segments.push(Segment::Text(rest.to_string()));
        }
        Ok(PromptTemplate {
            kind,
            source,
            segments,
        })
    }

    pub fn kind(&self) -> TemplateKind {
        self.kind
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn slots(&self) -> impl Iterator<Item = Slot> + '_ {
        self.segments.iter().filter_map(|s| match s {
            Segment::Slot(slot) => Some(*slot),
            Segment::Text(_) => None,
        })
    }

    /// Single-pass substitution: slot values are never rescanned for markers.
    pub fn render(&self, values: &BTreeMap<Slot, &str>) -> Result<String, PromptError> {
        let mut out = String::with_capacity(self.source.len() + 256);
        for segment in &self.segments {
            match segment {
                Segment::Text(t) => out.push_str(t),
                Segment::Slot(slot) => {
                    let value = values.get(slot).ok_or(PromptError::MissingSlot {
                        kind: self.kind,
                        slot: *slot,
                    })?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }
}

/// Order in which the two stances appear in prompts that show both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum StanceOrder {
    #[default]
    SupportFirst,
    RefuteFirst,
    /// Per-claim coin flip keyed on the claim id.
    Randomized { seed: u64 },
}

/// The stage prompts of a multi-agent session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoundKind {
    Initial,
    Persuasion,
    Discuss1,
    Discuss2,
    Final,
}

impl RoundKind {
    pub const ORDER: [RoundKind; 5] = [
        RoundKind::Initial,
        RoundKind::Persuasion,
        RoundKind::Discuss1,
        RoundKind::Discuss2,
        RoundKind::Final,
    ];

    pub fn template_kind(self) -> TemplateKind {
        match self {
            RoundKind::Initial => TemplateKind::RoundInitial,
            RoundKind::Persuasion => TemplateKind::RoundPersuasion,
            RoundKind::Discuss1 => TemplateKind::RoundDiscuss1,
            RoundKind::Discuss2 => TemplateKind::RoundDiscuss2,
            RoundKind::Final => TemplateKind::RoundFinal,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RoundKind::Initial => "Initial",
            RoundKind::Persuasion => "Persuasion",
            RoundKind::Discuss1 => "Discuss1",
            RoundKind::Discuss2 => "Discuss2",
            RoundKind::Final => "Final",
        }
    }

    pub fn index(self) -> usize {
        RoundKind::ORDER.iter().position(|k| *k == self).unwrap()
    }

    pub fn needs_pair(self) -> bool {
        matches!(self, RoundKind::Persuasion | RoundKind::Discuss1 | RoundKind::Discuss2)
    }

    pub fn needs_memory(self) -> bool {
        matches!(self, RoundKind::Discuss1 | RoundKind::Discuss2 | RoundKind::Final)
    }
}

impl fmt::Display for RoundKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

const DEFAULT_GROUPS: &str = include_str!("../templates/groups.tsv");
const GROUPS_FILE: &str = "groups.tsv";

fn default_source(kind: TemplateKind) -> &'static str {
    match kind {
        TemplateKind::PersuasionGen => include_str!("../templates/persuasion_generation.txt"),
        TemplateKind::Judgment => include_str!("../templates/judgment.txt"),
        TemplateKind::JudgmentNoPersuasion => include_str!("../templates/judgment_no_persuasion.txt"),
        TemplateKind::RoundInitial => include_str!("../templates/round_initial.txt"),
        TemplateKind::RoundPersuasion => include_str!("../templates/round_persuasion.txt"),
        TemplateKind::RoundDiscuss1 => include_str!("../templates/round_discuss1.txt"),
        TemplateKind::RoundDiscuss2 => include_str!("../templates/round_discuss2.txt"),
        TemplateKind::RoundFinal => include_str!("../templates/round_final.txt"),
        TemplateKind::BeliefElicitation => include_str!("../templates/belief_elicitation.txt"),
    }
}

const APPENDIX_PREAMBLE: &str = "Assume you are a person from a {group}.";
const BELONG_PREAMBLE: &str = "Assume you belong to {group}.";

fn parse_groups(table: &str) -> Result<BTreeMap<Demographic, String>, PromptError> {
    let mut out = BTreeMap::new();
    for line in table.lines() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, surface) = line
            .split_once('\t')
            .ok_or_else(|| PromptError::GroupTable(format!("expected a tab in {line:?}")))?;
        out.insert(key.parse()?, surface.trim().to_string());
    }
    if let Some(missing) = Demographic::ALL.iter().find(|d| !out.contains_key(*d)) {
        return Err(PromptError::GroupTable(format!("no surface form for {missing}")));
    }
    Ok(out)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// All prompt templates plus the group surface-form table.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<TemplateKind, PromptTemplate>,
    groups: BTreeMap<Demographic, String>,
    groups_source: String,
    stance_order: StanceOrder,
}

impl Default for TemplateSet {
    fn default() -> Self {
        let templates = TemplateKind::ALL
            .into_iter()
            .map(|k| (k, PromptTemplate::parse(k, default_source(k)).expect("bundled template")))
            .collect();
        TemplateSet {
            templates,
            groups: parse_groups(DEFAULT_GROUPS).expect("bundled group table"),
            groups_source: DEFAULT_GROUPS.to_string(),
            stance_order: StanceOrder::default(),
        }
    }
}

impl TemplateSet {
    /// Reads one file per template kind plus `groups.tsv` from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|source| PromptError::Io { path, source })
        };
        let mut templates = BTreeMap::new();
        for kind in TemplateKind::ALL {
            templates.insert(kind, PromptTemplate::parse(kind, &read(kind.file_name())?)?);
        }
        let groups_source = read(GROUPS_FILE)?;
        Ok(TemplateSet {
            templates,
            groups: parse_groups(&groups_source)?,
            groups_source,
            stance_order: StanceOrder::default(),
        })
    }

    /// Writes the set in the layout [`TemplateSet::load_dir`] reads.
    pub fn write_dir(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        for (kind, t) in &self.templates {
            fs::write(dir.join(kind.file_name()), t.source())?;
        }
        fs::write(dir.join(GROUPS_FILE), &self.groups_source)
    }

    pub fn with_stance_order(mut self, order: StanceOrder) -> Self {
        self.stance_order = order;
        self
    }

    /// Swaps the persona preamble to the shorter "Assume you belong to" form.
    pub fn with_belong_preamble(mut self) -> Self {
        for (kind, t) in self.templates.iter_mut() {
            if t.source.starts_with(APPENDIX_PREAMBLE) {
                let src = t.source.replacen(APPENDIX_PREAMBLE, BELONG_PREAMBLE, 1);
                *t = PromptTemplate::parse(*kind, &src).expect("preamble swap keeps slots valid");
            }
        }
        self
    }

    pub fn template(&self, kind: TemplateKind) -> &PromptTemplate {
        &self.templates[&kind]
    }

    pub fn surface(&self, group: Demographic) -> &str {
        &self.groups[&group]
    }

    /// The persona preamble as it appears at the start of rendered prompts for `group`.
    pub fn preamble(&self, group: Demographic) -> String {
        let src = self.template(TemplateKind::RoundInitial).source();
        let end = src.find('.').map(|i| i + 1).unwrap_or(src.len());
        src[..end].replace("{group}", self.surface(group))
    }

    /// SHA-256 of every template file and the group table, keyed by file name.
    pub fn checksums(&self) -> BTreeMap<String, String> {
        let mut out: BTreeMap<String, String> = self
            .templates
            .iter()
            .map(|(k, t)| (k.file_name().to_string(), sha256_hex(t.source().as_bytes())))
            .collect();
        out.insert(GROUPS_FILE.into(), sha256_hex(self.groups_source.as_bytes()));
        out
    }

    fn refute_first(&self, claim: &Claim) -> bool {
        match self.stance_order {
            StanceOrder::SupportFirst => false,
            StanceOrder::RefuteFirst => true,
            StanceOrder::Randomized { seed } => {
                let mut h = Sha256::new();
                h.update(seed.to_le_bytes());
                h.update(claim.id.as_bytes());
                h.finalize()[0] & 1 == 1
            }
        }
    }

    fn render(
        &self,
        kind: TemplateKind,
        claim: &Claim,
        values: BTreeMap<Slot, &str>,
    ) -> Result<String, PromptError> {
        let template = self.template(kind);
        if !self.refute_first(claim) || !template.slots().any(|s| s == Slot::Support) {
            return template.render(&values);
        }
        let swapped = template
            .source()
            .replace(
                "{support} supporting the claim and {refute} refuting the claim",
                "{refute} refuting the claim and {support} supporting the claim",
            )
            .replace("{support} and {refute}", "{refute} and {support}");
        PromptTemplate::parse(kind, &swapped)?.render(&values)
    }

    pub fn render_persuasion_generation_prompt(&self, claim: &Claim, target: bool) -> String {
        let target = if target { "true" } else { "false" };
        let values = BTreeMap::from([(Slot::Claim, claim.text.as_str()), (Slot::TargetTruth, target)]);
        self.render(TemplateKind::PersuasionGen, claim, values)
            .expect("persuasion template only uses claim and target_truth")
    }

    pub fn render_judgment_prompt(
        &self,
        group: Demographic,
        claim: &Claim,
        pair: Option<&PersuasionPair>,
    ) -> Result<String, PromptError> {
        let mut values = BTreeMap::from([
            (Slot::Group, self.surface(group)),
            (Slot::Claim, claim.text.as_str()),
        ]);
        let kind = match pair {
            Some(pair) => {
                check_pair(claim, pair)?;
                values.insert(Slot::Support, pair.supporting.text.as_str());
                values.insert(Slot::Refute, pair.refuting.text.as_str());
                TemplateKind::Judgment
            }
            None => TemplateKind::JudgmentNoPersuasion,
        };
        self.render(kind, claim, values)
    }

    pub fn render_round_prompt(
        &self,
        kind: RoundKind,
        group: Demographic,
        claim: &Claim,
        pair: Option<&PersuasionPair>,
        memory: Option<&str>,
    ) -> Result<String, PromptError> {
        let template_kind = kind.template_kind();
        let mut values = BTreeMap::from([
            (Slot::Group, self.surface(group)),
            (Slot::Claim, claim.text.as_str()),
        ]);
        if kind.needs_pair() {
            let pair = pair.ok_or(PromptError::MissingSlot {
                kind: template_kind,
                slot: Slot::Support,
            })?;
            check_pair(claim, pair)?;
            values.insert(Slot::Support, pair.supporting.text.as_str());
            values.insert(Slot::Refute, pair.refuting.text.as_str());
        }
        if kind.needs_memory() {
            let memory = memory.ok_or(PromptError::MissingSlot {
                kind: template_kind,
                slot: Slot::Memory,
            })?;
            values.insert(Slot::Memory, memory);
        }
        self.render(template_kind, claim, values)
    }

    pub fn render_belief_elicitation_prompt(&self, group: Demographic) -> String {
        let values = BTreeMap::from([(Slot::Group, self.surface(group))]);
        self.template(TemplateKind::BeliefElicitation)
            .render(&values)
            .expect("belief template only uses group")
    }
}

/// One line of shared conversation memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryLine {
    pub stage: RoundKind,
    pub agent: String,
    pub text: String,
}

impl MemoryLine {
    pub fn render(&self) -> String {
        let text: Vec<&str> = self.text.split_whitespace().collect();
        format!("[{}] Agent {}: {}", self.stage.label(), self.agent, text.join(" "))
    }

    fn parse(line: &str) -> Option<MemoryLine> {
        let rest = line.strip_prefix('[')?;
        let (stage, rest) = rest.split_once("] Agent ")?;
        let stage = RoundKind::ORDER.into_iter().find(|k| k.label() == stage)?;
        let (agent, text) = rest.split_once(": ")?;
        if agent.is_empty() || agent.contains(char::is_whitespace) {
            return None;
        }
        Some(MemoryLine {
            stage,
            agent: agent.to_string(),
            text: text.to_string(),
        })
    }
}

/// Renders memory lines as the value of the `{memory}` slot.
///
/// The block is newline-delimited on both sides so each entry sits on a line
/// of its own inside the rendered prompt.
pub fn render_memory(lines: &[MemoryLine]) -> String {
    let mut out = String::from("\n");
    for line in lines {
        out.push_str(&line.render());
        out.push('\n');
    }
    out
}

/// Recovers memory lines from a rendered prompt.
pub fn parse_memory(prompt: &str) -> Vec<MemoryLine> {
    prompt.lines().filter_map(MemoryLine::parse).collect()
}

fn check_pair(claim: &Claim, pair: &PersuasionPair) -> Result<(), PromptError> {
    if pair.claim_id != claim.id {
        return Err(PromptError::ClaimMismatch {
            claim: claim.id.clone(),
            pair: pair.claim_id.clone(),
        });
    }
    Ok(())
}
