//! Deterministic stand-ins for a model endpoint.
//!
//! A scripted backend reads the rendered prompt, recognises which template
//! produced it from the bundled wording, and answers according to its policy.
//! Every random decision is a hash of `(seed, decision, claim, persona)`, so
//! the same prompt and seed always produce the same bytes, and an agent can
//! recompute its own earlier decisions from a later prompt.

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::{check_turns, parse_verdict, ChatBackend, ChatTurn, GatewayError, GenerationConfig};
use crate::corpus::word_count;
use crate::persona::{parse_memory, MemoryLine, RoundKind};

/// How a follower agent forms its first judgment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialLean {
    Believe,
    Disbelieve,
    /// Believe with this probability.
    Random(f64),
}

/// Parameters of the persuasion-following agent.
///
/// * Initial stage: judgment drawn from `initial`.
/// * Persuasion stage onward: with probability `p_follow` the agent adopts the
///   stance argued by the longer of the two persuasion texts.
/// * Discussion 2: an agent that disbelieves the claim, paired with an
///   in-group partner (one whose replies speak from the same persona) that
///   believes it, adopts that belief with probability `p_conform`.
/// * Final: repeats its own Discussion 2 verdict, found in memory by the
///   seed-derived tag every follower reply carries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowerParams {
    pub initial: InitialLean,
    pub p_follow: f64,
    pub p_conform: f64,
}

impl Default for FollowerParams {
    fn default() -> Self {
        FollowerParams {
            initial: InitialLean::Random(0.5),
            p_follow: 0.6,
            p_conform: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScriptedPolicy {
    AlwaysTrue,
    AlwaysFalse,
    /// Repeats the most recent verdict found in the prompt's memory.
    EchoLastVerdict,
    /// Believes at the initial stage, disbelieves at every later one.
    AlwaysFlip,
    /// Writes fixed four-sentence arguments for generation prompts; believes otherwise.
    Template,
    Refuse,
    Follower(FollowerParams),
}

impl fmt::Display for ScriptedPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScriptedPolicy::AlwaysTrue => f.write_str("always-true"),
            ScriptedPolicy::AlwaysFalse => f.write_str("always-false"),
            ScriptedPolicy::EchoLastVerdict => f.write_str("echo-last-verdict"),
            ScriptedPolicy::AlwaysFlip => f.write_str("always-flip"),
            ScriptedPolicy::Template => f.write_str("template"),
            ScriptedPolicy::Refuse => f.write_str("refuse"),
            ScriptedPolicy::Follower(p) => {
                let initial = match p.initial {
                    InitialLean::Believe => "initial=true".to_string(),
                    InitialLean::Disbelieve => "initial=false".to_string(),
                    InitialLean::Random(b) => format!("p_believe={b}"),
                };
                write!(f, "follower:{initial},p_follow={},p_conform={}", p.p_follow, p.p_conform)
            }
        }
    }
}

impl FromStr for ScriptedPolicy {
    type Err = GatewayError;

    /// Parses `name` or `follower:key=value,...`.
    fn from_str(s: &str) -> Result<Self, GatewayError> {
        let bad = |msg: String| GatewayError::Config(format!("scripted policy {s:?}: {msg}"));
        let (name, args) = s.trim().split_once(':').unwrap_or((s.trim(), ""));
        let simple = match name {
            "always-true" => Some(ScriptedPolicy::AlwaysTrue),
            "always-false" => Some(ScriptedPolicy::AlwaysFalse),
            "echo-last-verdict" => Some(ScriptedPolicy::EchoLastVerdict),
            "always-flip" => Some(ScriptedPolicy::AlwaysFlip),
            "template" => Some(ScriptedPolicy::Template),
            "refuse" => Some(ScriptedPolicy::Refuse),
            "follower" | "conform-to-partner" => None,
            other => return Err(bad(format!("unknown policy {other:?}"))),
        };
        if let Some(policy) = simple {
            if !args.is_empty() {
                return Err(bad("this policy takes no parameters".into()));
            }
            return Ok(policy);
        }
        let mut params = FollowerParams::default();
        for kv in args.split(',').filter(|kv| !kv.trim().is_empty()) {
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got {kv:?}")))?;
            let prob = || -> Result<f64, GatewayError> {
                let v: f64 = value
                    .trim()
                    .parse()
                    .map_err(|_| bad(format!("{key} is not a number")))?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(bad(format!("{key}={v} outside [0, 1]")));
                }
                Ok(v)
            };
            match key.trim() {
                "p_follow" => params.p_follow = prob()?,
                "p_conform" => params.p_conform = prob()?,
                "p_believe" => params.initial = InitialLean::Random(prob()?),
                "initial" => {
                    params.initial = match value.trim() {
                        "true" => InitialLean::Believe,
                        "false" => InitialLean::Disbelieve,
                        v => return Err(bad(format!("initial must be true or false, got {v:?}"))),
                    }
                }
                other => return Err(bad(format!("unknown parameter {other:?}"))),
            }
        }
        Ok(ScriptedPolicy::Follower(params))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptedBackend {
    policy: ScriptedPolicy,
    seed: u64,
}

impl ScriptedBackend {
    pub fn new(policy: ScriptedPolicy, seed: u64) -> Self {
        ScriptedBackend { policy, seed }
    }

    pub fn policy(&self) -> ScriptedPolicy {
        self.policy
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        ScriptedBackend { seed, ..*self }
    }

    fn uniform(&self, decision: &str, view: &PromptView<'_>) -> f64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        for part in [decision, view.claim, view.persona] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        let digest = h.finalize();
        let mut word = [0u8; 8];
        word.copy_from_slice(&digest[..8]);
        (u64::from_le_bytes(word) >> 11) as f64 / (1u64 << 53) as f64
    }

    fn respond(&self, prompt: &str) -> String {
        let view = PromptView::read(prompt);
        match (self.policy, view.kind) {
            (ScriptedPolicy::Refuse, _) => "I'm sorry, but I can't help with that request.".into(),
            (_, PromptKind::Generation { target }) => generation_text(view.claim, target),
            (_, PromptKind::Beliefs) => belief_list(view.persona),
            (ScriptedPolicy::AlwaysTrue | ScriptedPolicy::Template, k) => reply(1, &view, k),
            (ScriptedPolicy::AlwaysFalse, k) => reply(-1, &view, k),
            (ScriptedPolicy::AlwaysFlip, k) => {
                let value = if k == PromptKind::Round(RoundKind::Initial) { 1 } else { -1 };
                reply(value, &view, k)
            }
            (ScriptedPolicy::EchoLastVerdict, k) => {
                let value = view
                    .memory
                    .iter()
                    .rev()
                    .find_map(|m| parse_verdict(&m.text).ok())
                    .map_or(1, |v| v.value);
                reply(value, &view, k)
            }
            (ScriptedPolicy::Follower(params), k) => {
                let stage = match k {
                    PromptKind::Round(stage) => stage,
                    // Single-agent judgments see the pair like the persuasion stage does.
                    _ if view.stances.is_some() => RoundKind::Persuasion,
                    _ => RoundKind::Initial,
                };
                let value = self.follower_verdict(&params, &view, stage);
                signed(reply(value, &view, k), self.signature())
            }
        }
    }

    fn follower_initial(&self, params: &FollowerParams, view: &PromptView<'_>) -> i8 {
        match params.initial {
            InitialLean::Believe => 1,
            InitialLean::Disbelieve => -1,
            InitialLean::Random(p) => {
                if self.uniform("initial", view) < p {
                    1
                } else {
                    -1
                }
            }
        }
    }

    fn follower_persuaded(&self, params: &FollowerParams, view: &PromptView<'_>) -> i8 {
        let initial = self.follower_initial(params, view);
        let Some((support, refute)) = view.stances else {
            return initial;
        };
        let lean = match word_count(support).cmp(&word_count(refute)) {
            std::cmp::Ordering::Greater => 1,
            std::cmp::Ordering::Less => -1,
            std::cmp::Ordering::Equal => return initial,
        };
        if self.uniform("follow", view) < params.p_follow {
            lean
        } else {
            initial
        }
    }

    fn follower_verdict(&self, params: &FollowerParams, view: &PromptView<'_>, stage: RoundKind) -> i8 {
        match stage {
            RoundKind::Initial => self.follower_initial(params, view),
            RoundKind::Persuasion | RoundKind::Discuss1 => self.follower_persuaded(params, view),
            // The final prompt shows no stances; the agent repeats its own Discuss2 verdict.
            RoundKind::Final if view.stances.is_none() => {
                let sig = self.signature();
                view.memory
                    .iter()
                    .filter(|m| m.stage == RoundKind::Discuss2 && m.text.contains(&sig))
                    .find_map(|m| parse_verdict(&m.text).ok())
                    .map_or_else(|| self.follower_initial(params, view), |v| v.value)
            }
            RoundKind::Discuss2 | RoundKind::Final => {
                let own = self.follower_persuaded(params, view);
                if own > 0 {
                    return own;
                }
                let own_text = signed(reply(own, view, PromptKind::Round(RoundKind::Discuss1)), self.signature());
                let marker = persona_marker(view.persona);
                let validated = view
                    .memory
                    .iter()
                    .filter(|m| m.stage == RoundKind::Discuss1 && m.text != own_text)
                    .any(|m| {
                        m.text.contains(&marker) && parse_verdict(&m.text).is_ok_and(|v| v.value > 0)
                    });
                if validated && self.uniform("conform", view) < params.p_conform {
                    1
                } else {
                    own
                }
            }
        }
    }
}

impl ScriptedBackend {
    /// Short tag that lets a follower find its own replies in shared memory.
    fn signature(&self) -> String {
        let digest = Sha256::digest(self.seed.to_le_bytes());
        format!("[{}]", hex::encode(&digest[..3]))
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, _config: &GenerationConfig, turns: &[ChatTurn]) -> Result<String, GatewayError> {
        check_turns(turns)?;
        let prompt = &turns.last().expect("checked non-empty").content;
        Ok(self.respond(prompt))
    }

    fn describe(&self) -> String {
        format!("scripted:{}#{}", self.policy, self.seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PromptKind {
    Generation { target: bool },
    Beliefs,
    Round(RoundKind),
}

/// The pieces of a rendered prompt a scripted policy cares about.
struct PromptView<'a> {
    kind: PromptKind,
    persona: &'a str,
    claim: &'a str,
    stances: Option<(&'a str, &'a str)>,
    memory: Vec<MemoryLine>,
}

fn between<'a>(hay: &'a str, start: &str, ends: &[&str]) -> Option<&'a str> {
    let from = hay.find(start)? + start.len();
    let rest = &hay[from..];
    let end = ends.iter().filter_map(|e| rest.find(e)).min().unwrap_or(rest.len());
    Some(&rest[..end])
}

impl<'a> PromptView<'a> {
    fn read(prompt: &'a str) -> Self {
        let memory = parse_memory(prompt);
        if let Some(claim) = prompt.strip_prefix("Given info: ") {
            let claim = claim.split(", you have to persuade").next().unwrap_or(claim);
            let target = !prompt.contains("the news is false");
            return PromptView {
                kind: PromptKind::Generation { target },
                persona: "",
                claim,
                stances: None,
                memory,
            };
        }
        let persona = between(prompt, "Assume you are a person from a ", &[". Given", "."])
            .or_else(|| between(prompt, "Assume you belong to ", &[". Given", "."]))
            .or_else(|| between(prompt, "Assume you are a ", &["."]))
            .unwrap_or("");
        if prompt.contains("Which beliefs do you think") {
            return PromptView {
                kind: PromptKind::Beliefs,
                persona,
                claim: "",
                stances: None,
                memory,
            };
        }
        let claim = between(prompt, "Given the source news: ", &[", and two stances present: ", ". Based on"])
            .unwrap_or("");
        let stances = between(prompt, "two stances present: ", &[]).and_then(|rest| {
            let sup_first = rest.find(" supporting the claim and ");
            let ref_first = rest.find(" refuting the claim and ");
            match (sup_first, ref_first) {
                (Some(s), r) if r.is_none_or(|r| s < r) => {
                    let support = &rest[..s];
                    let tail = &rest[s + " supporting the claim and ".len()..];
                    let refute = tail.split(" refuting the claim").next()?;
                    Some((support, refute))
                }
                (_, Some(r)) => {
                    let refute = &rest[..r];
                    let tail = &rest[r + " refuting the claim and ".len()..];
                    let support = tail.split(" supporting the claim").next()?;
                    Some((support, refute))
                }
                _ => None,
            }
        });
        let stage = if prompt.contains("Convince others about your own perspective") {
            RoundKind::Discuss1
        } else if prompt.contains("Now be open to other perspectives") {
            RoundKind::Discuss2
        } else if prompt.contains("Based on your background") {
            if stances.is_some() {
                RoundKind::Persuasion
            } else {
                RoundKind::Initial
            }
        } else if prompt.contains("Based on your") {
            RoundKind::Final
        } else {
            RoundKind::Initial
        };
        PromptView {
            kind: PromptKind::Round(stage),
            persona,
            claim,
            stances,
            memory,
        }
    }
}

fn persona_marker(persona: &str) -> String {
    format!("As a {persona} person")
}

fn reply(value: i8, view: &PromptView<'_>, kind: PromptKind) -> String {
    let verdict = if value > 0 { "True information" } else { "Misinformation" };
    let reason = match kind {
        PromptKind::Round(RoundKind::Initial) => "this is my first impression",
        PromptKind::Round(RoundKind::Persuasion) => "I weighed both stances",
        PromptKind::Round(RoundKind::Discuss1) => "I stand by this view",
        PromptKind::Round(RoundKind::Discuss2) => "I considered what was said",
        PromptKind::Round(RoundKind::Final) => "this is my final answer",
        _ => "that is my judgment",
    };
    if view.persona.is_empty() {
        format!("{verdict}. {}.", capitalize(reason))
    } else {
        format!("{verdict}. {}, {reason}.", persona_marker(view.persona))
    }
}

fn signed(text: String, signature: String) -> String {
    match text.strip_suffix('.') {
        Some(body) => format!("{body} {signature}."),
        None => format!("{text} {signature}"),
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    chars
        .next()
        .map(|c| c.to_uppercase().chain(chars).collect())
        .unwrap_or_default()
}

fn generation_text(claim: &str, target: bool) -> String {
    let claim = claim.trim().trim_end_matches('.');
    if target {
        format!(
            "The report that {claim} comes from credible sources and matches what experts have observed. \
             Think about the people around you who would benefit from knowing this. \
             Multiple independent accounts describe the same facts, which makes fabrication unlikely. \
             Trust the evidence and share it with those you care about."
        )
    } else {
        format!(
            "The report that {claim} is not supported by any credible evidence. \
             Reliable sources have not confirmed it and the details do not add up. \
             Stories like this spread because they provoke fear, not because they are accurate. \
             Check trusted outlets before believing or sharing it."
        )
    }
}

fn belief_list(persona: &str) -> String {
    let beliefs = [
        "Family comes first",
        "Hard work pays off",
        "Honesty matters",
        "Community support",
        "Respect for others",
        "Education opens doors",
        "Personal responsibility",
        "Fairness",
        "Health is wealth",
        "Sharing what you believe",
    ];
    let mut out = format!("As a {persona}, these beliefs define me:");
    for (i, b) in beliefs.iter().enumerate() {
        out.push_str(&format!("\n{}. {b}.", i + 1));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Claim, Dataset, Origin, PersuasionPair, Polarity, Stance, Veracity};
    use crate::persona::{render_memory, Demographic, TemplateSet};

    fn claim() -> Claim {
        Claim {
            id: "c".into(),
            text: "Drinking hot water cures the flu".into(),
            veracity: Veracity::Misinformation,
            dataset: Dataset::SS,
            event_or_topic: None,
        }
    }

    fn pair(support_words: usize, refute_words: usize) -> PersuasionPair {
        let s = |p, n| Stance {
            claim_id: "c".into(),
            text: vec!["word"; n].join(" "),
            polarity: p,
            origin: Origin::Human,
        };
        PersuasionPair::new(s(Polarity::Support, support_words), s(Polarity::Refute, refute_words)).unwrap()
    }

    fn ask(b: &ScriptedBackend, prompt: String) -> String {
        b.complete(&GenerationConfig::default(), &[ChatTurn::user(prompt)]).unwrap()
    }

    #[test]
    fn constant_policies() {
        let t = TemplateSet::default();
        let p = t.render_judgment_prompt(Demographic::Rural, &claim(), None).unwrap();
        let yes = ScriptedBackend::new(ScriptedPolicy::AlwaysTrue, 0);
        assert_eq!(parse_verdict(&ask(&yes, p.clone())).unwrap().value, 1);
        let no = ScriptedBackend::new(ScriptedPolicy::AlwaysFalse, 0);
        assert_eq!(parse_verdict(&ask(&no, p)).unwrap().value, -1);
    }

    #[test]
    fn echo_last_verdict_reads_memory() {
        let t = TemplateSet::default();
        let memory = render_memory(&[
            MemoryLine { stage: RoundKind::Initial, agent: "A".into(), text: "true information".into() },
            MemoryLine { stage: RoundKind::Initial, agent: "B".into(), text: "misinformation".into() },
        ]);
        let p = t
            .render_round_prompt(RoundKind::Final, Demographic::Male, &claim(), None, Some(&memory))
            .unwrap();
        let echo = ScriptedBackend::new(ScriptedPolicy::EchoLastVerdict, 0);
        assert_eq!(parse_verdict(&ask(&echo, p)).unwrap().value, -1);
    }

    #[test]
    fn prompt_view_recovers_fields() {
        let t = TemplateSet::default();
        let p = t
            .render_round_prompt(RoundKind::Discuss1, Demographic::Old, &claim(), Some(&pair(3, 5)), Some("\n"))
            .unwrap();
        let view = PromptView::read(&p);
        assert_eq!(view.kind, PromptKind::Round(RoundKind::Discuss1));
        assert_eq!(view.persona, "older (over 60) age group");
        assert_eq!(view.claim, "Drinking hot water cures the flu");
        assert_eq!(view.stances, Some(("word word word", "word word word word word")));
    }

    #[test]
    fn follower_with_full_follow_adopts_longer_stance() {
        let t = TemplateSet::default();
        let params = FollowerParams { initial: InitialLean::Believe, p_follow: 1.0, p_conform: 0.0 };
        let b = ScriptedBackend::new(ScriptedPolicy::Follower(params), 11);
        let initial = t.render_round_prompt(RoundKind::Initial, Demographic::Young, &claim(), None, None).unwrap();
        assert_eq!(parse_verdict(&ask(&b, initial)).unwrap().value, 1);
        let persuaded = t
            .render_round_prompt(RoundKind::Persuasion, Demographic::Young, &claim(), Some(&pair(3, 9)), None)
            .unwrap();
        assert_eq!(parse_verdict(&ask(&b, persuaded)).unwrap().value, -1);
    }

    #[test]
    fn policy_strings_round_trip() {
        for s in [
            "always-true",
            "always-false",
            "echo-last-verdict",
            "always-flip",
            "template",
            "refuse",
            "follower:p_believe=0.5,p_follow=0.6,p_conform=0.8",
            "follower:initial=true,p_follow=1,p_conform=0",
        ] {
            let p: ScriptedPolicy = s.parse().unwrap();
            assert_eq!(p.to_string().parse::<ScriptedPolicy>().unwrap(), p);
        }
        assert!("follower:p_follow=2".parse::<ScriptedPolicy>().is_err());
        assert!("nonsense".parse::<ScriptedPolicy>().is_err());
    }

    #[test]
    fn identical_inputs_identical_bytes() {
        let t = TemplateSet::default();
        let b = ScriptedBackend::new("follower".parse().unwrap(), 42);
        let p = t
            .render_round_prompt(RoundKind::Persuasion, Demographic::Female, &claim(), Some(&pair(4, 4)), None)
            .unwrap();
        assert_eq!(ask(&b, p.clone()), ask(&b, p));
    }
}
