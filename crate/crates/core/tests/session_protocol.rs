mod common;

use std::sync::atomic::{AtomicUsize, Ordering};

use pandora_core::corpus::{Claim, Dataset, Origin, PersuasionPair, Polarity, Stance, Veracity};
use pandora_core::gateway::{
    ChatBackend, ChatTurn, FollowerParams, GatewayError, GenerationConfig, InitialLean, ScriptedBackend, ScriptedPolicy,
};
use pandora_core::persona::{Demographic, RoundKind, TemplateSet};
use pandora_core::session::{build_groups, GroupConfig, GroupMode, SessionError, SessionRunner};

use common::words;

fn claim() -> Claim {
    Claim {
        id: "c7".into(),
        text: "The old bridge closed overnight".into(),
        veracity: Veracity::Misinformation,
        dataset: Dataset::SS,
        event_or_topic: None,
    }
}

fn pair(support_words: usize, refute_words: usize) -> PersuasionPair {
    let stance = |text: String, polarity| Stance {
        claim_id: "c7".into(),
        text,
        polarity,
        origin: Origin::Human,
    };
    PersuasionPair::new(
        stance(words("confirmed", support_words), Polarity::Support),
        stance(words("debunked", refute_words), Polarity::Refute),
    )
    .unwrap()
}

fn follower(initial: InitialLean, p_follow: f64, p_conform: f64) -> ScriptedBackend {
    ScriptedBackend::new(
        ScriptedPolicy::Follower(FollowerParams {
            initial,
            p_follow,
            p_conform,
        }),
        1,
    )
}

/// Fails on its `fail_on`-th call (1-based), delegating otherwise.
struct FailingOn<B> {
    inner: B,
    fail_on: usize,
    calls: AtomicUsize,
}

impl<B: ChatBackend> ChatBackend for FailingOn<B> {
    fn complete(&self, config: &GenerationConfig, turns: &[ChatTurn]) -> Result<String, GatewayError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) + 1 == self.fail_on {
            return Err(GatewayError::Endpoint {
                status: 503,
                message: "unavailable".into(),
            });
        }
        self.inner.complete(config, turns)
    }

    fn describe(&self) -> String {
        self.inner.describe()
    }
}

#[test]
fn opposite_initial_followers_converge_on_the_longer_stance() {
    let templates = TemplateSet::default();
    let config = GenerationConfig::default();
    let runner = SessionRunner::new(&templates, &config);
    let a = follower(InitialLean::Believe, 1.0, 1.0);
    let b = follower(InitialLean::Disbelieve, 1.0, 1.0);
    for (support, refute, expected) in [(12, 30, -1), (30, 12, 1)] {
        let s = runner
            .run_session(&[&a, &b], &claim(), &pair(support, refute), GroupConfig::homogeneous(Demographic::Rural), 0)
            .unwrap();
        assert_eq!(s.agents[0].verdict_at(RoundKind::Initial), Some(1));
        assert_eq!(s.agents[1].verdict_at(RoundKind::Initial), Some(-1));
        assert_eq!(s.agents[0].verdict_at(RoundKind::Final), Some(expected));
        assert_eq!(s.agents[1].verdict_at(RoundKind::Final), Some(expected));
    }
}

#[test]
fn conformity_needs_an_in_group_believer() {
    // A never follows the stances and always disbelieves on its own; B always believes.
    let templates = TemplateSet::default();
    let config = GenerationConfig::default();
    let runner = SessionRunner::new(&templates, &config);
    let a = follower(InitialLean::Disbelieve, 0.0, 1.0);
    let b = ScriptedBackend::new(ScriptedPolicy::AlwaysTrue, 2);
    let p = pair(20, 20);

    let hom = runner
        .run_session(&[&a, &b], &claim(), &p, GroupConfig::homogeneous(Demographic::Rural), 0)
        .unwrap();
    let trace: Vec<Option<i8>> = RoundKind::ORDER.iter().map(|s| hom.agents[0].verdict_at(*s)).collect();
    assert_eq!(trace, [Some(-1), Some(-1), Some(-1), Some(1), Some(1)]);
    assert_eq!(
        hom.agents[1].entry(RoundKind::Discuss1).unwrap().response,
        "True information. As a rural area person, I stand by this view."
    );

    let het = runner
        .run_session(&[&a, &b], &claim(), &p, GroupConfig::heterogeneous(Demographic::Rural), 0)
        .unwrap();
    assert_eq!(het.agents[1].demographic, Demographic::Urban);
    let trace: Vec<Option<i8>> = RoundKind::ORDER.iter().map(|s| het.agents[0].verdict_at(*s)).collect();
    assert_eq!(trace, [Some(-1); 5]);
}

#[test]
fn failure_at_discuss2_checkpoints_and_resumes_identically() {
    let templates = TemplateSet::default();
    let config = GenerationConfig::default();
    let runner = SessionRunner::new(&templates, &config);
    let a = follower(InitialLean::Random(0.5), 0.6, 0.7);
    let b = follower(InitialLean::Random(0.5), 0.6, 0.7).with_seed(99);
    let group = GroupConfig::homogeneous(Demographic::Female);
    let p = pair(11, 25);
    let reference = runner.run_session(&[&a, &b], &claim(), &p, group, 3).unwrap();

    let flaky = FailingOn {
        inner: b,
        fail_on: 4,
        calls: AtomicUsize::new(0),
    };
    let err = runner.run_session(&[&a, &flaky], &claim(), &p, group, 3).unwrap_err();
    let SessionError::Backend {
        stage, agent, checkpoint, ..
    } = err
    else {
        panic!("expected a backend error, got {err}");
    };
    assert_eq!(stage, RoundKind::Discuss2);
    assert_eq!(agent, "B");
    assert_eq!(checkpoint.agents[0].entries.len(), 4);
    assert_eq!(checkpoint.agents[1].entries.len(), 3);
    assert!(!checkpoint.is_complete());

    // Survives a serialization round trip, as it would on disk.
    let restored = serde_json::from_str(&serde_json::to_string(&*checkpoint).unwrap()).unwrap();
    let resumed = runner.resume(&[&a, &b], restored).unwrap();
    assert_eq!(resumed, reference);
    resumed.check_invariants(&templates).unwrap();
}

#[test]
fn every_group_config_satisfies_the_invariants() {
    let templates = TemplateSet::default();
    let config = GenerationConfig::default();
    let runner = SessionRunner::new(&templates, &config);
    let groups = build_groups(&Demographic::ALL, GroupMode::Both);
    assert_eq!(groups.len(), 9);
    let a = follower(InitialLean::Random(0.5), 0.6, 0.5);
    let b = a.with_seed(5);
    for g in groups {
        let s = runner.run_session(&[&a, &b], &claim(), &pair(14, 18), g, 0).unwrap();
        s.check_invariants(&templates).unwrap();
        assert_eq!(s.agents.iter().map(|x| x.demographic).collect::<Vec<_>>(), g.members());
    }
}

#[test]
fn larger_groups_share_one_memory() {
    let templates = TemplateSet::default();
    let config = GenerationConfig::default();
    let runner = SessionRunner::new(&templates, &config);
    let a = ScriptedBackend::new(ScriptedPolicy::EchoLastVerdict, 1);
    let b = ScriptedBackend::new(ScriptedPolicy::AlwaysFalse, 2);
    let c = ScriptedBackend::new(ScriptedPolicy::AlwaysTrue, 3);
    let members = [Demographic::Young, Demographic::Old, Demographic::Young];
    let s = runner
        .run_members(&[&a, &b, &c], &claim(), &pair(12, 12), GroupConfig::heterogeneous(Demographic::Young), &members, 0)
        .unwrap();
    assert!(s.is_complete());
    assert_eq!(s.agents[2].label, "C");
    let final_prompt = &s.agents[0].entry(RoundKind::Final).unwrap().prompt;
    assert_eq!(final_prompt.matches("] Agent ").count(), 3 * 4);
    // Echo reads the last memory line, which is C's Discuss2 reply.
    assert_eq!(s.agents[0].verdict_at(RoundKind::Final), Some(1));
}

#[test]
fn mismatched_agent_count_is_rejected() {
    let templates = TemplateSet::default();
    let config = GenerationConfig::default();
    let runner = SessionRunner::new(&templates, &config);
    let a = ScriptedBackend::new(ScriptedPolicy::AlwaysTrue, 1);
    let err = runner
        .run_session(&[&a], &claim(), &pair(12, 12), GroupConfig::homogeneous(Demographic::Male), 0)
        .unwrap_err();
    assert!(matches!(err, SessionError::AgentCount { expected: 2, got: 1 }));
}

#[test]
fn rendered_prompts_match_golden_text() {
    let templates = TemplateSet::default();
    let config = GenerationConfig::default();
    let runner = SessionRunner::new(&templates, &config);
    let a = ScriptedBackend::new(ScriptedPolicy::AlwaysTrue, 1);
    let b = ScriptedBackend::new(ScriptedPolicy::AlwaysFalse, 2);
    let p = pair(10, 10);
    let s = runner
        .run_session(&[&a, &b], &claim(), &p, GroupConfig::heterogeneous(Demographic::Young), 0)
        .unwrap();
    let prompt = |agent: usize, stage: RoundKind| s.agents[agent].entry(stage).unwrap().prompt.clone();
    assert_eq!(
        prompt(1, RoundKind::Initial),
        "Assume you are a person from a older (over 60) age group. Given the source news: The old bridge closed overnight. \
         Based on your background as a older (over 60) age group person, determine if this is true information or \
         misinformation. Respond in this format: <true information or misinformation>."
    );
    let golden = std::fs::read_to_string(common::fixture("prompts/young_old_discuss1_agent_a.txt")).unwrap();
    assert_eq!(prompt(0, RoundKind::Discuss1), golden.trim_end_matches('\n'));
}
