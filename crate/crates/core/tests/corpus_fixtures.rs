mod common;

use pandora_core::corpus::{self, Dataset, Polarity, Veracity};

use common::fixture;

fn round_trip(name: &str, format: Dataset) -> Vec<corpus::ClaimWithStances> {
    let parsed = corpus::parse_claims(&fixture(&format!("corpus/{name}")), format).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (cp, sp) = (dir.path().join("c.jsonl"), dir.path().join("s.jsonl"));
    corpus::write_canonical(&cp, &sp, &parsed).unwrap();
    let back = corpus::load_canonical(&cp, Some(&sp)).unwrap();
    assert_eq!(back, parsed, "{name} changed across a canonical round trip");
    // A second write of the reloaded corpus is byte-identical.
    let (cp2, sp2) = (dir.path().join("c2.jsonl"), dir.path().join("s2.jsonl"));
    corpus::write_canonical(&cp2, &sp2, &back).unwrap();
    assert_eq!(std::fs::read(&cp).unwrap(), std::fs::read(&cp2).unwrap());
    assert_eq!(std::fs::read(&sp).unwrap(), std::fs::read(&sp2).unwrap());
    parsed
}

#[test]
fn fn_fixture_round_trips() {
    let parsed = round_trip("fn_sample.csv", Dataset::FN);
    assert_eq!(parsed.len(), 10);
    assert!(parsed.iter().all(|(_, s)| s.is_empty()));
    let fakes = parsed.iter().filter(|(c, _)| c.veracity == Veracity::Misinformation).count();
    assert_eq!(fakes, 5);
    assert!(parsed[8].0.text.contains("\"experts\""));
}

#[test]
fn re_fixture_round_trips() {
    let parsed = round_trip("re_sample.json", Dataset::RE);
    assert_eq!(parsed.len(), 10);
    assert_eq!(parsed[0].0.id, "1000");
    assert_eq!(parsed[2].0.veracity, Veracity::Unverified);
    // Query and comment replies carry no stance.
    assert_eq!(parsed[0].1.len(), 2);
    assert_eq!(parsed[4].1.len(), 1);
    assert_eq!(parsed[0].0.event_or_topic.as_deref(), Some("storm"));
}

#[test]
fn ss_fixture_round_trips() {
    let parsed = round_trip("ss_sample.tsv", Dataset::SS);
    assert_eq!(parsed.len(), 10);
    assert_eq!(parsed[3].0.id, "ss-4");
    for (_, stances) in &parsed {
        assert_eq!(stances.len(), 2);
        assert_eq!(stances[0].polarity, Polarity::Support);
        assert_eq!(stances[1].polarity, Polarity::Refute);
    }
}

#[test]
fn re_filter_keeps_claims_with_both_long_stances() {
    let parsed = corpus::parse_claims(&fixture("corpus/re_filter.json"), Dataset::RE).unwrap();
    let expected: Vec<String> =
        serde_json::from_str(&std::fs::read_to_string(fixture("corpus/re_filter_expected.json")).unwrap()).unwrap();
    let kept = corpus::filter_stances(&parsed, 10);
    let ids: Vec<&str> = kept.iter().map(|(c, _)| c.id.as_str()).collect();
    assert_eq!(ids, expected);
    assert!(kept
        .iter()
        .flat_map(|(_, s)| s)
        .all(|s| corpus::word_count(&s.text) >= 10));
    assert_eq!(corpus::filter_stances(&kept, 10), kept);
}

#[test]
fn malformed_inputs_name_the_record() {
    let err = corpus::parse_claims_str("headline,label\nfine,real\nbad,maybe\n", Dataset::FN).unwrap_err();
    assert!(matches!(err, corpus::CorpusError::UnknownLabel { record: 2, .. }), "{err}");
    let err = corpus::parse_claims_str("[{\"id\":1,\"source\":\"\",\"veracity\":\"true\"}]", Dataset::RE).unwrap_err();
    assert!(matches!(err, corpus::CorpusError::Malformed { record: 1, .. }), "{err}");
}
