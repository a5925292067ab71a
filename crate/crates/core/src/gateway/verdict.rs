use serde::{Deserialize, Serialize};

use crate::corpus::tokenize;

pub const TRUE_INFORMATION: &str = "true information";
pub const MISINFORMATION: &str = "misinformation";

/// A believe (`+1`) / disbelieve (`-1`) judgment parsed from model or human output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub value: i8,
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence_note: Option<String>,
}

impl Verdict {
    pub fn believes(&self) -> bool {
        self.value > 0
    }

    /// The response-format string for a `±1` value.
    pub fn canonical(value: i8) -> &'static str {
        if value > 0 {
            TRUE_INFORMATION
        } else {
            MISINFORMATION
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no verdict cue in response {0:?}")]
pub struct UnparseableVerdict(pub String);

fn first_sentence(text: &str) -> &str {
    let text = text.trim_start_matches(|c: char| !c.is_alphanumeric());
    let end = text.find(['.', '!', '?', '\n']).unwrap_or(text.len());
    &text[..end]
}

fn at_word_start(hay: &str, at: usize) -> bool {
    hay[..at]
        .chars()
        .next_back()
        .is_none_or(|c| !c.is_alphanumeric())
}

fn find_word(hay: &str, needle: &str) -> Option<usize> {
    hay.match_indices(needle)
        .map(|(i, _)| i)
        .find(|&i| at_word_start(hay, i))
}

fn note_after(sentence_rest: &str) -> Option<String> {
    let note = sentence_rest
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .trim();
    (!note.is_empty()).then(|| note.to_string())
}

/// Lexical verdict extraction from the leading sentence of a response.
///
/// "misinformation" and "true information" are looked for first, earliest
/// occurrence winning; failing both, the first of `false`/`fake` (−1) or
/// `true`/`real` (+1) among the sentence's tokens decides.
pub fn parse_verdict(text: &str) -> Result<Verdict, UnparseableVerdict> {
    let lowered = text.to_lowercase();
    let sentence = first_sentence(&lowered);
    let mis = find_word(sentence, MISINFORMATION).map(|i| (i, -1, MISINFORMATION.len()));
    let tru = find_word(sentence, TRUE_INFORMATION).map(|i| (i, 1, TRUE_INFORMATION.len()));
    let hit = match (mis, tru) {
        (Some(a), Some(b)) => Some(if a.0 <= b.0 { a } else { b }),
        (a, b) => a.or(b),
    };
    if let Some((at, value, len)) = hit {
        let start = sentence.as_ptr() as usize - lowered.as_ptr() as usize;
        // Lowercasing can change byte offsets for some scripts; fall back to the lowered copy.
        let source = if text.len() == lowered.len() { text } else { lowered.as_str() };
        let rest = source.get(start + at + len..).unwrap_or("");
        return Ok(Verdict {
            value,
            raw_text: text.to_string(),
            confidence_note: note_after(rest),
        });
    }
    for token in tokenize(sentence) {
        let value = match token.as_str() {
            "false" | "fake" => -1,
            "true" | "real" => 1,
            _ => continue,
        };
        return Ok(Verdict {
            value,
            raw_text: text.to_string(),
            confidence_note: None,
        });
    }
    Err(UnparseableVerdict(text.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_strings() {
        assert_eq!(parse_verdict("true information").unwrap().value, 1);
        assert_eq!(parse_verdict("misinformation").unwrap().value, -1);
        assert_eq!(parse_verdict("<True information>").unwrap().value, 1);
    }

    #[test]
    fn reasoned_misinformation() {
        let v = parse_verdict("Misinformation \u{2014} the argument is based on emotional appeal").unwrap();
        assert_eq!(v.value, -1);
        assert_eq!(v.confidence_note.as_deref(), Some("the argument is based on emotional appeal"));
    }

    #[test]
    fn earliest_cue_wins() {
        assert_eq!(
            parse_verdict("This is misinformation, not true information").unwrap().value,
            -1
        );
        assert_eq!(
            parse_verdict("True information, although some call it misinformation").unwrap().value,
            1
        );
    }

    #[test]
    fn fallback_cues_in_first_sentence() {
        assert_eq!(parse_verdict("I think it is fake. Really true.").unwrap().value, -1);
        assert_eq!(parse_verdict("Seems real to me").unwrap().value, 1);
        assert!(parse_verdict("Hard to say. It is true.").is_err());
    }

    #[test]
    fn no_cue_is_an_error() {
        assert!(parse_verdict("I cannot decide").is_err());
        assert!(parse_verdict("").is_err());
    }

    #[test]
    fn untrue_is_not_true_information() {
        assert!(parse_verdict("untrue information").is_err());
    }
}
