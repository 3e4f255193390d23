//! Recovers structured answers from free-form model output.
//!
//! Prompts ask for reasoning followed by `Final answer:` and a JSON payload,
//! but models wrap, repeat and decorate payloads freely. Extraction scans the
//! text for every top-level JSON value and keeps the last one that fits the
//! schema of the prompt tag.

use std::collections::BTreeMap;

use serde_json::Value;
use thiserror::Error;

use super::PromptTag;
use crate::domain::FactorLabel;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no {schema} payload: {reason}")]
pub struct ParseError {
    pub schema: &'static str,
    pub reason: String,
}

impl ParseError {
    fn new(schema: &'static str, reason: impl Into<String>) -> Self {
        ParseError {
            schema,
            reason: reason.into(),
        }
    }
}

/// A parsed answer, one variant per response schema.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Lines(Vec<String>),
    Strings(Vec<String>),
    Labels(BTreeMap<String, FactorLabel>),
    Probabilities(BTreeMap<String, f64>),
    Latents(Vec<(String, Vec<String>)>),
    Pairs(BTreeMap<String, (f64, f64)>),
    Text(String),
}

/// Parses `raw` with the schema implied by `tag`.
pub fn extract_structured(raw: &str, tag: PromptTag) -> Result<Payload, ParseError> {
    Ok(match tag {
        PromptTag::SentenceGen => Payload::Lines(lines(raw)?),
        PromptTag::FactorExtract | PromptTag::Prune | PromptTag::MapVote | PromptTag::Reflect => {
            Payload::Strings(string_array(raw)?)
        }
        PromptTag::LabelVote => Payload::Labels(label_map(raw)?),
        PromptTag::Theme => Payload::Text(theme(raw)?),
        PromptTag::PhiElicit => Payload::Probabilities(probability_map(raw)?),
        PromptTag::LatentDiscover => Payload::Latents(latents(raw)?),
        PromptTag::LatentElicit => Payload::Pairs(pair_map(raw)?),
    })
}

/// Every top-level JSON object or array in `raw`, left to right.
pub fn json_values(raw: &str) -> Vec<Value> {
    let mut out = Vec::new();
    let mut resume = 0;
    for (i, c) in raw.char_indices() {
        if i < resume || (c != '{' && c != '[') {
            continue;
        }
        let mut stream = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Value>();
        if let Some(Ok(value)) = stream.next() {
            resume = i + stream.byte_offset();
            out.push(value);
        }
    }
    out
}

fn last_matching<T>(
    raw: &str,
    schema: &'static str,
    mut convert: impl FnMut(&Value) -> Option<Result<T, ParseError>>,
) -> Result<T, ParseError> {
    json_values(raw)
        .iter()
        .rev()
        .find_map(&mut convert)
        .unwrap_or_else(|| Err(ParseError::new(schema, "no matching JSON value")))
}

fn strings_of(value: &Value) -> Option<Vec<String>> {
    value
        .as_array()?
        .iter()
        .map(|v| v.as_str().map(|s| s.trim().to_string()))
        .collect()
}

/// A JSON array of strings, or an object `{"answer": [...]}`.
pub fn string_array(raw: &str) -> Result<Vec<String>, ParseError> {
    last_matching(raw, "string array", |v| {
        let list = match v {
            Value::Array(_) => strings_of(v),
            Value::Object(map) => map.get("answer").and_then(strings_of),
            _ => None,
        }?;
        Some(Ok(list.into_iter().filter(|s| !s.is_empty()).collect()))
    })
}

pub fn parse_label(word: &str) -> Option<FactorLabel> {
    let w: String = word
        .chars()
        .filter(|c| c.is_alphanumeric())
        .collect::<String>()
        .to_lowercase();
    match w.as_str() {
        "outcome1" | "o1" | "supportsoutcome1" | "supportso1" => Some(FactorLabel::SupportsO1),
        "outcome2" | "o2" | "supportsoutcome2" | "supportso2" => Some(FactorLabel::SupportsO2),
        "both" | "neutral" | "neither" | "none" => Some(FactorLabel::Neutral),
        _ => None,
    }
}

/// Object of factor name to outcome label; `Both` reads as neutral.
pub fn label_map(raw: &str) -> Result<BTreeMap<String, FactorLabel>, ParseError> {
    last_matching(raw, "label map", |v| {
        let map = v.as_object().filter(|m| !m.is_empty())?;
        map.iter()
            .map(|(k, v)| Some((k.trim().to_string(), parse_label(v.as_str()?)?)))
            .collect::<Option<BTreeMap<_, _>>>()
            .map(Ok)
    })
}

fn probability(schema: &'static str, key: &str, v: &Value) -> Result<f64, ParseError> {
    let p = v.as_f64().unwrap_or(f64::NAN);
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(ParseError::new(schema, format!("{key:?} = {v} is not a probability")))
    }
}

/// Object of factor name to probability in `[0, 1]`.
pub fn probability_map(raw: &str) -> Result<BTreeMap<String, f64>, ParseError> {
    const SCHEMA: &str = "probability map";
    last_matching(raw, SCHEMA, |v| {
        let map = v.as_object().filter(|m| !m.is_empty())?;
        if !map.values().all(Value::is_number) {
            return None;
        }
        Some(
            map.iter()
                .map(|(k, v)| Ok((k.trim().to_string(), probability(SCHEMA, k, v)?)))
                .collect(),
        )
    })
}

/// `{"latents": [{"name": ..., "factors": [...]}, ...]}`.
pub fn latents(raw: &str) -> Result<Vec<(String, Vec<String>)>, ParseError> {
    last_matching(raw, "latent list", |v| {
        let list = v.as_object()?.get("latents")?.as_array()?;
        let parsed = list
            .iter()
            .map(|item| {
                let obj = item.as_object()?;
                let name = obj.get("name")?.as_str()?.trim().to_string();
                Some((name, strings_of(obj.get("factors")?)?))
            })
            .collect::<Option<Vec<_>>>()?;
        Some(Ok(parsed))
    })
}

/// Object of latent name to `[p1, p0]`.
pub fn pair_map(raw: &str) -> Result<BTreeMap<String, (f64, f64)>, ParseError> {
    const SCHEMA: &str = "probability pair map";
    last_matching(raw, SCHEMA, |v| {
        let map = v.as_object().filter(|m| !m.is_empty())?;
        let shaped = map.values().all(|p| {
            p.as_array()
                .is_some_and(|a| a.len() == 2 && a.iter().all(Value::is_number))
        });
        if !shaped {
            return None;
        }
        Some(
            map.iter()
                .map(|(k, v)| {
                    let a = v.as_array().expect("checked above");
                    Ok((
                        k.trim().to_string(),
                        (probability(SCHEMA, k, &a[0])?, probability(SCHEMA, k, &a[1])?),
                    ))
                })
                .collect(),
        )
    })
}

fn strip_list_marker(line: &str) -> &str {
    let line = line.trim();
    let digits = line.len() - line.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    let rest = &line[digits..];
    let rest = if digits > 0 {
        rest.strip_prefix(['.', ')', ':']).unwrap_or(rest)
    } else {
        rest.strip_prefix(['-', '*', '•']).unwrap_or(rest)
    };
    rest.trim()
}

/// Non-empty lines with list numbering and bullets removed.
pub fn lines(raw: &str) -> Result<Vec<String>, ParseError> {
    let out: Vec<String> = raw
        .lines()
        .map(strip_list_marker)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    if out.is_empty() {
        Err(ParseError::new("sentence list", "empty response"))
    } else {
        Ok(out)
    }
}

const MAX_THEME_WORDS: usize = 3;

/// A short theme name: the last non-empty line, unquoted, at most three words.
pub fn theme(raw: &str) -> Result<String, ParseError> {
    let tail = raw.rsplit_once("Final answer:").map_or(raw, |(_, t)| t);
    let line = tail
        .lines()
        .map(str::trim)
        .rfind(|l| !l.is_empty())
        .ok_or_else(|| ParseError::new("theme", "empty response"))?;
    let line = line.strip_prefix("Theme:").unwrap_or(line);
    let cleaned = line.trim_matches(|c: char| {
        c.is_whitespace() || matches!(c, '"' | '\'' | '`' | '*' | '.' | '[' | ']')
    });
    let words: Vec<&str> = cleaned.split_whitespace().take(MAX_THEME_WORDS).collect();
    if words.is_empty() {
        return Err(ParseError::new("theme", "no words"));
    }
    Ok(words.join(" "))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn final_answer_array_after_reasoning() {
        let raw = "Let me analyze these sentences:\n• Pace consistency\nFinal answer: \
                   [\"Pace consistency\",\"Heart rate monitoring\",\"Adjustable incline\",\"Leg strength\"]";
        assert_eq!(
            extract_structured(raw, PromptTag::FactorExtract).unwrap(),
            Payload::Strings(vec![
                "Pace consistency".into(),
                "Heart rate monitoring".into(),
                "Adjustable incline".into(),
                "Leg strength".into()
            ])
        );
    }

    #[test]
    fn last_payload_wins() {
        let raw = r#"Draft: ["x"] then revised. Final answer: ["A","B"]"#;
        assert_eq!(string_array(raw).unwrap(), vec!["A", "B"]);
        let raw = r#"Final answer: {"answer": ["Better time management"]}"#;
        assert_eq!(string_array(raw).unwrap(), vec!["Better time management"]);
    }

    #[test]
    fn label_votes_map_both_to_neutral() {
        let raw = r#"Pace forces a steady speed. Final answer: {"Pace consistency": "Outcome1"}"#;
        assert_eq!(
            label_map(raw).unwrap(),
            BTreeMap::from([("Pace consistency".to_string(), FactorLabel::SupportsO1)])
        );
        let raw = r#"{"Weather conditions": "Both"}"#;
        assert_eq!(label_map(raw).unwrap()["Weather conditions"], FactorLabel::Neutral);
        assert!(label_map(r#"{"x": "Maybe"}"#).is_err());
    }

    #[test]
    fn probabilities_outside_unit_interval_are_rejected() {
        let raw = r#"Thought: LEDs win. Final answer: {"Energy consumption per hour": 0.95, "Initial cost per bulb": 0.30}"#;
        let m = probability_map(raw).unwrap();
        assert_eq!(m["Energy consumption per hour"], 0.95);
        assert!(probability_map(r#"{"a": 1.7}"#).is_err());
        assert!(probability_map(r#"{"a": -0.1}"#).is_err());
    }

    #[test]
    fn latent_lists_and_pairs() {
        let raw = r#"Thought: health vs enjoyment.
Final answer:
{
"latents": [
  {"name": "HealthLat",   "factors": ["Nutrition","Vitamins"]},
  {"name": "EnjoyLat",    "factors": ["Taste","Convenience"]}
]
}"#;
        let l = latents(raw).unwrap();
        assert_eq!(l[0], ("HealthLat".into(), vec!["Nutrition".into(), "Vitamins".into()]));
        assert_eq!(l[1].0, "EnjoyLat");

        let raw = r#"Final answer: {"Performance": [0.85, 0.15], "Stability": [0.30, 0.70]}"#;
        let p = pair_map(raw).unwrap();
        assert_eq!(p["Performance"], (0.85, 0.15));
        assert!(pair_map(r#"{"x": [1.2, 0.1]}"#).is_err());
    }

    #[test]
    fn sentences_lose_their_numbering() {
        let raw = "1. Treadmill training keeps a consistent pace.\n\n2) The incline builds leg strength.\n- bullet";
        assert_eq!(
            lines(raw).unwrap(),
            vec![
                "Treadmill training keeps a consistent pace.",
                "The incline builds leg strength.",
                "bullet"
            ]
        );
        assert!(lines("  \n ").is_err());
    }

    #[test]
    fn themes_are_short_and_clean() {
        assert_eq!(theme("Energy Efficiency").unwrap(), "Energy Efficiency");
        assert_eq!(theme("\"Control Precision\"\n").unwrap(), "Control Precision");
        assert_eq!(theme("Final answer: Safety and Hygiene Practices").unwrap(), "Safety and Hygiene");
        assert!(theme("  ").is_err());
    }

    #[test]
    fn no_payload_is_an_error() {
        for tag in [PromptTag::FactorExtract, PromptTag::LabelVote, PromptTag::PhiElicit] {
            assert!(extract_structured("no payload here", tag).is_err());
        }
    }

    #[test]
    fn extraction_is_idempotent_on_payloads() {
        for raw in [r#"["A","B"]"#, r#"{"a": 0.25}"#, r#"{"L": [0.5, 0.5]}"#] {
            let once = json_values(raw);
            let again = json_values(&once[0].to_string());
            assert_eq!(once, again);
        }
    }
}
