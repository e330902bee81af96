//! Classification prompt rendering and answer parsing.
//!
//! Prompts are assembled by concatenation so that text inside a description
//! can never be mistaken for a template macro. Rendering is byte-exact and
//! pure; golden files under `fixtures/prompts/` pin the output.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::taxonomy::AbuseType;
use crate::util::sha256_hex;

const PREAMBLE: &str = "You are a cybersecurity expert with extensive knowledge about scams and abuses. \
You will help me classify abuse reports given by users, based exclusively on the content of the given TEXT. \
Do not infer or assume facts that are not described in the TEXT.\n\
\n\
The following is a LIST OF DEFINITIONS of abuse classes. Read carefully the list and use it to classify \
the TEXT at the end, and to answer the QUESTION.\n\
\n\
### LIST OF DEFINITIONS ###\n";

const TEXT_HEADER: &str = "\n\nTEXT: ";

const QUESTION_HEAD: &str = "\n\nQUESTION: Given the LIST OF DEFINITIONS above, classify the TEXT in one of the following classes: ";

const QUESTION_TAIL: &str = ". Answer only with the name of the class that clearly matches one of these \
definitions and justify your answer by filling the next JSON structure: {\"answer\": \"\", \"reasoning\": \"\"}";

/// A "none of these" class injected into chained queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticClass {
    pub name: &'static str,
    pub definition: &'static str,
}

/// Offered at L2/L3 of top-to-bottom; selecting it falls back to the parent.
pub const TTB_OTHER: SyntheticClass = SyntheticClass {
    name: "ttb_other",
    definition: "The text does not match any of the other definitions.",
};

/// Offered at L3/L2 of bottom-to-top; selecting it ascends one level.
pub const BTT_OTHER: SyntheticClass = SyntheticClass {
    name: "btt_other",
    definition: "The text does not match any of the given definitions and may not even describe an abuse.",
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Single,
    L1,
    L2,
    L3,
}

impl Stage {
    pub fn for_level(level: u8) -> Stage {
        match level {
            1 => Stage::L1,
            2 => Stage::L2,
            _ => Stage::L3,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Single => "single",
            Stage::L1 => "l1",
            Stage::L2 => "l2",
            Stage::L3 => "l3",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptText {
    pub text: String,
    /// Class tokens offered, in prompt order.
    pub class_names: Vec<String>,
    pub stage: Stage,
}

impl PromptText {
    pub fn sha256(&self) -> String {
        sha256_hex(self.text.as_bytes())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("description text is empty")]
    EmptyDescription,
    #[error("class list is empty")]
    EmptyClassList,
}

/// Renders the classification query for one description.
///
/// The definition list holds one `name: definition` line per class in the
/// given order, followed by the synthetic class when present; the class list
/// names the same classes separated by `, `.
pub fn render_query(
    description_text: &str,
    classes: &[&AbuseType],
    synthetic: Option<&SyntheticClass>,
    stage: Stage,
) -> Result<PromptText, PromptError> {
    if description_text.trim().is_empty() {
        return Err(PromptError::EmptyDescription);
    }
    if classes.is_empty() {
        return Err(PromptError::EmptyClassList);
    }
    let mut entries: Vec<(&str, &str)> = classes
        .iter()
        .map(|c| (c.name.as_str(), c.definition.as_str()))
        .collect();
    if let Some(s) = synthetic {
        entries.push((s.name, s.definition));
    }

    let definition_list = entries
        .iter()
        .map(|(n, d)| format!("{n}: {d}"))
        .collect::<Vec<_>>()
        .join("\n");
    let class_names: Vec<String> = entries.iter().map(|(n, _)| n.to_string()).collect();

    let mut text = String::with_capacity(
        PREAMBLE.len() + definition_list.len() + description_text.len() + 512,
    );
    text.push_str(PREAMBLE);
    text.push_str(&definition_list);
    text.push_str(TEXT_HEADER);
    text.push_str(description_text);
    text.push_str(QUESTION_HEAD);
    text.push_str(&class_names.join(", "));
    text.push_str(QUESTION_TAIL);

    Ok(PromptText {
        text,
        class_names,
        stage,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAnswer {
    pub answer: String,
    pub reasoning: String,
    pub raw: String,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum AnswerError {
    #[error("no JSON object found in model output")]
    NoJsonObject { raw: String },
    #[error("model output has no string `answer` field")]
    MissingAnswer { raw: String },
    #[error("answer not in class list: `{answer}`")]
    NotInClassList { answer: String, raw: String },
}

impl AnswerError {
    pub fn raw(&self) -> &str {
        match self {
            AnswerError::NoJsonObject { raw }
            | AnswerError::MissingAnswer { raw }
            | AnswerError::NotInClassList { raw, .. } => raw,
        }
    }
}

/// Byte ranges of balanced `{...}` spans, in order of their opening brace.
/// Braces inside JSON string literals are ignored.
fn balanced_objects(raw: &str) -> impl Iterator<Item = &str> {
    let bytes = raw.as_bytes();
    let starts = bytes
        .iter()
        .enumerate()
        .filter(|(_, b)| **b == b'{')
        .map(|(i, _)| i)
        .collect::<Vec<_>>();
    starts.into_iter().filter_map(move |start| {
        let mut depth = 0usize;
        let mut in_string = false;
        let mut escaped = false;
        for (offset, &b) in bytes[start..].iter().enumerate() {
            if in_string {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_string = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_string = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(&raw[start..=start + offset]);
                    }
                }
                _ => {}
            }
        }
        None
    })
}

fn normalize_answer(answer: &str) -> String {
    let junk: &[char] = &['"', '\'', '`', '.'];
    let mut s = answer.trim().to_lowercase();
    loop {
        let next = s.trim_matches(junk).trim().to_string();
        if next == s {
            return s;
        }
        s = next;
    }
}

/// Extracts the model's class choice from free-form output.
///
/// The first balanced `{...}` span that parses as a JSON object is used; its
/// `answer` is normalized (trimmed, lowercased, surrounding quotes and
/// periods stripped) and must equal one of `allowed`.
pub fn parse_llm_answer(raw: &str, allowed: &[String]) -> Result<ParsedAnswer, AnswerError> {
    let object = balanced_objects(raw)
        .find_map(|span| match serde_json::from_str::<Value>(span) {
            Ok(Value::Object(map)) => Some(map),
            _ => None,
        })
        .ok_or_else(|| AnswerError::NoJsonObject { raw: raw.into() })?;

    let answer = match object.get("answer") {
        Some(Value::String(s)) => normalize_answer(s),
        _ => return Err(AnswerError::MissingAnswer { raw: raw.into() }),
    };
    let reasoning = match object.get("reasoning") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Null) | None => String::new(),
        Some(other) => other.to_string(),
    };
    if !allowed.contains(&answer) {
        return Err(AnswerError::NotInClassList {
            answer,
            raw: raw.into(),
        });
    }
    Ok(ParsedAnswer {
        answer,
        reasoning,
        raw: raw.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::{Selector, Taxonomy};

    fn allowed(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn l1_prompt_shape() {
        let t = Taxonomy::shipped();
        let l1 = t.classes_at(Selector::Level(1)).unwrap();
        let p = render_query("Send me 1 BTC", &l1, None, Stage::L1).unwrap();
        assert!(p.text.starts_with(
            "You are a cybersecurity expert with extensive knowledge about scams and abuses."
        ));
        assert!(p.text.ends_with(
            "justify your answer by filling the next JSON structure: {\"answer\": \"\", \"reasoning\": \"\"}"
        ));
        assert!(p.text.contains("classes: abuse, notabuse. Answer only"));
        assert!(p.text.contains("\nTEXT: Send me 1 BTC\n"));
        assert!(p.text.contains("### LIST OF DEFINITIONS ###\nabuse: An abuse report details"));
        assert_eq!(p.class_names, ["abuse", "notabuse"]);
    }

    #[test]
    fn synthetic_class_is_appended_last() {
        let t = Taxonomy::shipped();
        let kids = t.classes_at(Selector::ChildrenOf("extortion")).unwrap();
        let p = render_query("x", &kids, Some(&TTB_OTHER), Stage::L3).unwrap();
        assert_eq!(p.class_names.len(), 6);
        assert_eq!(p.class_names.last().unwrap(), "ttb_other");
        assert!(p
            .text
            .contains("\nttb_other: The text does not match any of the other definitions.\n\nTEXT: x"));
    }

    #[test]
    fn macros_in_description_are_not_expanded() {
        let t = Taxonomy::shipped();
        let l1 = t.classes_at(Selector::Level(1)).unwrap();
        let p = render_query("<class_list> <definition_list>", &l1, None, Stage::L1).unwrap();
        assert!(p.text.contains("TEXT: <class_list> <definition_list>\n"));
    }

    #[test]
    fn precondition_errors() {
        let t = Taxonomy::shipped();
        let l1 = t.classes_at(Selector::Level(1)).unwrap();
        assert_eq!(
            render_query("  ", &l1, None, Stage::L1).unwrap_err(),
            PromptError::EmptyDescription
        );
        assert_eq!(
            render_query("x", &[], None, Stage::L1).unwrap_err(),
            PromptError::EmptyClassList
        );
    }

    #[test]
    fn parses_case_variant_answer() {
        let a = parse_llm_answer(
            r#"{"answer": "Sextortion", "reasoning": "mentions webcam video"}"#,
            &allowed(&["sextortion", "bomb"]),
        )
        .unwrap();
        assert_eq!(a.answer, "sextortion");
        assert_eq!(a.reasoning, "mentions webcam video");
    }

    #[test]
    fn tolerates_prose_prefix() {
        let a = parse_llm_answer(
            r#"Sure! {"answer":"notabuse","reasoning":"ad"}"#,
            &allowed(&["abuse", "notabuse"]),
        )
        .unwrap();
        assert_eq!(a.answer, "notabuse");
    }

    #[test]
    fn strips_quotes_and_periods() {
        let a = parse_llm_answer(
            r#"{"answer": " 'Scam.' ", "reasoning": null}"#,
            &allowed(&["scam"]),
        )
        .unwrap();
        assert_eq!(a.answer, "scam");
        assert_eq!(a.reasoning, "");
    }

    #[test]
    fn braces_inside_strings_and_nested_objects() {
        let raw = r#"note {not json} then {"answer": "bomb", "reasoning": "says {boom}", "extra": {"k": 1}} trailing"#;
        let a = parse_llm_answer(raw, &allowed(&["bomb"])).unwrap();
        assert_eq!(a.answer, "bomb");
        assert_eq!(a.reasoning, "says {boom}");
    }

    #[test]
    fn answer_errors() {
        let l1 = allowed(&["abuse", "notabuse"]);
        assert!(matches!(
            parse_llm_answer(r#"{"answer":"phishing","reasoning":""}"#, &l1),
            Err(AnswerError::NotInClassList { ref answer, .. }) if answer == "phishing"
        ));
        assert!(matches!(
            parse_llm_answer("abuse", &l1),
            Err(AnswerError::NoJsonObject { .. })
        ));
        assert!(matches!(
            parse_llm_answer(r#"{"reasoning":"x"}"#, &l1),
            Err(AnswerError::MissingAnswer { .. })
        ));
        assert!(matches!(
            parse_llm_answer(r#"{"answer":"⊤"}"#, &l1),
            Err(AnswerError::NotInClassList { .. })
        ));
        let err = parse_llm_answer(r#"{"answer":"x"}"#, &l1).unwrap_err();
        assert_eq!(err.raw(), r#"{"answer":"x"}"#);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn any_case_variant_parses(idx in 0usize..19, flips in proptest::collection::vec(any::<bool>(), 32)) {
                let t = Taxonomy::shipped();
                let names: Vec<String> = t.types().iter().map(|x| x.name.clone()).collect();
                let token = &names[idx];
                let variant: String = token
                    .chars()
                    .zip(flips.iter().cycle())
                    .map(|(c, up)| if *up { c.to_ascii_uppercase() } else { c })
                    .collect();
                let raw = format!(r#"{{"answer":"{variant}","reasoning":""}}"#);
                let parsed = parse_llm_answer(&raw, &names).unwrap();
                prop_assert_eq!(&parsed.answer, token);
            }

            #[test]
            fn parsed_answers_are_allowed(raw in ".{0,80}") {
                let names = allowed(&["abuse", "notabuse"]);
                if let Ok(p) = parse_llm_answer(&raw, &names) {
                    prop_assert!(names.contains(&p.answer));
                }
            }

            #[test]
            fn rendering_is_pure(text in "[a-zA-Z0-9 .,!?]{1,60}") {
                prop_assume!(!text.trim().is_empty());
                let t = Taxonomy::shipped();
                let l2 = t.classes_at(Selector::Level(2)).unwrap();
                let a = render_query(&text, &l2, Some(&BTT_OTHER), Stage::L2).unwrap();
                let b = render_query(&text, &l2, Some(&BTT_OTHER), Stage::L2).unwrap();
                prop_assert_eq!(a, b);
            }
        }
    }
}
