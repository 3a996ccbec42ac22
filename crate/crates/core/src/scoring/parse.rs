//! Answer extraction from generated text.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::prompt::Label;

static STANDALONE_CHOICE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b[AB]\b").expect("valid regex"));
static STANDALONE_YES_NO: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(yes|no)\b").expect("valid regex"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChoiceOutcome {
    A,
    B,
    Unparseable,
}

impl ChoiceOutcome {
    pub fn label(self) -> Option<Label> {
        match self {
            ChoiceOutcome::A => Some(Label::A),
            ChoiceOutcome::B => Some(Label::B),
            ChoiceOutcome::Unparseable => None,
        }
    }

    /// Answer phrasings the choice prompts ask for, with `label` filled in.
    pub fn answer_templates(label: Label) -> Vec<String> {
        let l = label.as_str();
        vec![
            l.to_string(),
            format!("{l}."),
            format!("The correct caption is: {l}"),
            format!("The correct caption is: {l}."),
            format!("The answer is {l}"),
            format!("Answer: {l}"),
            format!("<{l}>"),
            format!(
                "The image shows a dog next to a bench. Caption {} mentions a cat. \
                 The correct caption is: {l}",
                label.other().as_str()
            ),
        ]
    }
}

/// The last standalone, case-sensitive `A` or `B` in `text`.
///
/// The few-shot prompt asks for reasoning first, so the final mention is
/// taken as the answer.
pub fn parse_choice(text: &str) -> ChoiceOutcome {
    match STANDALONE_CHOICE.find_iter(text).last().map(|m| m.as_str()) {
        Some("A") => ChoiceOutcome::A,
        Some("B") => ChoiceOutcome::B,
        _ => ChoiceOutcome::Unparseable,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum YesNo {
    Yes,
    No,
    Unparseable,
}

/// First standalone `yes` or `no`, case-insensitive.
///
/// This is the plain string-matching baseline. It misreads outputs where
/// "yes" refers to something other than the caption match.
pub fn parse_yes_no(text: &str) -> YesNo {
    match STANDALONE_YES_NO.captures(text) {
        Some(caps) if caps[1].eq_ignore_ascii_case("yes") => YesNo::Yes,
        Some(_) => YesNo::No,
        None => YesNo::Unparseable,
    }
}
