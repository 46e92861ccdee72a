//! Multiple-choice answer extraction and trajectory rewards.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Choice {
    pub label: String,
    pub text: String,
}

impl Choice {
    pub fn new(label: impl Into<String>, text: impl Into<String>) -> Self {
        Self { label: label.into(), text: text.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Extraction {
    pub label: String,
    /// True only when the answer came from a terminal `Final Answer: X` line.
    pub format_ok: bool,
}

/// Extracts a choice label from free-form model text.
///
/// Precedence:
/// 1. the last non-empty line reads `Final Answer: X` (optionally `(X)`);
/// 2. the whole reply is a bare label, or every `(X)` token names the same label;
/// 3. exactly one choice text occurs in the reply, case-insensitively.
pub fn extract_answer(text: &str, choices: &[Choice]) -> Option<Extraction> {
    let lookup = |cand: &str| -> Option<String> {
        choices.iter().find(|c| c.label.eq_ignore_ascii_case(cand)).map(|c| c.label.clone())
    };

    if let Some(last) = text.lines().map(str::trim).rfind(|l| !l.is_empty()) {
        if let Some(rest) = strip_prefix_ignore_case(last, "final answer:") {
            if let Some(label) = leading_label(rest).and_then(lookup) {
                return Some(Extraction { label, format_ok: true });
            }
        }
    }

    let trimmed = text.trim().trim_end_matches(['.', '!']).trim();
    let bare = trimmed.strip_prefix('(').and_then(|t| t.strip_suffix(')')).unwrap_or(trimmed);
    if let Some(label) = lookup(bare) {
        return Some(Extraction { label, format_ok: false });
    }
    let mut found: Option<String> = None;
    let mut conflict = false;
    for tok in parenthesized(text) {
        if let Some(label) = lookup(tok) {
            match &found {
                Some(f) if *f != label => conflict = true,
                _ => found = Some(label),
            }
        }
    }
    if let (Some(label), false) = (found, conflict) {
        return Some(Extraction { label, format_ok: false });
    }

    let haystack = text.to_lowercase();
    let mut hits = choices.iter().filter(|c| contains_phrase(&haystack, &c.text.trim().to_lowercase()));
    match (hits.next(), hits.next()) {
        (Some(c), None) => Some(Extraction { label: c.label.clone(), format_ok: false }),
        _ => None,
    }
}

/// Whole-word occurrence of `needle` in `haystack`.
fn contains_phrase(haystack: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    let boundary = |c: Option<char>| c.is_none_or(|c| !c.is_alphanumeric());
    haystack.match_indices(needle).any(|(i, _)| {
        boundary(haystack[..i].chars().next_back()) && boundary(haystack[i + needle.len()..].chars().next())
    })
}

fn strip_prefix_ignore_case<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    let head = s.get(..prefix.len())?;
    head.eq_ignore_ascii_case(prefix).then(|| &s[prefix.len()..])
}

/// First label-like token: `B`, `(B)`, `B.`, `B)`, `B: text`.
fn leading_label(s: &str) -> Option<&str> {
    let s = s.trim().trim_start_matches(['(', '[', '*']);
    let end = s.find(|c: char| !c.is_alphanumeric()).unwrap_or(s.len());
    (end > 0).then(|| &s[..end])
}

fn parenthesized(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('(') {
        let after = &rest[open + 1..];
        match after.find(')') {
            Some(close) => {
                let tok = after[..close].trim();
                if !tok.is_empty() && tok.len() <= 3 && tok.chars().all(char::is_alphanumeric) {
                    out.push(tok);
                }
                rest = &after[close + 1..];
            }
            None => break,
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RewardConfig {
    pub correct: f64,
    pub format_bonus: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { correct: 1.0, format_bonus: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RewardBreakdown {
    pub r_ans: f64,
    pub r_fmt: f64,
    pub total: f64,
}

/// Terminal reward: answer correctness plus a small formatting bonus.
pub fn reward(extracted: Option<&Extraction>, gold: &str) -> RewardBreakdown {
    reward_with(extracted, gold, &RewardConfig::default())
}

pub fn reward_with(extracted: Option<&Extraction>, gold: &str, cfg: &RewardConfig) -> RewardBreakdown {
    let r_ans = match extracted {
        Some(e) if e.label == gold => cfg.correct,
        _ => 0.0,
    };
    let r_fmt = if extracted.is_some_and(|e| e.format_ok) { cfg.format_bonus } else { 0.0 };
    RewardBreakdown { r_ans, r_fmt, total: r_ans + r_fmt }
}

/// Renders choices as `A. text` lines for prompts.
pub fn format_choices(choices: &[Choice]) -> String {
    let mut s = String::new();
    for c in choices {
        if !s.is_empty() {
            s.push('\n');
        }
        s.push_str(&c.label);
        s.push_str(". ");
        s.push_str(&c.text);
    }
    s
}

pub fn labels(n: usize) -> Vec<String> {
    (0..n).map(|i| char::from(b'A' + (i % 26) as u8).to_string()).collect()
}
