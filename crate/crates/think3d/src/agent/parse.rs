//! Tool-call grammar: a single `<tool>{json}</tool>` block in model output.

use crate::toolkit::Action;

pub const OPEN: &str = "<tool>";
pub const CLOSE: &str = "</tool>";

#[derive(Debug, Clone, PartialEq)]
pub enum Parsed {
    /// No tool block.
    Absent,
    Action(Action),
    /// A block was present but could not be used.
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseOutcome {
    pub parsed: Parsed,
    /// The output with the tool block removed.
    pub reasoning: String,
}

pub fn parse_action(output: &str) -> ParseOutcome {
    let Some(open) = output.find(OPEN) else {
        let parsed = if output.contains(CLOSE) { Parsed::Malformed(format!("'{CLOSE}' without '{OPEN}'")) } else { Parsed::Absent };
        return ParseOutcome { parsed, reasoning: output.trim().to_owned() };
    };
    let body_start = open + OPEN.len();
    let Some(close_rel) = output[body_start..].find(CLOSE) else {
        return ParseOutcome { parsed: Parsed::Malformed(format!("unterminated {OPEN} block")), reasoning: output[..open].trim().to_owned() };
    };
    let close = body_start + close_rel;
    let rest = &output[close + CLOSE.len()..];
    let reasoning = format!("{} {}", output[..open].trim(), rest.trim()).trim().to_owned();
    if rest.contains(OPEN) {
        return ParseOutcome { parsed: Parsed::Malformed("only one tool call is allowed per round".into()), reasoning };
    }
    let body = strip_code_fence(output[body_start..close].trim());
    let parsed = match serde_json::from_str::<Action>(body) {
        Ok(a) => match validate(&a) {
            Ok(()) => Parsed::Action(a),
            Err(m) => Parsed::Malformed(m),
        },
        Err(e) => Parsed::Malformed(format!("invalid tool JSON: {e}")),
    };
    ParseOutcome { parsed, reasoning }
}

fn strip_code_fence(s: &str) -> &str {
    let Some(inner) = s.strip_prefix("```") else { return s };
    let inner = inner.strip_prefix("json").unwrap_or(inner);
    inner.strip_suffix("```").unwrap_or(inner).trim()
}

fn validate(a: &Action) -> Result<(), String> {
    if let Action::View { azimuth, elevation, .. } = a {
        if !(azimuth.is_finite() && elevation.is_finite()) {
            return Err("angles must be finite numbers".into());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use think3d_core::RenderMode;

    #[test]
    fn view_block() {
        let o = parse_action(
            "I will look from above. <tool>{\"kind\":\"view\",\"anchor\":2,\"mode\":\"global\",\"azimuth\":0,\"elevation\":60}</tool>",
        );
        assert_eq!(o.parsed, Parsed::Action(Action::view(2, RenderMode::Global, 0.0, 60.0)));
        assert_eq!(o.reasoning, "I will look from above.");
    }

    #[test]
    fn no_block_is_absent() {
        assert_eq!(parse_action("The answer is B.").parsed, Parsed::Absent);
    }

    #[test]
    fn malformed_json() {
        assert!(matches!(parse_action("<tool>{\"kind\":\"view\", anchor}</tool>").parsed, Parsed::Malformed(_)));
    }

    #[test]
    fn trailing_text_kept() {
        let o = parse_action("<tool>{\"kind\":\"reconstruct\"}</tool> then I will compare views");
        assert_eq!(o.parsed, Parsed::Action(Action::Reconstruct));
        assert_eq!(o.reasoning, "then I will compare views");
    }

    #[test]
    fn edge_cases() {
        assert!(matches!(parse_action("<tool>{\"kind\":\"reconstruct\"}").parsed, Parsed::Malformed(_)));
        assert!(matches!(parse_action("x </tool>").parsed, Parsed::Malformed(_)));
        let two = "<tool>{\"kind\":\"reconstruct\"}</tool><tool>{\"kind\":\"reconstruct\"}</tool>";
        assert!(matches!(parse_action(two).parsed, Parsed::Malformed(m) if m.contains("one tool call")));
        let fenced = "<tool>\n```json\n{\"kind\":\"answer\",\"text\":\"C\"}\n```\n</tool>";
        assert_eq!(parse_action(fenced).parsed, Parsed::Action(Action::Answer { text: "C".into() }));
    }
}
