use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Verdict;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedEvaluation {
    pub verdict: Verdict,
    pub rationale: String,
    pub raw_reply: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FailureReason {
    NoEvaluationLine,
    BadToken(String),
    Conflicting,
    NoRationale,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("unparseable reply ({reason:?}): {raw_reply:?}")]
pub struct ParseFailure {
    pub reason: FailureReason,
    pub raw_reply: String,
}

fn label_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^[\s*_#>\-]*(evaluation|rationale)[\s*_]*:[\s*_]*(.*)$").expect("valid regex"))
}

fn verdict_token(text: &str) -> Result<Verdict, FailureReason> {
    let cleaned = text.trim_matches(|c: char| !c.is_alphanumeric());
    match cleaned.to_ascii_uppercase().as_str() {
        "ACCEPTABLE" => Ok(Verdict::Acceptable),
        "UNACCEPTABLE" => Ok(Verdict::Unacceptable),
        _ => Err(FailureReason::BadToken(text.trim().to_string())),
    }
}

/// Parses the two-line `Evaluation:` / `Rationale:` reply format.
///
/// Labels match case-insensitively and tolerate surrounding whitespace and
/// markdown emphasis. The rationale runs from its label to the next label
/// line or the end of the reply. Repeated evaluation lines must agree.
pub fn parse_evaluation(reply: &str) -> Result<ParsedEvaluation, ParseFailure> {
    let fail = |reason| ParseFailure {
        reason,
        raw_reply: reply.to_string(),
    };
    let mut verdict: Option<Verdict> = None;
    let mut rationale: Option<Vec<&str>> = None;
    let mut in_rationale = false;

    for line in reply.lines() {
        if let Some(caps) = label_re().captures(line) {
            let rest = caps.get(2).map_or("", |m| m.as_str());
            if caps[1].eq_ignore_ascii_case("evaluation") {
                in_rationale = false;
                let v = verdict_token(rest).map_err(fail)?;
                match verdict {
                    Some(prev) if prev != v => return Err(fail(FailureReason::Conflicting)),
                    _ => verdict = Some(v),
                }
            } else {
                in_rationale = true;
                rationale.get_or_insert_with(Vec::new).push(rest);
            }
        } else if in_rationale {
            if let Some(parts) = rationale.as_mut() {
                parts.push(line);
            }
        }
    }

    let verdict = verdict.ok_or_else(|| fail(FailureReason::NoEvaluationLine))?;
    let rationale = rationale
        .map(|parts| parts.join("\n").trim().trim_end_matches(['*', '_']).trim().to_string())
        .filter(|r| !r.is_empty())
        .ok_or_else(|| fail(FailureReason::NoRationale))?;
    Ok(ParsedEvaluation {
        verdict,
        rationale,
        raw_reply: reply.to_string(),
    })
}
