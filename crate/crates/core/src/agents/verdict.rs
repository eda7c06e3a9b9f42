//! Verdict extraction from judge readouts.
//!
//! The judge either exposes token-level probabilities for the two debater
//! names or emits a verdict line of the form `Debater_A | 91%`. Name
//! probabilities are renormalized over the pair; the pairwise ratio is the
//! calibrated signal, since other tokens absorb probability mass
//! arbitrarily.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::protocol::{Assignment, DebaterName, Verdict};

/// Raw judge output before verdict extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeReadout {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name_token_probs: Option<BTreeMap<DebaterName, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict_line: Option<String>,
}

impl JudgeReadout {
    pub fn from_probs(p_a: f64, p_b: f64) -> JudgeReadout {
        let mut map = BTreeMap::new();
        map.insert(DebaterName::A, p_a);
        map.insert(DebaterName::B, p_b);
        JudgeReadout {
            name_token_probs: Some(map),
            verdict_line: None,
        }
    }

    pub fn from_line(line: impl Into<String>) -> JudgeReadout {
        JudgeReadout {
            name_token_probs: None,
            verdict_line: Some(line.into()),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum VerdictError {
    #[error("readout carries neither usable name probabilities nor a verdict line")]
    Empty,
    #[error("name probability for {0} is negative or non-finite")]
    BadProbability(DebaterName),
    #[error("cannot parse verdict line {0:?}")]
    Unparseable(String),
}

/// An extracted verdict plus non-fatal notes (e.g. clamping).
#[derive(Debug, Clone, PartialEq)]
pub struct VerdictExtraction {
    pub verdict: Verdict,
    pub warnings: Vec<String>,
}

fn from_probs(
    probs: &BTreeMap<DebaterName, f64>,
    assignment: &Assignment,
) -> Result<Option<VerdictExtraction>, VerdictError> {
    let p_a = probs.get(&DebaterName::A).copied().unwrap_or(0.0);
    let p_b = probs.get(&DebaterName::B).copied().unwrap_or(0.0);
    for (name, p) in [(DebaterName::A, p_a), (DebaterName::B, p_b)] {
        if !p.is_finite() || p < 0.0 {
            return Err(VerdictError::BadProbability(name));
        }
    }
    let total = p_a + p_b;
    if total <= 0.0 {
        // No mass on either name; let the caller fall back to the line.
        return Ok(None);
    }
    let (chosen, tie) = if p_a > p_b {
        (DebaterName::A, false)
    } else if p_b > p_a {
        (DebaterName::B, false)
    } else {
        (DebaterName::first(), true)
    };
    let p_chosen = if chosen == DebaterName::A { p_a } else { p_b };
    let mut verdict = Verdict::new(chosen, (p_chosen / total).clamp(0.5, 1.0), assignment);
    verdict.tie = tie;
    Ok(Some(VerdictExtraction {
        verdict,
        warnings: Vec::new(),
    }))
}

fn from_line(line: &str, assignment: &Assignment) -> Result<VerdictExtraction, VerdictError> {
    let has_a = line.contains(DebaterName::A.as_str());
    let has_b = line.contains(DebaterName::B.as_str());
    let chosen = match (has_a, has_b) {
        (true, false) => DebaterName::A,
        (false, true) => DebaterName::B,
        _ => return Err(VerdictError::Unparseable(line.to_string())),
    };
    // Percentage: first numeric token after the name (the `| NN%` part).
    let after_name = &line[line.find(chosen.as_str()).expect("checked above")
        + chosen.as_str().len()..];
    let mut number = String::new();
    for ch in after_name.chars() {
        if ch.is_ascii_digit() || (ch == '.' && number.contains(|c: char| c.is_ascii_digit())) {
            number.push(ch);
        } else if !number.is_empty() {
            break;
        }
    }
    let percent: f64 = number
        .parse()
        .map_err(|_| VerdictError::Unparseable(line.to_string()))?;
    let mut warnings = Vec::new();
    if !(50.0..=100.0).contains(&percent) {
        warnings.push(format!(
            "confidence {percent}% outside [50, 100]; clamped"
        ));
    }
    let confidence = (percent / 100.0).clamp(0.5, 1.0);
    Ok(VerdictExtraction {
        verdict: Verdict::new(chosen, confidence, assignment),
        warnings,
    })
}

/// Turns a judge readout into a [`Verdict`] for the round's assignment.
///
/// Prefers token-level name probabilities (argmax name, confidence
/// renormalized over the pair and clamped into `[0.5, 1]`; exact ties go to
/// the lexicographically first name with a tie flag) and falls back to
/// parsing the verdict line.
pub fn extract_verdict(
    readout: &JudgeReadout,
    assignment: &Assignment,
) -> Result<VerdictExtraction, VerdictError> {
    if let Some(probs) = &readout.name_token_probs {
        if let Some(extraction) = from_probs(probs, assignment)? {
            return Ok(extraction);
        }
    }
    match &readout.verdict_line {
        Some(line) => from_line(line, assignment),
        None => Err(VerdictError::Empty),
    }
}
