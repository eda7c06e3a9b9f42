//! Quote verification against the hidden story.
//!
//! Agents claim quotes by wrapping them in `<quote>...</quote>` tags. The
//! verifier re-tags each claim: content found in the story (under the
//! configured normalization) keeps its `<quote>` wrapping, content not found
//! is re-wrapped as `<invalid_quote>...</invalid_quote>`. Everything outside
//! claimed regions passes through byte-identical, so the judge can trust
//! exactly the tagged material.

use super::types::{ProtocolConfig, QuoteNormalization, QuoteSpan};

const OPEN_TAG: &str = "<quote>";
const CLOSE_TAG: &str = "</quote>";
const INVALID_OPEN: &str = "<invalid_quote>";
const INVALID_CLOSE: &str = "</invalid_quote>";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum QuoteError {
    #[error("unbalanced quote delimiter at byte offset {offset}: {kind}")]
    Unbalanced { offset: usize, kind: &'static str },
}

/// Collapses Unicode whitespace runs to single spaces and trims the ends.
///
/// This is the `whitespace_collapsed` matching mode: claimed quotes survive
/// line-wrap and indentation differences but remain case-sensitive.
pub fn normalize_for_match(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_space = true; // leading whitespace is dropped
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !in_space {
                out.push(' ');
                in_space = true;
            }
        } else {
            out.push(ch);
            in_space = false;
        }
    }
    if out.ends_with(' ') {
        out.pop();
    }
    out
}

fn quote_matches(claim: &str, story: &str, mode: QuoteNormalization) -> bool {
    match mode {
        QuoteNormalization::Exact => story.contains(claim),
        QuoteNormalization::WhitespaceCollapsed => {
            normalize_for_match(story).contains(&normalize_for_match(claim))
        }
    }
}

/// Alternating plain and claimed-quote segments of a raw speech.
struct ParsedClaims<'a> {
    /// `(plain_before, claim)` pairs, in order.
    segments: Vec<(&'a str, &'a str)>,
    trailing: &'a str,
}

fn parse_claims(raw_text: &str) -> Result<ParsedClaims<'_>, QuoteError> {
    let mut segments = Vec::new();
    let mut rest_start = 0usize;
    loop {
        let rest = &raw_text[rest_start..];
        let next_open = rest.find(OPEN_TAG);
        let next_close = rest.find(CLOSE_TAG);
        match (next_open, next_close) {
            (None, None) => {
                return Ok(ParsedClaims {
                    segments,
                    trailing: rest,
                })
            }
            (None, Some(close)) => {
                return Err(QuoteError::Unbalanced {
                    offset: rest_start + close,
                    kind: "closing tag without a matching opening tag",
                })
            }
            (Some(open), Some(close)) if close < open => {
                return Err(QuoteError::Unbalanced {
                    offset: rest_start + close,
                    kind: "closing tag without a matching opening tag",
                })
            }
            (Some(open), maybe_close) => {
                let content_start = open + OPEN_TAG.len();
                let after_open = &rest[content_start..];
                let close_in_content = maybe_close
                    .map(|c| c - content_start)
                    .or_else(|| after_open.find(CLOSE_TAG));
                let Some(close_rel) = close_in_content else {
                    return Err(QuoteError::Unbalanced {
                        offset: rest_start + open,
                        kind: "opening tag without a matching closing tag",
                    });
                };
                let content = &after_open[..close_rel];
                if let Some(nested) = content.find(OPEN_TAG) {
                    return Err(QuoteError::Unbalanced {
                        offset: rest_start + content_start + nested,
                        kind: "nested opening tag inside a quote",
                    });
                }
                segments.push((&rest[..open], content));
                rest_start += content_start + close_rel + CLOSE_TAG.len();
            }
        }
    }
}

/// Verifies every claimed quote in `raw_text` against `story`.
///
/// Returns the re-tagged text and one [`QuoteSpan`] per claim, in order;
/// spans index the quoted content inside the returned text. Unbalanced
/// delimiters are an error naming the byte offset.
pub fn verify_quotes(
    raw_text: &str,
    story: &str,
    config: &ProtocolConfig,
) -> Result<(String, Vec<QuoteSpan>), QuoteError> {
    let parsed = parse_claims(raw_text)?;
    let mut verified = String::with_capacity(raw_text.len());
    let mut spans = Vec::with_capacity(parsed.segments.len());
    for (plain, claim) in parsed.segments {
        verified.push_str(plain);
        let valid = quote_matches(claim, story, config.quote_normalization);
        verified.push_str(if valid { OPEN_TAG } else { INVALID_OPEN });
        let start = verified.len();
        verified.push_str(claim);
        spans.push(QuoteSpan {
            start,
            end: verified.len(),
            valid,
        });
        verified.push_str(if valid { CLOSE_TAG } else { INVALID_CLOSE });
    }
    verified.push_str(parsed.trailing);
    Ok((verified, spans))
}
