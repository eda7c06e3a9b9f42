//! Style metrics over verified transcripts: how much a model quotes and
//! how much of its final-turn quoting is recycled from its opening speech,
//! plus the cross-judge win-rate correlation harness.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::protocol::{normalize_for_match, DebaterName, Transcript};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleReport {
    pub checkpoint_id: String,
    /// Whitespace-delimited words inside valid quote tags, averaged over
    /// all speeches.
    pub mean_quoted_words_per_speech: f64,
    /// Fraction of turn-2 quoted word occurrences whose containing quote
    /// also appears (normalized) among the same speaker's turn-1 quotes.
    /// Absent when no transcript has a quoted turn-2 word.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeated_quote_fraction_turn2: Option<f64>,
    /// Pearson correlation between per-checkpoint win rates under two
    /// different judges; filled by the transfer harness.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross_judge_winrate_correlation: Option<f64>,
}

fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Computes quoting statistics over a set of transcripts.
pub fn style_metrics(transcripts: &[Transcript], checkpoint_id: &str) -> StyleReport {
    let mut total_quoted_words = 0usize;
    let mut total_speeches = 0usize;
    let mut repeated_words = 0usize;
    let mut turn2_words = 0usize;
    for transcript in transcripts {
        total_speeches += transcript.speeches.len();
        for speech in &transcript.speeches {
            total_quoted_words += speech.valid_quotes().map(word_count).sum::<usize>();
        }
        for author in [DebaterName::A, DebaterName::B] {
            let turn1_quotes: BTreeSet<String> = transcript
                .speeches_by(author)
                .filter(|s| s.turn == 0)
                .flat_map(|s| s.valid_quotes())
                .map(normalize_for_match)
                .collect();
            for speech in transcript.speeches_by(author).filter(|s| s.turn == 1) {
                for quote in speech.valid_quotes() {
                    let words = word_count(quote);
                    turn2_words += words;
                    if turn1_quotes.contains(&normalize_for_match(quote)) {
                        repeated_words += words;
                    }
                }
            }
        }
    }
    StyleReport {
        checkpoint_id: checkpoint_id.to_string(),
        mean_quoted_words_per_speech: if total_speeches == 0 {
            0.0
        } else {
            total_quoted_words as f64 / total_speeches as f64
        },
        repeated_quote_fraction_turn2: (turn2_words > 0)
            .then(|| repeated_words as f64 / turn2_words as f64),
        cross_judge_winrate_correlation: None,
    }
}

/// Cross-judge transfer: Pearson correlation between the per-model implied
/// win rates under two different judges. Models present in only one table
/// are skipped.
pub fn cross_judge_correlation(
    table_a: &crate::eval::EloTable,
    table_b: &crate::eval::EloTable,
) -> Option<f64> {
    let mut rates_a = Vec::new();
    let mut rates_b = Vec::new();
    for model in table_a.ratings.keys() {
        if !table_b.ratings.contains_key(model) {
            continue;
        }
        rates_a.push(crate::eval::implied_winrate(table_a, model).ok()?);
        rates_b.push(crate::eval::implied_winrate(table_b, model).ok()?);
    }
    pearson(&rates_a, &rates_b)
}

/// Pearson correlation; `None` when undefined (fewer than two points or a
/// constant series).
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mean_x) * (x - mean_x);
        syy += (y - mean_y) * (y - mean_y);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
