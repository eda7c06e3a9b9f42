//! Bradley-Terry maximum-likelihood ratings on the Elo scale.
//!
//! Fitting uses minorization-maximization on the strength parameters:
//! `pi_i <- W_i / sum_j n_ij / (pi_i + pi_j)`, which increases the
//! likelihood every sweep and needs no step size. Ratings are
//! `(400 / ln 10) * ln pi`, anchored so one model sits exactly at zero;
//! the predicted win probability between two models is
//! `1 / (1 + 10^((R_j - R_i) / 400))`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::tournament::{MatchResult, MatchWinner};
use super::EvalError;

/// Rating clip for models with no wins or no losses, whose MLE diverges.
const RATING_CLIP: f64 = 1_000.0;
const CONVERGENCE: f64 = 1e-9;
const MAX_SWEEPS: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EloTable {
    pub ratings: BTreeMap<String, f64>,
    /// The model whose rating is fixed at exactly zero.
    pub anchor: String,
    /// Logistic scale: 400 / ln 10.
    pub scale: f64,
    /// Models whose ratings were clipped because their MLE diverges
    /// (zero wins or zero losses).
    pub divergent: BTreeSet<String>,
}

impl EloTable {
    pub fn rating(&self, model: &str) -> Result<f64, EvalError> {
        self.ratings
            .get(model)
            .copied()
            .ok_or_else(|| EvalError::UnknownModel(model.to_string()))
    }

    /// Predicted probability that `a` beats `b`.
    pub fn predicted_winprob(&self, a: &str, b: &str) -> Result<f64, EvalError> {
        let (ra, rb) = (self.rating(a)?, self.rating(b)?);
        Ok(1.0 / (1.0 + 10f64.powf((rb - ra) / 400.0)))
    }

    pub fn mean_rating(&self) -> f64 {
        self.ratings.values().sum::<f64>() / self.ratings.len() as f64
    }
}

struct Counts {
    models: Vec<String>,
    wins: Vec<f64>,
    matches: Vec<Vec<f64>>,
}

fn tally(results: &[MatchResult]) -> Counts {
    let mut names: BTreeSet<&str> = BTreeSet::new();
    for r in results {
        names.insert(&r.model_a);
        names.insert(&r.model_b);
    }
    let models: Vec<String> = names.into_iter().map(str::to_string).collect();
    let index: BTreeMap<&str, usize> = models
        .iter()
        .enumerate()
        .map(|(i, m)| (m.as_str(), i))
        .collect();
    let n = models.len();
    let mut wins = vec![0.0; n];
    let mut matches = vec![vec![0.0; n]; n];
    for r in results {
        let a = index[r.model_a.as_str()];
        let b = index[r.model_b.as_str()];
        matches[a][b] += 1.0;
        matches[b][a] += 1.0;
        match r.winner {
            MatchWinner::ModelA => wins[a] += 1.0,
            MatchWinner::ModelB => wins[b] += 1.0,
            MatchWinner::Tie => {
                wins[a] += 0.5;
                wins[b] += 0.5;
            }
        }
    }
    Counts {
        models,
        wins,
        matches,
    }
}

fn components(counts: &Counts) -> Vec<Vec<String>> {
    let n = counts.models.len();
    let mut component = vec![usize::MAX; n];
    let mut next = 0;
    for start in 0..n {
        if component[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        component[start] = next;
        while let Some(i) = stack.pop() {
            for (j, &played) in counts.matches[i].iter().enumerate() {
                if played > 0.0 && component[j] == usize::MAX {
                    component[j] = next;
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    let mut groups = vec![Vec::new(); next];
    for (i, &c) in component.iter().enumerate() {
        groups[c].push(counts.models[i].clone());
    }
    groups
}

/// Fits maximum-likelihood Bradley-Terry ratings from round-robin results.
///
/// Ties count as half a win for each side. The comparison graph must be
/// connected; models with zero wins or zero losses get clipped ratings and
/// a divergence flag.
pub fn fit_elo(results: &[MatchResult]) -> Result<EloTable, EvalError> {
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    let counts = tally(results);
    let n = counts.models.len();
    if n < 2 {
        return Err(EvalError::NotEnough {
            what: "models",
            needed: 2,
            found: n,
        });
    }
    let groups = components(&counts);
    if groups.len() > 1 {
        return Err(EvalError::Disconnected(groups));
    }
    let scale = 400.0 / std::f64::consts::LN_10;
    let total_matches: Vec<f64> = (0..n)
        .map(|i| counts.matches[i].iter().sum::<f64>())
        .collect();
    let mut divergent = BTreeSet::new();
    for (i, total) in total_matches.iter().enumerate() {
        if counts.wins[i] == 0.0 || counts.wins[i] == *total {
            divergent.insert(counts.models[i].clone());
        }
    }
    // Anchor: lexicographically smallest id (models are sorted).
    let anchor_index = 0usize;
    let mut ratings = vec![0.0f64; n];
    let mut strengths = vec![1.0f64; n];
    for _ in 0..MAX_SWEEPS {
        let mut new_strengths = vec![0.0f64; n];
        for i in 0..n {
            let mut denominator = 0.0;
            for j in 0..n {
                if i != j && counts.matches[i][j] > 0.0 {
                    denominator += counts.matches[i][j] / (strengths[i] + strengths[j]);
                }
            }
            new_strengths[i] = if denominator > 0.0 {
                counts.wins[i] / denominator
            } else {
                strengths[i]
            };
        }
        let anchor_rating = scale * new_strengths[anchor_index].ln();
        let mut max_change = 0.0f64;
        for i in 0..n {
            let raw = scale * new_strengths[i].ln() - anchor_rating;
            let clipped = if raw.is_nan() { -RATING_CLIP } else { raw.clamp(-RATING_CLIP, RATING_CLIP) };
            max_change = max_change.max((clipped - ratings[i]).abs());
            ratings[i] = clipped;
            strengths[i] = (clipped / scale).exp();
        }
        if max_change < CONVERGENCE {
            break;
        }
    }
    Ok(EloTable {
        ratings: counts
            .models
            .iter()
            .cloned()
            .zip(ratings.iter().copied())
            .collect(),
        anchor: counts.models[anchor_index].clone(),
        scale,
        divergent,
    })
}

/// Predicted probability that a model defeats a hypothetical opponent rated
/// at the table's mean rating.
pub fn implied_winrate(table: &EloTable, model: &str) -> Result<f64, EvalError> {
    let rating = table.rating(model)?;
    let mean = table.mean_rating();
    Ok(1.0 / (1.0 + 10f64.powf((mean - rating) / 400.0)))
}
