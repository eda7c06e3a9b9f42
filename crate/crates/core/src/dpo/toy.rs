//! Desk-scale trainer demonstrating the objective end to end.
//!
//! Each prompt has a finite pool of candidate speeches; the policy is a
//! per-prompt categorical distribution over the pool, parameterized by free
//! scores with a uniform reference policy. Full-batch gradient descent on
//! the mean pair loss drives the policy toward the reward ranking.
//!
//! The mean loss is smooth with curvature bounded by
//! `beta^2 / 2 + alpha` per score coordinate, so the trace is monotone
//! non-increasing for learning rates up to roughly `2 / (beta^2 + 2 alpha)`
//! (8 at the default `beta = 0.5`); rates at or below 1.0 are safely inside
//! that bound.

use std::collections::BTreeMap;

use super::{clamp_confidence, dpo_plus_loss, CompletionLogProbs, DpoError, LossParams, RewardShapeKind};
use crate::prefgen::PreferencePair;

/// Candidate speeches per prompt, keyed by the pair's context digest.
pub type CandidatePools = BTreeMap<String, Vec<String>>;

/// Final parameters plus the per-step mean loss trace.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTrainReport {
    pub scores: BTreeMap<String, Vec<f64>>,
    pub loss_trace: Vec<f64>,
}

impl ToyTrainReport {
    /// Index of the highest-scoring candidate for a prompt.
    pub fn argmax(&self, prompt: &str) -> Option<usize> {
        let scores = self.scores.get(prompt)?;
        scores
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.partial_cmp(b).expect("finite scores"))
            .map(|(i, _)| i)
    }

    /// Policy probabilities for a prompt.
    pub fn probs(&self, prompt: &str) -> Option<Vec<f64>> {
        self.scores.get(prompt).map(|s| softmax(s))
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn softmax(values: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(values);
    values.iter().map(|v| (v - lse).exp()).collect()
}

struct ResolvedPair {
    prompt: String,
    y0: usize,
    y1: usize,
    c0: f64,
    c1: f64,
}

fn resolve(
    pairs: &[PreferencePair],
    pools: &CandidatePools,
    shape_kind: RewardShapeKind,
) -> Result<Vec<ResolvedPair>, DpoError> {
    let mut resolved = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let pool = pools
            .get(&pair.context_digest)
            .ok_or_else(|| DpoError::MissingPool(pair.context_digest.clone()))?;
        if pool.is_empty() {
            return Err(DpoError::EmptyPool(pair.context_digest.clone()));
        }
        let index_of = |text: &str| -> Result<usize, DpoError> {
            pool.iter()
                .position(|candidate| candidate == text)
                .ok_or_else(|| DpoError::UnknownCandidate {
                    pair: pair.pair_id.clone(),
                    prompt: pair.context_digest.clone(),
                })
        };
        let needs_clamp = matches!(shape_kind, RewardShapeKind::LogProb | RewardShapeKind::Logit);
        let (c0, c1) = if needs_clamp {
            (clamp_confidence(pair.c0), clamp_confidence(pair.c1))
        } else {
            (pair.c0, pair.c1)
        };
        resolved.push(ResolvedPair {
            prompt: pair.context_digest.clone(),
            y0: index_of(&pair.y0)?,
            y1: index_of(&pair.y1)?,
            c0,
            c1,
        });
    }
    Ok(resolved)
}

/// Trains the per-prompt categorical policy by full-batch gradient descent
/// on the mean pair loss.
pub fn toy_train(
    pairs: &[PreferencePair],
    pools: &CandidatePools,
    params: &LossParams,
    steps: u32,
    learning_rate: f64,
) -> Result<ToyTrainReport, DpoError> {
    let resolved = resolve(pairs, pools, params.shape.kind)?;
    let mut scores: BTreeMap<String, Vec<f64>> = pools
        .iter()
        .map(|(prompt, pool)| (prompt.clone(), vec![0.0; pool.len()]))
        .collect();
    let n_pairs = resolved.len().max(1) as f64;
    let mut loss_trace = Vec::with_capacity(steps as usize);
    for _ in 0..steps {
        let mut grads: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        let mut total_loss = 0.0;
        for pair in &resolved {
            let prompt_scores = &scores[&pair.prompt];
            let lse = log_sum_exp(prompt_scores);
            let logp = |i: usize| prompt_scores[i] - lse;
            let log_ref = -(prompt_scores.len() as f64).ln();
            let out = dpo_plus_loss(
                &CompletionLogProbs {
                    logp_policy: logp(pair.y0),
                    logp_ref: log_ref,
                    token_count: 1,
                },
                &CompletionLogProbs {
                    logp_policy: logp(pair.y1),
                    logp_ref: log_ref,
                    token_count: 1,
                },
                pair.c0,
                pair.c1,
                params,
            )?;
            total_loss += out.loss;
            let probs = softmax(prompt_scores);
            let grad = grads
                .entry(pair.prompt.as_str())
                .or_insert_with(|| vec![0.0; probs.len()]);
            for (k, (g, p)) in grad.iter_mut().zip(&probs).enumerate() {
                let d0 = if k == pair.y0 { 1.0 } else { 0.0 } - p;
                let d1 = if k == pair.y1 { 1.0 } else { 0.0 } - p;
                *g += out.grad_logp_policy_y0 * d0 + out.grad_logp_policy_y1 * d1;
            }
        }
        loss_trace.push(total_loss / n_pairs);
        for (prompt, grad) in grads {
            let prompt_scores = scores.get_mut(prompt).expect("initialized above");
            for (s, g) in prompt_scores.iter_mut().zip(grad) {
                *s -= learning_rate * g / n_pairs;
            }
        }
    }
    Ok(ToyTrainReport { scores, loss_trace })
}
