//! The reward-aware preference objective.
//!
//! A judged pair of same-prompt speeches carries two confidences
//! `(C0, C1)`. A [`RewardShape`] turns them into a target preference
//! probability; [`dpo_plus_loss`] fits the policy's implied Bradley-Terry
//! preference to that target by cross-entropy, plus a small length-normalized
//! SFT term on the preferred completion, and returns exact analytic
//! gradients with respect to the two policy log-probabilities.
//!
//! Shapes:
//!
//! - `prob`:    `sigma(gamma * (C0 - C1))`: sensitive only to the
//!   confidence difference.
//! - `logprob`: `C0^gamma / (C0^gamma + C1^gamma)`.
//! - `logit`:   `sigma(gamma * (logit(C0) - logit(C1)))`; at `gamma = 1`
//!   this equals `C0(1-C1) / (C0(1-C1) + C1(1-C0))`.
//! - `binary`:  1/0/0.5 by comparison - the `gamma -> inf` limit of the
//!   others.
//!
//! [`calibrate_gamma`] solves for the scale that gives a dataset a chosen
//! total preferred weight, which is how different shapes are put on an
//! equal footing.

mod toy;

use serde::{Deserialize, Serialize};

pub use toy::{toy_train, CandidatePools, ToyTrainReport};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DpoError {
    #[error("confidence {value} outside the domain of the {shape} shape")]
    Domain { shape: &'static str, value: f64 },
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("gamma must be positive and finite, got {0}")]
    BadGamma(f64),
    #[error("gamma is unidentifiable: the total preferred weight does not depend on it")]
    Unidentifiable,
    #[error("target total weight {target} outside the attainable range [{lo}, {hi}]")]
    TargetOutOfRange { target: f64, lo: f64, hi: f64 },
    #[error("no pairs to calibrate against")]
    EmptyDataset,
    #[error("prompt `{0}` has no candidate pool")]
    MissingPool(String),
    #[error("prompt `{0}` has an empty candidate pool")]
    EmptyPool(String),
    #[error("pair `{pair}` references a speech not present in the pool for prompt `{prompt}`")]
    UnknownCandidate { pair: String, prompt: String },
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardShapeKind {
    #[default]
    Prob,
    LogProb,
    Logit,
    Binary,
}

impl RewardShapeKind {
    pub fn name(self) -> &'static str {
        match self {
            RewardShapeKind::Prob => "prob",
            RewardShapeKind::LogProb => "logprob",
            RewardShapeKind::Logit => "logit",
            RewardShapeKind::Binary => "binary",
        }
    }
}

/// A reward shape with its scale. `gamma` is ignored for `binary`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardShape {
    pub kind: RewardShapeKind,
    pub gamma: f64,
}

impl RewardShape {
    pub fn new(kind: RewardShapeKind, gamma: f64) -> RewardShape {
        RewardShape { kind, gamma }
    }

    pub fn prob(gamma: f64) -> RewardShape {
        RewardShape::new(RewardShapeKind::Prob, gamma)
    }

    pub fn binary() -> RewardShape {
        RewardShape::new(RewardShapeKind::Binary, 1.0)
    }
}

fn check_confidence(c: f64, shape: &'static str) -> Result<(), DpoError> {
    if !c.is_finite() || !(0.0..=1.0).contains(&c) {
        return Err(DpoError::Domain { shape, value: c });
    }
    Ok(())
}

/// Target preference probability for confidences `(c0, c1)` under a shape.
///
/// Domain violations (a zero confidence under `logprob`, an endpoint under
/// `logit`) are errors; judge outputs must be clamped upstream, never here.
pub fn target_probability(c0: f64, c1: f64, shape: &RewardShape) -> Result<f64, DpoError> {
    let name = shape.kind.name();
    check_confidence(c0, name)?;
    check_confidence(c1, name)?;
    if shape.kind != RewardShapeKind::Binary
        && (!shape.gamma.is_finite() || shape.gamma <= 0.0)
    {
        return Err(DpoError::BadGamma(shape.gamma));
    }
    let gamma = shape.gamma;
    let p = match shape.kind {
        RewardShapeKind::Prob => sigmoid(gamma * (c0 - c1)),
        RewardShapeKind::LogProb => {
            for c in [c0, c1] {
                if c <= 0.0 {
                    return Err(DpoError::Domain { shape: name, value: c });
                }
            }
            sigmoid(gamma * (c0.ln() - c1.ln()))
        }
        RewardShapeKind::Logit => {
            for c in [c0, c1] {
                if c <= 0.0 || c >= 1.0 {
                    return Err(DpoError::Domain { shape: name, value: c });
                }
            }
            sigmoid(gamma * (logit(c0) - logit(c1)))
        }
        RewardShapeKind::Binary => {
            if c0 > c1 {
                1.0
            } else if c0 < c1 {
                0.0
            } else {
                0.5
            }
        }
    };
    Ok(p)
}

/// Clamps a confidence into the open unit interval so the `logprob` and
/// `logit` shapes stay finite; perturbs targets by < 1e-3.
pub fn clamp_confidence(c: f64) -> f64 {
    c.clamp(1e-4, 1.0 - 1e-4)
}

/// Summed token log-probabilities of one completion under the current and
/// reference policies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionLogProbs {
    pub logp_policy: f64,
    pub logp_ref: f64,
    pub token_count: u32,
}

impl CompletionLogProbs {
    fn check(&self) -> Result<(), DpoError> {
        if !self.logp_policy.is_finite() {
            return Err(DpoError::NonFinite("logp_policy"));
        }
        if !self.logp_ref.is_finite() {
            return Err(DpoError::NonFinite("logp_ref"));
        }
        if self.token_count == 0 {
            return Err(DpoError::NonFinite("token_count must be positive"));
        }
        Ok(())
    }

    fn log_ratio(&self) -> f64 {
        self.logp_policy - self.logp_ref
    }
}

/// Loss hyperparameters: KL coefficient `beta`, SFT weight `alpha`, and the
/// reward shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    pub beta: f64,
    pub alpha: f64,
    pub shape: RewardShape,
}

impl LossParams {
    /// The settings used for debate-generated pairs.
    pub fn default_debate() -> LossParams {
        LossParams {
            beta: 0.5,
            alpha: 0.005,
            shape: RewardShape::prob(7.0),
        }
    }

    /// The settings used for consultancy-generated pairs.
    pub fn default_consultancy() -> LossParams {
        LossParams {
            beta: 0.5,
            alpha: 0.005,
            shape: RewardShape::prob(10.0),
        }
    }
}

/// Loss value, both preference probabilities, and exact gradients with
/// respect to the two policy log-probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossOutput {
    pub loss: f64,
    pub target_p: f64,
    pub model_p: f64,
    pub grad_logp_policy_y0: f64,
    pub grad_logp_policy_y1: f64,
}

/// The implied scalar reward of a completion: `beta * (logp_policy - logp_ref)`.
///
/// `sigma(bt_reward(y0) - bt_reward(y1))` equals the model preference
/// probability in [`dpo_plus_loss`].
pub fn bt_reward(logp_policy: f64, logp_ref: f64, beta: f64) -> f64 {
    beta * (logp_policy - logp_ref)
}

/// Cross-entropy between the shaped target preference and the policy's
/// implied preference, plus `alpha` times the length-normalized negative
/// log-likelihood of the higher-reward completion (ties prefer `y0`).
pub fn dpo_plus_loss(
    y0: &CompletionLogProbs,
    y1: &CompletionLogProbs,
    c0: f64,
    c1: f64,
    params: &LossParams,
) -> Result<LossOutput, DpoError> {
    y0.check()?;
    y1.check()?;
    if !params.beta.is_finite() || !params.alpha.is_finite() {
        return Err(DpoError::NonFinite("loss params"));
    }
    let target_p = target_probability(c0, c1, &params.shape)?;
    let d = params.beta * (y0.log_ratio() - y1.log_ratio());
    let model_p_exact = sigmoid(d);
    // H(P, P_theta) via softplus, stable for |d| >> 0.
    let cross_entropy = target_p * softplus(-d) + (1.0 - target_p) * softplus(d);
    let preferred_is_y0 = c0 >= c1;
    let (w, tokens) = if preferred_is_y0 {
        (y0, f64::from(y0.token_count))
    } else {
        (y1, f64::from(y1.token_count))
    };
    let sft_term = -w.logp_policy / tokens;
    let loss = cross_entropy + params.alpha * sft_term;

    let g = params.beta * (model_p_exact - target_p);
    let mut grad_y0 = g;
    let mut grad_y1 = -g;
    if preferred_is_y0 {
        grad_y0 += -params.alpha / tokens;
    } else {
        grad_y1 += -params.alpha / tokens;
    }
    Ok(LossOutput {
        loss,
        target_p,
        model_p: model_p_exact.clamp(1e-15, 1.0 - 1e-15),
        grad_logp_policy_y0: grad_y0,
        grad_logp_policy_y1: grad_y1,
    })
}

/// Total preferred weight of a dataset under a shape at a given gamma:
/// the sum over pairs of the target probability of the preferred side.
pub fn total_preferred_weight(
    pairs: &[(f64, f64)],
    kind: RewardShapeKind,
    gamma: f64,
) -> Result<f64, DpoError> {
    let shape = RewardShape::new(kind, gamma);
    let mut total = 0.0;
    for &(c0, c1) in pairs {
        let (hi, lo) = if c0 >= c1 { (c0, c1) } else { (c1, c0) };
        total += target_probability(hi, lo, &shape)?;
    }
    Ok(total)
}

const GAMMA_LO: f64 = 1e-6;
const GAMMA_HI: f64 = 1e6;

/// Solves for the gamma that makes the dataset's total preferred weight hit
/// `target_total_weight`, by bisection on `[1e-6, 1e6]`.
///
/// The weight is strictly increasing in gamma whenever any pair is untied,
/// so the root is unique. Tolerance: `|W(gamma) - target| <= 1e-9 * n`.
pub fn calibrate_gamma(
    pairs: &[(f64, f64)],
    kind: RewardShapeKind,
    target_total_weight: f64,
) -> Result<f64, DpoError> {
    if pairs.is_empty() {
        return Err(DpoError::EmptyDataset);
    }
    if kind == RewardShapeKind::Binary {
        return Err(DpoError::Unidentifiable);
    }
    if pairs.iter().all(|&(c0, c1)| c0 == c1) {
        return Err(DpoError::Unidentifiable);
    }
    let n = pairs.len() as f64;
    let tolerance = 1e-9 * n;
    let w_lo = total_preferred_weight(pairs, kind, GAMMA_LO)?;
    let w_hi = total_preferred_weight(pairs, kind, GAMMA_HI)?;
    if target_total_weight < w_lo || target_total_weight > w_hi {
        return Err(DpoError::TargetOutOfRange {
            target: target_total_weight,
            lo: w_lo,
            hi: w_hi,
        });
    }
    let (mut lo, mut hi) = (GAMMA_LO, GAMMA_HI);
    let mut mid = lo;
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let w = total_preferred_weight(pairs, kind, mid)?;
        if (w - target_total_weight).abs() <= tolerance {
            return Ok(mid);
        }
        if w < target_total_weight {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(mid)
}
