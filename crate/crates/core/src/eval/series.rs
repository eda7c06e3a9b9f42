//! The skill-accuracy relationship: win rate versus judge accuracy across
//! training checkpoints, with an ordinary-least-squares slope.

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointPoint {
    pub checkpoint: String,
    pub win_rate: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillAccuracySeries {
    /// Points in checkpoint order.
    pub points: Vec<CheckpointPoint>,
    pub slope: f64,
    /// Standard error of the slope; zero for a two-point (exact) fit.
    pub slope_stderr: f64,
}

/// Ordinary least squares of accuracy on win rate.
pub fn skill_accuracy_series(
    points: &[CheckpointPoint],
) -> Result<SkillAccuracySeries, EvalError> {
    if points.len() < 2 {
        return Err(EvalError::NotEnough {
            what: "checkpoints",
            needed: 2,
            found: points.len(),
        });
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.win_rate).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.accuracy).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for p in points {
        sxx += (p.win_rate - mean_x) * (p.win_rate - mean_x);
        sxy += (p.win_rate - mean_x) * (p.accuracy - mean_y);
    }
    if sxx == 0.0 {
        return Err(EvalError::DegenerateSeries);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let slope_stderr = if points.len() > 2 {
        let ssr: f64 = points
            .iter()
            .map(|p| {
                let fitted = intercept + slope * p.win_rate;
                (p.accuracy - fitted) * (p.accuracy - fitted)
            })
            .sum();
        (ssr / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(SkillAccuracySeries {
        points: points.to_vec(),
        slope,
        slope_stderr,
    })
}
