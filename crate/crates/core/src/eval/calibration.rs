//! Expected calibration error, Brier score, and reliability curves over
//! the judge's confidence domain `[0.5, 1]`.

use serde::{Deserialize, Serialize};

use super::EvalError;

/// One non-empty reliability bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub center: f64,
    pub mean_confidence: f64,
    pub accuracy: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub ece: f64,
    pub brier: f64,
    pub curve: Vec<ReliabilityBin>,
}

/// Bins `(confidence, chosen-side correct)` records into `n_bins` equal-width
/// bins on `[0.5, 1]`.
///
/// `ece = sum (bin_count / n) * |bin_accuracy - bin_mean_confidence|`;
/// `brier = mean (confidence - correct)^2`.
pub fn calibration_metrics(
    records: &[(f64, bool)],
    n_bins: usize,
) -> Result<CalibrationReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    if n_bins < 2 {
        return Err(EvalError::BadBins);
    }
    let mut counts = vec![0usize; n_bins];
    let mut confidence_sums = vec![0.0f64; n_bins];
    let mut correct_counts = vec![0usize; n_bins];
    let mut brier = 0.0;
    let width = 0.5 / n_bins as f64;
    for &(confidence, correct) in records {
        let c = confidence.clamp(0.5, 1.0);
        let bin = (((c - 0.5) / width) as usize).min(n_bins - 1);
        counts[bin] += 1;
        confidence_sums[bin] += c;
        if correct {
            correct_counts[bin] += 1;
        }
        let outcome = if correct { 1.0 } else { 0.0 };
        brier += (c - outcome) * (c - outcome);
    }
    let n = records.len() as f64;
    brier /= n;
    let mut ece = 0.0;
    let mut curve = Vec::new();
    for bin in 0..n_bins {
        if counts[bin] == 0 {
            continue;
        }
        let count = counts[bin] as f64;
        let mean_confidence = confidence_sums[bin] / count;
        let accuracy = correct_counts[bin] as f64 / count;
        ece += (count / n) * (accuracy - mean_confidence).abs();
        curve.push(ReliabilityBin {
            center: 0.5 + (bin as f64 + 0.5) * width,
            mean_confidence,
            accuracy,
            count: counts[bin],
        });
    }
    Ok(CalibrationReport { ece, brier, curve })
}
