//! Evaluation: tournaments, Elo fitting, judge-accuracy and calibration
//! reports, style metrics, and paired significance tests.

mod accuracy;
mod calibration;
mod elo;
mod series;
mod significance;
mod style;
mod tournament;

use serde::{Deserialize, Serialize};

pub use accuracy::{judge_accuracy, wilson_interval, AccuracyProtocol, AccuracyReport};
pub use calibration::{calibration_metrics, CalibrationReport, ReliabilityBin};
pub use elo::{fit_elo, implied_winrate, EloTable};
pub use series::{skill_accuracy_series, CheckpointPoint, SkillAccuracySeries};
pub use significance::paired_significance;
pub use style::{cross_judge_correlation, pearson, style_metrics, StyleReport};
pub use tournament::{
    run_round_robin, run_round_robin_seq, MatchFailure, MatchResult, MatchWinner,
    RoundRobinReport, TournamentEntry,
};

use crate::protocol::{JudgedTranscript, Question, Side};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("empty record set")]
    Empty,
    #[error("need at least {needed} {what}, found {found}")]
    NotEnough {
        what: &'static str,
        needed: usize,
        found: usize,
    },
    #[error("comparison graph is disconnected; components: {0:?}")]
    Disconnected(Vec<Vec<String>>),
    #[error("model `{0}` is not in the table")]
    UnknownModel(String),
    #[error("single-consultancy records cover only one consultant side")]
    OneSided,
    #[error("single-consultancy record for question `{0}` is missing the consultant side")]
    MissingSide(String),
    #[error("record sets are not paired; mismatched question ids: {0:?}")]
    Unpaired(Vec<String>),
    #[error("duplicate question id `{0}` in a paired record set")]
    DuplicateQuestion(String),
    #[error("need at least 2 calibration bins")]
    BadBins,
    #[error("win rates are constant; the slope is undefined")]
    DegenerateSeries,
}

/// One judged round flattened for metric computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentRecord {
    pub question_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty_label: Option<String>,
    pub p_correct: f64,
    pub confidence: f64,
    pub chosen_correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consultant_side: Option<Side>,
}

impl JudgmentRecord {
    pub fn from_judged(run: &JudgedTranscript, question: &Question) -> JudgmentRecord {
        let verdict = &run.verdict;
        JudgmentRecord {
            question_id: run.transcript.question_id.clone(),
            difficulty_label: question.difficulty_label.clone(),
            p_correct: verdict.p_correct,
            confidence: verdict.confidence,
            chosen_correct: verdict.chosen == run.transcript.assignment.name_of_correct,
            consultant_side: run.consultant_side_of_run(),
        }
    }

    /// The strict decision rule: correct iff more than half the probability
    /// sits on the correct answer.
    pub fn correct(&self) -> bool {
        self.p_correct > 0.5
    }
}
