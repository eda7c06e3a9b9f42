//! Round-robin tournaments.
//!
//! Every model debates every other model on every question twice, flipping
//! sides between the two rounds so neither side advantage nor question
//! difficulty biases the head-to-head outcome. A model wins a cell when its
//! average judge confidence across the two rounds exceeds one half.

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::agents::{Debater, Judge};
use crate::exec;
use crate::protocol::{
    run_protocol, ProtocolAgents, ProtocolConfig, ProtocolSpec, Question, Side,
};
use crate::seed::derive_seed_path;

pub struct TournamentEntry<'a> {
    pub id: String,
    pub debater: &'a dyn Debater,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchWinner {
    ModelA,
    ModelB,
    Tie,
}

/// One (model pair, question) cell: two side-swapped debates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub question_id: String,
    pub model_a: String,
    pub model_b: String,
    /// Judge confidence in model A's position, round one (A defends the
    /// correct answer).
    pub conf_a_round1: f64,
    /// Judge confidence in model A's position, round two (sides flipped).
    pub conf_a_round2: f64,
    pub winner: MatchWinner,
}

impl MatchResult {
    pub fn winner_of(conf_a_round1: f64, conf_a_round2: f64) -> MatchWinner {
        // Compare the sum against 1; halving first could round the exact
        // self-play tie off of one half.
        let sum = conf_a_round1 + conf_a_round2;
        if sum > 1.0 {
            MatchWinner::ModelA
        } else if sum < 1.0 {
            MatchWinner::ModelB
        } else {
            MatchWinner::Tie
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchFailure {
    pub question_id: String,
    pub model_a: String,
    pub model_b: String,
    pub error: String,
}

/// Results plus the failures that were recorded and excluded.
#[derive(Debug, Default)]
pub struct RoundRobinReport {
    pub results: Vec<MatchResult>,
    pub failures: Vec<MatchFailure>,
}

struct Cell {
    a: usize,
    b: usize,
    question: usize,
}

fn play_cell(
    entries: &[TournamentEntry<'_>],
    questions: &[Question],
    judge: &dyn Judge,
    base: &ProtocolConfig,
    seed: u64,
    cell: &Cell,
) -> Result<MatchResult, MatchFailure> {
    let question = &questions[cell.question];
    let (model_a, model_b) = (&entries[cell.a], &entries[cell.b]);
    // One seed per (pair, question): the two side-swapped rounds replay the
    // same randomness with the roles exchanged, so identical models tie
    // exactly.
    let config = ProtocolConfig {
        seed: derive_seed_path(
            seed,
            "tournament-cell",
            &[&model_a.id, &model_b.id, &question.id],
        ),
        ..base.clone()
    };
    let fail = |error: String| MatchFailure {
        question_id: question.id.clone(),
        model_a: model_a.id.clone(),
        model_b: model_b.id.clone(),
        error,
    };
    let mut confidences = [0.0f64; 2];
    for (round, conf) in confidences.iter_mut().enumerate() {
        let (for_correct, for_distractor) = if round == 0 {
            (model_a.debater, model_b.debater)
        } else {
            (model_b.debater, model_a.debater)
        };
        let agents = ProtocolAgents {
            for_correct,
            for_distractor,
        };
        let outcome = run_protocol(question, ProtocolSpec::Debate, &agents, judge, &config)
            .map_err(|e| fail(e.to_string()))?;
        let run = &outcome.runs[0];
        let a_side = if round == 0 { Side::Correct } else { Side::Distractor };
        *conf = run.verdict.p_for(run.transcript.assignment.name_for(a_side));
    }
    let [conf_a_round1, conf_a_round2] = confidences;
    Ok(MatchResult {
        question_id: question.id.clone(),
        model_a: model_a.id.clone(),
        model_b: model_b.id.clone(),
        conf_a_round1,
        conf_a_round2,
        winner: MatchResult::winner_of(conf_a_round1, conf_a_round2),
    })
}

fn cells(n_models: usize, n_questions: usize) -> Vec<Cell> {
    let mut cells = Vec::new();
    for a in 0..n_models {
        for b in (a + 1)..n_models {
            for question in 0..n_questions {
                cells.push(Cell { a, b, question });
            }
        }
    }
    cells
}

fn collect(outcomes: Vec<Result<MatchResult, MatchFailure>>) -> RoundRobinReport {
    let mut report = RoundRobinReport::default();
    for outcome in outcomes {
        match outcome {
            Ok(result) => report.results.push(result),
            Err(failure) => report.failures.push(failure),
        }
    }
    report
}

/// Plays the full round robin, data-parallel across (pair, question) cells
/// under the `parallel` feature.
pub fn run_round_robin(
    entries: &[TournamentEntry<'_>],
    questions: &[Question],
    judge: &dyn Judge,
    config: &ProtocolConfig,
    seed: u64,
) -> Result<RoundRobinReport, EvalError> {
    check_inputs(entries, questions)?;
    let grid = cells(entries.len(), questions.len());
    let outcomes = exec::map_batch(&grid, |cell| {
        play_cell(entries, questions, judge, config, seed, cell)
    });
    Ok(collect(outcomes))
}

/// Sequential variant of [`run_round_robin`], for comparison benchmarks.
pub fn run_round_robin_seq(
    entries: &[TournamentEntry<'_>],
    questions: &[Question],
    judge: &dyn Judge,
    config: &ProtocolConfig,
    seed: u64,
) -> Result<RoundRobinReport, EvalError> {
    check_inputs(entries, questions)?;
    let grid = cells(entries.len(), questions.len());
    let outcomes = exec::map_batch_seq(&grid, |cell| {
        play_cell(entries, questions, judge, config, seed, cell)
    });
    Ok(collect(outcomes))
}

fn check_inputs(
    entries: &[TournamentEntry<'_>],
    questions: &[Question],
) -> Result<(), EvalError> {
    if entries.len() < 2 {
        return Err(EvalError::NotEnough {
            what: "models",
            needed: 2,
            found: entries.len(),
        });
    }
    if questions.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{AgentError, StubDebater, StubJudge};
    use crate::protocol::SpeechContext;

    fn questions(n: usize) -> Vec<Question> {
        crate::synthetic::synthetic_questions(n, 77)
    }

    #[test]
    fn counts_match_the_grid() {
        let qs = questions(10);
        let d1 = StubDebater::new(0.9, 2, 1);
        let d2 = StubDebater::new(0.5, 2, 2);
        let d3 = StubDebater::new(0.1, 2, 3);
        let entries = vec![
            TournamentEntry { id: "m1".to_string(), debater: &d1 },
            TournamentEntry { id: "m2".to_string(), debater: &d2 },
            TournamentEntry { id: "m3".to_string(), debater: &d3 },
        ];
        let judge = StubJudge::new(0.0, 4.0, 9);
        let report =
            run_round_robin(&entries, &qs, &judge, &ProtocolConfig::default(), 5).unwrap();
        // 3 pairs x 10 questions, each cell holding two judged rounds.
        assert_eq!(report.results.len(), 30);
        assert!(report.failures.is_empty());
    }

    #[test]
    fn self_play_with_identical_models_ties_exactly() {
        let qs = questions(6);
        let model = StubDebater::new(0.7, 2, 4);
        let clone = model;
        let entries = vec![
            TournamentEntry { id: "m".to_string(), debater: &model },
            TournamentEntry { id: "m-copy".to_string(), debater: &clone },
        ];
        let judge = StubJudge::new(0.05, 4.0, 9);
        let report =
            run_round_robin(&entries, &qs, &judge, &ProtocolConfig::default(), 5).unwrap();
        for result in &report.results {
            assert_eq!(result.winner, MatchWinner::Tie, "{result:?}");
            assert!((result.conf_a_round1 + result.conf_a_round2 - 1.0).abs() == 0.0);
        }
    }

    #[test]
    fn threshold_arithmetic_picks_the_winner() {
        assert_eq!(MatchResult::winner_of(0.9, 0.2), MatchWinner::ModelA);
        assert_eq!(MatchResult::winner_of(0.3, 0.4), MatchWinner::ModelB);
        assert_eq!(MatchResult::winner_of(0.25, 0.75), MatchWinner::Tie);
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let qs = questions(4);
        let d1 = StubDebater::new(0.9, 2, 1);
        let d2 = StubDebater::new(0.3, 2, 2);
        let entries = vec![
            TournamentEntry { id: "hi".to_string(), debater: &d1 },
            TournamentEntry { id: "lo".to_string(), debater: &d2 },
        ];
        let judge = StubJudge::new(0.0, 4.0, 9);
        let parallel =
            run_round_robin(&entries, &qs, &judge, &ProtocolConfig::default(), 5).unwrap();
        let sequential =
            run_round_robin_seq(&entries, &qs, &judge, &ProtocolConfig::default(), 5).unwrap();
        assert_eq!(parallel.results, sequential.results);
    }

    struct SometimesFailing {
        inner: StubDebater,
    }
    impl Debater for SometimesFailing {
        fn speak(&self, ctx: &SpeechContext<'_>) -> Result<String, AgentError> {
            if ctx.question.id.ends_with('1') {
                Err(AgentError::Other("flaky".to_string()))
            } else {
                self.inner.speak(ctx)
            }
        }
    }

    #[test]
    fn failures_are_recorded_and_excluded() {
        let qs = questions(4);
        let flaky = SometimesFailing {
            inner: StubDebater::new(0.5, 2, 1),
        };
        let solid = StubDebater::new(0.5, 2, 2);
        let entries = vec![
            TournamentEntry { id: "flaky".to_string(), debater: &flaky },
            TournamentEntry { id: "solid".to_string(), debater: &solid },
        ];
        let judge = StubJudge::new(0.0, 4.0, 9);
        let report =
            run_round_robin(&entries, &qs, &judge, &ProtocolConfig::default(), 5).unwrap();
        assert_eq!(report.results.len() + report.failures.len(), 4);
        assert!(!report.failures.is_empty());
    }

    #[test]
    fn too_few_models_is_an_error() {
        let qs = questions(1);
        let d = StubDebater::new(0.5, 2, 1);
        let entries = vec![TournamentEntry { id: "solo".to_string(), debater: &d }];
        let judge = StubJudge::new(0.0, 4.0, 9);
        assert!(matches!(
            run_round_robin(&entries, &qs, &judge, &ProtocolConfig::default(), 5),
            Err(EvalError::NotEnough { .. })
        ));
    }
}
