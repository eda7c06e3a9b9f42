//! Core domain types: questions, side assignments, speeches, transcripts,
//! and verdicts.

use serde::{Deserialize, Serialize};

use crate::seed::derive_seed;

/// The two fixed display names under which the judge sees the debaters.
///
/// Which name defends the correct answer is randomized per question by
/// [`assign_sides`]; the judge never sees anything else about the agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DebaterName {
    #[serde(rename = "Debater_A")]
    A,
    #[serde(rename = "Debater_B")]
    B,
}

impl DebaterName {
    pub fn as_str(self) -> &'static str {
        match self {
            DebaterName::A => "Debater_A",
            DebaterName::B => "Debater_B",
        }
    }

    pub fn other(self) -> DebaterName {
        match self {
            DebaterName::A => DebaterName::B,
            DebaterName::B => DebaterName::A,
        }
    }

    /// Fixed tie-break order: `Debater_A` first.
    pub fn first() -> DebaterName {
        DebaterName::A
    }

    pub fn parse(s: &str) -> Option<DebaterName> {
        match s.trim() {
            "Debater_A" => Some(DebaterName::A),
            "Debater_B" => Some(DebaterName::B),
            _ => None,
        }
    }
}

impl std::fmt::Display for DebaterName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which answer a participant defends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Correct,
    Distractor,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Correct => Side::Distractor,
            Side::Distractor => Side::Correct,
        }
    }
}

/// A hidden story plus a question with one correct and one distractor answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub story: String,
    pub question: String,
    pub correct_answer: String,
    pub distractor_answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty_label: Option<String>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum QuestionError {
    #[error("field `{0}` is empty")]
    EmptyField(&'static str),
    #[error("correct_answer equals distractor_answer")]
    IdenticalAnswers,
}

impl Question {
    /// Checks the per-record invariants (uniqueness of ids is a dataset-level
    /// check, see `storage::dataset`).
    pub fn validate(&self) -> Result<(), QuestionError> {
        for (name, value) in [
            ("id", &self.id),
            ("story", &self.story),
            ("question", &self.question),
            ("correct_answer", &self.correct_answer),
            ("distractor_answer", &self.distractor_answer),
        ] {
            if value.trim().is_empty() {
                return Err(QuestionError::EmptyField(name));
            }
        }
        if self.correct_answer == self.distractor_answer {
            return Err(QuestionError::IdenticalAnswers);
        }
        Ok(())
    }

    /// The answer text defended by the given side.
    pub fn answer(&self, side: Side) -> &str {
        match side {
            Side::Correct => &self.correct_answer,
            Side::Distractor => &self.distractor_answer,
        }
    }
}

/// The random mapping from display names to answers for one protocol round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub name_of_correct: DebaterName,
    pub name_of_distractor: DebaterName,
    pub seed: u64,
}

impl Assignment {
    pub fn name_for(&self, side: Side) -> DebaterName {
        match side {
            Side::Correct => self.name_of_correct,
            Side::Distractor => self.name_of_distractor,
        }
    }

    pub fn side_of(&self, name: DebaterName) -> Side {
        if name == self.name_of_correct {
            Side::Correct
        } else {
            Side::Distractor
        }
    }
}

/// Randomizes which display name defends the correct answer.
///
/// Deterministic in `(question.id, seed)`; over many seeds each name gets
/// the correct answer with frequency 1/2.
pub fn assign_sides(question: &Question, seed: u64) -> Assignment {
    let bit = derive_seed(seed, "assign-sides", &question.id) & 1;
    let name_of_correct = if bit == 0 { DebaterName::A } else { DebaterName::B };
    Assignment {
        name_of_correct,
        name_of_distractor: name_of_correct.other(),
        seed,
    }
}

/// A verified quote region inside [`Speech::verified_text`].
///
/// `start..end` is the byte range of the quoted content (tags excluded);
/// `valid` records whether the claim matched the story.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuoteSpan {
    pub start: usize,
    pub end: usize,
    pub valid: bool,
}

/// One speech in a transcript, after quote verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Speech {
    pub author: DebaterName,
    pub turn: u32,
    pub raw_text: String,
    pub verified_text: String,
    pub quote_spans: Vec<QuoteSpan>,
}

impl Speech {
    /// Iterates the contents of valid quote regions.
    pub fn valid_quotes(&self) -> impl Iterator<Item = &str> {
        self.quote_spans
            .iter()
            .filter(|s| s.valid)
            .map(move |s| &self.verified_text[s.start..s.end])
    }
}

/// Which protocol produced a transcript.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    Debate,
    SingleConsultancy,
    DoubleConsultancy,
}

/// An ordered, visibility-tagged record of one protocol round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub question_id: String,
    pub protocol: ProtocolKind,
    pub num_turns: u32,
    pub speeches: Vec<Speech>,
    pub assignment: Assignment,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TranscriptError {
    #[error("{protocol:?} with {turns} turns requires {expected} speeches, found {found}")]
    SpeechCount {
        protocol: ProtocolKind,
        turns: u32,
        expected: usize,
        found: usize,
    },
    #[error("speech {index} has author/turn ({author}, {turn}), expected ({expected_author}, {expected_turn})")]
    SpeechOrder {
        index: usize,
        author: DebaterName,
        turn: u32,
        expected_author: DebaterName,
        expected_turn: u32,
    },
}

impl Transcript {
    /// Checks the speech-count and interleaving invariants.
    ///
    /// Debate and double consultancy hold `2T` speeches interleaved by turn
    /// (`Debater_A` before `Debater_B` within a turn); single consultancy
    /// holds `T` speeches from one author.
    pub fn validate(&self) -> Result<(), TranscriptError> {
        let t = self.num_turns;
        let expected: Vec<(DebaterName, u32)> = match self.protocol {
            ProtocolKind::Debate | ProtocolKind::DoubleConsultancy => (0..t)
                .flat_map(|turn| [(DebaterName::A, turn), (DebaterName::B, turn)])
                .collect(),
            ProtocolKind::SingleConsultancy => {
                let author = self
                    .speeches
                    .first()
                    .map(|s| s.author)
                    .unwrap_or(DebaterName::A);
                (0..t).map(|turn| (author, turn)).collect()
            }
        };
        if self.speeches.len() != expected.len() {
            return Err(TranscriptError::SpeechCount {
                protocol: self.protocol,
                turns: t,
                expected: expected.len(),
                found: self.speeches.len(),
            });
        }
        for (index, (speech, &(expected_author, expected_turn))) in
            self.speeches.iter().zip(&expected).enumerate()
        {
            if speech.author != expected_author || speech.turn != expected_turn {
                return Err(TranscriptError::SpeechOrder {
                    index,
                    author: speech.author,
                    turn: speech.turn,
                    expected_author,
                    expected_turn,
                });
            }
        }
        Ok(())
    }

    /// Speeches by one author, in turn order.
    pub fn speeches_by(&self, author: DebaterName) -> impl Iterator<Item = &Speech> {
        self.speeches.iter().filter(move |s| s.author == author)
    }
}

/// The judge's decision: a chosen name and a confidence in `[0.5, 1]`.
///
/// `p_correct` is the confidence mapped onto the correct answer via the
/// round's [`Assignment`]; `tie` records that the readout was exactly
/// symmetric and the name was picked by the fixed tie-break.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub chosen: DebaterName,
    pub confidence: f64,
    pub p_correct: f64,
    #[serde(default)]
    pub tie: bool,
}

impl Verdict {
    /// Builds a verdict from a chosen name and confidence, deriving
    /// `p_correct` from the assignment. Confidence is clamped to `[0.5, 1]`.
    pub fn new(chosen: DebaterName, confidence: f64, assignment: &Assignment) -> Verdict {
        let confidence = confidence.clamp(0.5, 1.0);
        let p_correct = if chosen == assignment.name_of_correct {
            confidence
        } else {
            1.0 - confidence
        };
        Verdict {
            chosen,
            confidence,
            p_correct,
            tie: false,
        }
    }

    /// Probability placed on the given name's position.
    pub fn p_for(&self, name: DebaterName) -> f64 {
        if name == self.chosen {
            self.confidence
        } else {
            1.0 - self.confidence
        }
    }

    /// Reconstructs `(chosen, confidence)` from `(p_correct, assignment)`.
    ///
    /// Inverse of [`Verdict::new`] up to the exact-0.5 tie.
    pub fn from_p_correct(p_correct: f64, assignment: &Assignment) -> Verdict {
        let (chosen, confidence, tie) = if p_correct > 0.5 {
            (assignment.name_of_correct, p_correct, false)
        } else if p_correct < 0.5 {
            (assignment.name_of_distractor, 1.0 - p_correct, false)
        } else {
            (DebaterName::first(), 0.5, true)
        };
        Verdict {
            chosen,
            confidence,
            p_correct,
            tie,
        }
    }
}

/// Normalization applied to claimed quotes before matching them against the
/// story.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuoteNormalization {
    /// Byte-exact substring match.
    Exact,
    /// Unicode whitespace runs collapse to a single space before matching;
    /// tolerant of line-wrap artifacts without fuzzy-match ambiguity.
    #[default]
    WhitespaceCollapsed,
}

/// Settings shared by every protocol run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    /// Number of simultaneous turns. 1 and 2 are the studied settings;
    /// larger values run but are flagged by [`ProtocolConfig::warnings`].
    pub num_turns: u32,
    /// Speech length cap; longer speeches are truncated at the last
    /// sentence boundary under the limit.
    pub max_speech_chars: usize,
    pub quote_normalization: QuoteNormalization,
    pub seed: u64,
    /// Retries per speech before the run aborts.
    pub max_retries: u32,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            num_turns: 2,
            max_speech_chars: 2_400,
            quote_normalization: QuoteNormalization::WhitespaceCollapsed,
            seed: 0,
            max_retries: 1,
        }
    }
}

impl ProtocolConfig {
    /// Non-fatal issues with the configuration.
    pub fn warnings(&self) -> Vec<String> {
        let mut warnings = Vec::new();
        if self.num_turns == 0 {
            warnings.push("num_turns is 0; no speeches will be generated".to_string());
        }
        if self.num_turns > 2 {
            warnings.push(format!(
                "num_turns = {} exceeds the studied settings (1 or 2)",
                self.num_turns
            ));
        }
        warnings
    }
}

#[cfg(test)]
pub(crate) fn toy_question(id: &str) -> Question {
    Question {
        id: id.to_string(),
        story: "The lighthouse keeper counted four ships. \
                The storm arrived before dawn. \
                Nobody slept that night."
            .to_string(),
        question: "How many ships did the keeper count?".to_string(),
        correct_answer: "four ships".to_string(),
        distractor_answer: "two ships".to_string(),
        difficulty_label: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assign_sides_is_deterministic() {
        let q = toy_question("q1");
        assert_eq!(assign_sides(&q, 7), assign_sides(&q, 7));
    }

    #[test]
    fn assign_sides_depends_only_on_id_and_seed() {
        let q1 = toy_question("q1");
        let mut q1_other_story = q1.clone();
        q1_other_story.story = "A different story.".to_string();
        assert_eq!(assign_sides(&q1, 3), assign_sides(&q1_other_story, 3));
    }

    #[test]
    fn assign_sides_balanced_over_seeds() {
        // Monte-Carlo over seeds: each name should hold the correct answer
        // roughly half the time.
        let q = toy_question("q1");
        let n = 10_000;
        let a_correct = (0..n)
            .filter(|&s| assign_sides(&q, s).name_of_correct == DebaterName::A)
            .count();
        let frac = a_correct as f64 / n as f64;
        assert!((0.48..=0.52).contains(&frac), "fraction {frac}");
    }

    #[test]
    fn distinct_questions_assigned_independently() {
        let q1 = toy_question("q1");
        let q2 = toy_question("q2");
        // Same seed, different ids: computed independently (values may or may
        // not differ; over many seeds they must disagree sometimes).
        let disagreements = (0..100)
            .filter(|&s| assign_sides(&q1, s).name_of_correct != assign_sides(&q2, s).name_of_correct)
            .count();
        assert!(disagreements > 0);
    }

    #[test]
    fn question_validation() {
        let mut q = toy_question("q1");
        assert!(q.validate().is_ok());
        q.distractor_answer = q.correct_answer.clone();
        assert_eq!(q.validate(), Err(QuestionError::IdenticalAnswers));
        let mut q = toy_question("q2");
        q.story = "  ".to_string();
        assert_eq!(q.validate(), Err(QuestionError::EmptyField("story")));
    }

    #[test]
    fn verdict_p_correct_round_trip() {
        let q = toy_question("q1");
        let assignment = assign_sides(&q, 11);
        for &(chosen, confidence) in &[
            (DebaterName::A, 0.73),
            (DebaterName::B, 0.91),
            (DebaterName::A, 0.5),
        ] {
            let v = Verdict::new(chosen, confidence, &assignment);
            let back = Verdict::from_p_correct(v.p_correct, &assignment);
            assert!((back.confidence - v.confidence).abs() < 1e-12);
            if v.confidence > 0.5 {
                assert_eq!(back.chosen, v.chosen);
            } else {
                assert!(back.tie);
            }
        }
    }

    #[test]
    fn verdict_confidence_clamped() {
        let q = toy_question("q1");
        let assignment = assign_sides(&q, 1);
        let v = Verdict::new(DebaterName::A, 0.2, &assignment);
        assert_eq!(v.confidence, 0.5);
        let v = Verdict::new(DebaterName::A, 1.7, &assignment);
        assert_eq!(v.confidence, 1.0);
    }

    #[test]
    fn transcript_validate_counts() {
        let q = toy_question("q1");
        let assignment = assign_sides(&q, 1);
        let speech = |author, turn| Speech {
            author,
            turn,
            raw_text: String::new(),
            verified_text: String::new(),
            quote_spans: vec![],
        };
        let t = Transcript {
            question_id: q.id.clone(),
            protocol: ProtocolKind::Debate,
            num_turns: 2,
            speeches: vec![
                speech(DebaterName::A, 0),
                speech(DebaterName::B, 0),
                speech(DebaterName::A, 1),
                speech(DebaterName::B, 1),
            ],
            assignment,
        };
        assert!(t.validate().is_ok());
        let mut short = t.clone();
        short.speeches.truncate(3);
        assert!(matches!(
            short.validate(),
            Err(TranscriptError::SpeechCount { .. })
        ));
        let mut disordered = t;
        disordered.speeches.swap(0, 1);
        assert!(matches!(
            disordered.validate(),
            Err(TranscriptError::SpeechOrder { .. })
        ));
    }

    #[test]
    fn protocol_config_flags_large_turn_counts() {
        let config = ProtocolConfig {
            num_turns: 3,
            ..ProtocolConfig::default()
        };
        assert_eq!(config.warnings().len(), 1);
        assert!(ProtocolConfig::default().warnings().is_empty());
    }
}
