//! Protocol execution: debate, single/ensembled/double consultancy.
//!
//! The visibility contract is enforced structurally: a speech agent only
//! ever receives the speeches its protocol permits, and every generation
//! context is recorded as a [`ContextManifest`] so runs can be audited
//! after the fact. The judge receives verified speeches and the question,
//! never the story.

use serde::{Deserialize, Serialize};

use super::quotes::{verify_quotes, QuoteError};
use super::types::{
    assign_sides, Assignment, DebaterName, ProtocolConfig, ProtocolKind, Question, QuestionError,
    Side, Speech, Transcript, Verdict,
};
use crate::agents::{extract_verdict, Debater, Judge};
use crate::seed::derive_seed_path;

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("invalid question: {0}")]
    InvalidQuestion(#[from] QuestionError),
    #[error("speech by {author} at turn {turn} failed after {attempts} attempts: {last_error}")]
    SpeechFailed {
        author: DebaterName,
        turn: u32,
        attempts: u32,
        last_error: String,
    },
    #[error("judge failed after {attempts} attempts: {last_error}")]
    JudgeFailed { attempts: u32, last_error: String },
    #[error("ensembled aggregation mismatch: {0}")]
    EnsembleMismatch(String),
}

/// Which protocol to run, and for single consultancy, which side the
/// consultant defends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolSpec {
    Debate,
    SingleConsultancy(Side),
    EnsembledConsultancy,
    DoubleConsultancy,
}

impl ProtocolSpec {
    pub fn kind(&self) -> ProtocolKind {
        match self {
            ProtocolSpec::Debate => ProtocolKind::Debate,
            ProtocolSpec::SingleConsultancy(_) => ProtocolKind::SingleConsultancy,
            // Ensembled runs are a pair of single consultancies.
            ProtocolSpec::EnsembledConsultancy => ProtocolKind::SingleConsultancy,
            ProtocolSpec::DoubleConsultancy => ProtocolKind::DoubleConsultancy,
        }
    }
}

/// Agents for the two sides. Self-play passes the same agent twice.
pub struct ProtocolAgents<'a> {
    pub for_correct: &'a dyn Debater,
    pub for_distractor: &'a dyn Debater,
}

impl<'a> ProtocolAgents<'a> {
    pub fn self_play(agent: &'a dyn Debater) -> ProtocolAgents<'a> {
        ProtocolAgents {
            for_correct: agent,
            for_distractor: agent,
        }
    }

    pub fn for_side(&self, side: Side) -> &'a dyn Debater {
        match side {
            Side::Correct => self.for_correct,
            Side::Distractor => self.for_distractor,
        }
    }
}

/// Everything a speech agent may see when generating one speech.
pub struct SpeechContext<'a> {
    pub question: &'a Question,
    pub protocol: ProtocolKind,
    pub name: DebaterName,
    pub opponent_name: DebaterName,
    pub position: &'a str,
    pub opponent_position: &'a str,
    /// The speaker's own earlier speeches, verified.
    pub own_prior: Vec<&'a Speech>,
    /// Opponent speeches visible under the protocol, verified. Empty for
    /// consultancy variants.
    pub opponent_prior: Vec<&'a Speech>,
    pub turn: u32,
    pub seed: u64,
    pub max_speech_chars: usize,
}

/// Everything the judge may see: the question, the positions, and verified
/// speeches. The story is structurally absent.
pub struct JudgeContext<'a> {
    pub question_id: &'a str,
    pub topic: &'a str,
    /// `(display name, defended answer)` in fixed name order.
    pub positions: [(DebaterName, &'a str); 2],
    pub speeches: &'a [Speech],
    pub protocol: ProtocolKind,
    pub num_turns: u32,
    pub seed: u64,
}

/// Which judge prompt family frames the transcript.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeStyle {
    Debate,
    Consultancy,
}

/// Reference to a speech by its coordinates in the round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpeechRef {
    pub author: DebaterName,
    pub turn: u32,
}

/// Who consumed a generation context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "role")]
pub enum ContextConsumer {
    Speech { author: DebaterName, turn: u32 },
    Judge,
}

/// Recorded at generation time: exactly which speeches a consumer's context
/// contained, and whether the story was present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextManifest {
    pub consumer: ContextConsumer,
    pub visible: Vec<SpeechRef>,
    pub story_visible: bool,
}

/// A transcript with its verdict and the audit trail of every context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgedTranscript {
    pub transcript: Transcript,
    pub verdict: Verdict,
    pub speech_manifests: Vec<ContextManifest>,
    pub judge_manifest: ContextManifest,
    pub judge_style: JudgeStyle,
}

impl JudgedTranscript {
    /// The consultant's side, for single-consultancy records.
    pub fn consultant_side_of_run(&self) -> Option<Side> {
        if self.transcript.protocol != ProtocolKind::SingleConsultancy {
            return None;
        }
        self.transcript
            .speeches
            .first()
            .map(|s| self.transcript.assignment.side_of(s.author))
    }
}

/// Result of a protocol run: one judged transcript, or two for ensembled
/// consultancy together with the aggregated probability.
#[derive(Debug)]
pub struct ProtocolOutcome {
    pub runs: Vec<JudgedTranscript>,
    pub ensembled_p_correct: Option<f64>,
}

/// Deterministically picks the consultant's side for a single-consultancy
/// round. Balanced across seeds, like side assignment.
pub fn consultant_side(question_id: &str, seed: u64) -> Side {
    if derive_seed_path(seed, "consultant-side", &[question_id]) & 1 == 0 {
        Side::Correct
    } else {
        Side::Distractor
    }
}

fn sentence_cut_points(text: &str) -> Vec<usize> {
    let bytes = text.as_bytes();
    let mut cuts = Vec::new();
    for (i, &b) in bytes.iter().enumerate() {
        if matches!(b, b'.' | b'!' | b'?') {
            let at_end = i + 1 == bytes.len();
            if at_end || text[i + 1..].chars().next().is_some_and(|c| c.is_whitespace()) {
                cuts.push(i + 1);
            }
        }
    }
    cuts
}

/// Byte positions that do not fall inside a claimed `<quote>` region.
fn position_is_outside_quotes(text: &str, pos: usize) -> bool {
    let opens = text[..pos].matches("<quote>").count();
    let closes = text[..pos].matches("</quote>").count();
    opens == closes
}

/// Enforces the speech length cap: cut at the last sentence boundary under
/// the limit that is outside any claimed quote, falling back to the last
/// safe position before the limit.
pub(crate) fn truncate_speech(raw: &str, max_chars: usize) -> String {
    if raw.chars().count() <= max_chars {
        return raw.to_string();
    }
    let limit_byte = raw
        .char_indices()
        .nth(max_chars)
        .map(|(i, _)| i)
        .unwrap_or(raw.len());
    let cut = sentence_cut_points(raw)
        .into_iter()
        .rfind(|&p| p <= limit_byte && position_is_outside_quotes(raw, p));
    let cut = cut.unwrap_or_else(|| {
        // No sentence boundary fits: take the largest char boundary under the
        // limit that is not inside a quote region, else cut before the first
        // open tag.
        let mut best = 0;
        for (i, _) in raw.char_indices() {
            if i > limit_byte {
                break;
            }
            if position_is_outside_quotes(raw, i) {
                best = i;
            }
        }
        best
    });
    raw[..cut].trim_end().to_string()
}

struct SpeechPlan {
    name: DebaterName,
    side: Side,
    turn: u32,
    /// Opponent turns visible to this speech (own prior turns are always
    /// visible).
    opponent_turns_visible: u32,
}

impl SpeechPlan {
    fn context<'t>(
        &self,
        question: &'t Question,
        protocol: ProtocolKind,
        produced: &'t [Speech],
        seed: u64,
        max_speech_chars: usize,
    ) -> SpeechContext<'t> {
        let own_prior: Vec<&Speech> = produced
            .iter()
            .filter(|s| s.author == self.name && s.turn < self.turn)
            .collect();
        let opponent_prior: Vec<&Speech> = produced
            .iter()
            .filter(|s| s.author != self.name && s.turn < self.opponent_turns_visible)
            .collect();
        SpeechContext {
            question,
            protocol,
            name: self.name,
            opponent_name: self.name.other(),
            position: question.answer(self.side),
            opponent_position: question.answer(self.side.other()),
            own_prior,
            opponent_prior,
            turn: self.turn,
            seed,
            max_speech_chars,
        }
    }

}

fn manifest_for(ctx: &SpeechContext<'_>) -> ContextManifest {
    let mut visible: Vec<SpeechRef> = ctx
        .own_prior
        .iter()
        .chain(ctx.opponent_prior.iter())
        .map(|s| SpeechRef {
            author: s.author,
            turn: s.turn,
        })
        .collect();
    visible.sort();
    ContextManifest {
        consumer: ContextConsumer::Speech {
            author: ctx.name,
            turn: ctx.turn,
        },
        visible,
        story_visible: true,
    }
}

/// One speech-generation slot: who speaks, at which turn, under which
/// visibility rule. `salt` distinguishes otherwise-identical slots (e.g.
/// the two samples at a rollout branch point).
pub(crate) struct SpeechJob<'a> {
    pub question: &'a Question,
    pub protocol: ProtocolKind,
    pub assignment: &'a Assignment,
    pub author: DebaterName,
    pub turn: u32,
    /// Opponent turns visible to this speech (own prior turns always are).
    pub opponent_turns_visible: u32,
    pub salt: &'a str,
}

/// Generates, truncates, and verifies one speech with retry-then-abort.
///
/// The per-attempt seed is derived from `(config.seed, question id, side,
/// turn, salt, attempt)` so simultaneous speeches never share a random
/// stream.
pub(crate) fn generate_speech(
    job: &SpeechJob<'_>,
    produced: &[Speech],
    agent: &dyn Debater,
    config: &ProtocolConfig,
) -> Result<(Speech, ContextManifest), ProtocolError> {
    let side = job.assignment.side_of(job.author);
    let plan = SpeechPlan {
        name: job.author,
        side,
        turn: job.turn,
        opponent_turns_visible: job.opponent_turns_visible,
    };
    let side_str = match side {
        Side::Correct => "correct",
        Side::Distractor => "distractor",
    };
    let attempts = config.max_retries + 1;
    let mut last_error = String::new();
    for attempt in 0..attempts {
        let seed = derive_seed_path(
            config.seed,
            "speech",
            &[
                &job.question.id,
                side_str,
                &job.turn.to_string(),
                job.salt,
                &attempt.to_string(),
            ],
        );
        let ctx = plan.context(
            job.question,
            job.protocol,
            produced,
            seed,
            config.max_speech_chars,
        );
        let manifest = manifest_for(&ctx);
        match agent.speak(&ctx) {
            Err(e) => last_error = e.to_string(),
            Ok(raw) => {
                let raw = truncate_speech(&raw, config.max_speech_chars);
                if raw.trim().is_empty() {
                    last_error = "agent produced an empty speech".to_string();
                    continue;
                }
                match verify_quotes(&raw, &job.question.story, config) {
                    Ok((verified_text, quote_spans)) => {
                        return Ok((
                            Speech {
                                author: job.author,
                                turn: job.turn,
                                raw_text: raw,
                                verified_text,
                                quote_spans,
                            },
                            manifest,
                        ))
                    }
                    Err(e @ QuoteError::Unbalanced { .. }) => last_error = e.to_string(),
                }
            }
        }
    }
    Err(ProtocolError::SpeechFailed {
        author: job.author,
        turn: job.turn,
        attempts,
        last_error,
    })
}

pub(crate) fn judge_transcript(
    question: &Question,
    transcript: &Transcript,
    judge: &dyn Judge,
    config: &ProtocolConfig,
    salt: &str,
) -> Result<(Verdict, ContextManifest), ProtocolError> {
    let assignment = &transcript.assignment;
    let positions = [
        (
            DebaterName::A,
            question.answer(assignment.side_of(DebaterName::A)),
        ),
        (
            DebaterName::B,
            question.answer(assignment.side_of(DebaterName::B)),
        ),
    ];
    let attempts = config.max_retries + 1;
    let mut last_error = String::new();
    for attempt in 0..attempts {
        let seed = derive_seed_path(
            config.seed,
            "judge",
            &[&question.id, salt, &attempt.to_string()],
        );
        let ctx = JudgeContext {
            question_id: &question.id,
            topic: &question.question,
            positions,
            speeches: &transcript.speeches,
            protocol: transcript.protocol,
            num_turns: transcript.num_turns,
            seed,
        };
        match judge.judge(&ctx).and_then(|readout| {
            extract_verdict(&readout, assignment).map_err(crate::agents::AgentError::from)
        }) {
            Ok(extraction) => {
                let manifest = ContextManifest {
                    consumer: ContextConsumer::Judge,
                    visible: transcript
                        .speeches
                        .iter()
                        .map(|s| SpeechRef {
                            author: s.author,
                            turn: s.turn,
                        })
                        .collect(),
                    story_visible: false,
                };
                return Ok((extraction.verdict, manifest));
            }
            Err(e) => last_error = e.to_string(),
        }
    }
    Err(ProtocolError::JudgeFailed {
        attempts,
        last_error,
    })
}

fn run_debate_like(
    question: &Question,
    protocol: ProtocolKind,
    agents: &ProtocolAgents<'_>,
    judge: &dyn Judge,
    config: &ProtocolConfig,
) -> Result<JudgedTranscript, ProtocolError> {
    let assignment = assign_sides(question, config.seed);
    let mut speeches: Vec<Speech> = Vec::with_capacity(2 * config.num_turns as usize);
    let mut manifests = Vec::new();
    for turn in 0..config.num_turns {
        // Simultaneous turn: both speeches see only turns < turn.
        let opponent_visible = match protocol {
            ProtocolKind::Debate => turn,
            // Consultants never see the other side.
            ProtocolKind::DoubleConsultancy | ProtocolKind::SingleConsultancy => 0,
        };
        // The two simultaneous speeches share a read-only context, so they
        // may run concurrently; seeds are path-derived, not order-derived.
        let speak = |name: DebaterName| {
            let job = SpeechJob {
                question,
                protocol,
                assignment: &assignment,
                author: name,
                turn,
                opponent_turns_visible: opponent_visible,
                salt: "round",
            };
            generate_speech(&job, &speeches, agents.for_side(assignment.side_of(name)), config)
        };
        let (first, second) = crate::exec::join(|| speak(DebaterName::A), || speak(DebaterName::B));
        for result in [first, second] {
            let (speech, manifest) = result?;
            manifests.push(manifest);
            speeches.push(speech);
        }
    }
    let transcript = Transcript {
        question_id: question.id.clone(),
        protocol,
        num_turns: config.num_turns,
        speeches,
        assignment,
    };
    let (verdict, judge_manifest) = judge_transcript(question, &transcript, judge, config, "round")?;
    Ok(JudgedTranscript {
        transcript,
        verdict,
        speech_manifests: manifests,
        judge_manifest,
        judge_style: JudgeStyle::Debate,
    })
}

fn run_single_consultancy(
    question: &Question,
    side: Side,
    agents: &ProtocolAgents<'_>,
    judge: &dyn Judge,
    config: &ProtocolConfig,
) -> Result<JudgedTranscript, ProtocolError> {
    let assignment = assign_sides(question, config.seed);
    let name = assignment.name_for(side);
    let mut speeches = Vec::with_capacity(config.num_turns as usize);
    let mut manifests = Vec::new();
    for turn in 0..config.num_turns {
        let job = SpeechJob {
            question,
            protocol: ProtocolKind::SingleConsultancy,
            assignment: &assignment,
            author: name,
            turn,
            opponent_turns_visible: 0,
            salt: "round",
        };
        let (speech, manifest) = generate_speech(&job, &speeches, agents.for_side(side), config)?;
        manifests.push(manifest);
        speeches.push(speech);
    }
    let transcript = Transcript {
        question_id: question.id.clone(),
        protocol: ProtocolKind::SingleConsultancy,
        num_turns: config.num_turns,
        speeches,
        assignment,
    };
    let salt = match side {
        Side::Correct => "single-correct",
        Side::Distractor => "single-distractor",
    };
    let (verdict, judge_manifest) = judge_transcript(question, &transcript, judge, config, salt)?;
    Ok(JudgedTranscript {
        transcript,
        verdict,
        speech_manifests: manifests,
        judge_manifest,
        judge_style: JudgeStyle::Consultancy,
    })
}

/// Runs one protocol round and judges it.
///
/// Ensembled consultancy produces two judged transcripts (one single
/// consultancy per answer) plus the aggregated probability; every other
/// variant produces one.
pub fn run_protocol(
    question: &Question,
    protocol: ProtocolSpec,
    agents: &ProtocolAgents<'_>,
    judge: &dyn Judge,
    config: &ProtocolConfig,
) -> Result<ProtocolOutcome, ProtocolError> {
    question.validate()?;
    match protocol {
        ProtocolSpec::Debate => {
            let run = run_debate_like(question, ProtocolKind::Debate, agents, judge, config)?;
            Ok(ProtocolOutcome {
                runs: vec![run],
                ensembled_p_correct: None,
            })
        }
        ProtocolSpec::DoubleConsultancy => {
            let run = run_debate_like(
                question,
                ProtocolKind::DoubleConsultancy,
                agents,
                judge,
                config,
            )?;
            Ok(ProtocolOutcome {
                runs: vec![run],
                ensembled_p_correct: None,
            })
        }
        ProtocolSpec::SingleConsultancy(side) => {
            let run = run_single_consultancy(question, side, agents, judge, config)?;
            Ok(ProtocolOutcome {
                runs: vec![run],
                ensembled_p_correct: None,
            })
        }
        ProtocolSpec::EnsembledConsultancy => {
            let for_correct =
                run_single_consultancy(question, Side::Correct, agents, judge, config)?;
            let for_distractor =
                run_single_consultancy(question, Side::Distractor, agents, judge, config)?;
            let p = aggregate_ensembled(&for_correct, &for_distractor)?;
            Ok(ProtocolOutcome {
                runs: vec![for_correct, for_distractor],
                ensembled_p_correct: Some(p),
            })
        }
    }
}

/// Averages the verdicts of the two per-answer single consultancies.
///
/// Judged correct iff the result exceeds 0.5 (strict).
pub fn aggregate_ensembled(
    v_for_correct: &JudgedTranscript,
    v_for_distractor: &JudgedTranscript,
) -> Result<f64, ProtocolError> {
    let (a, b) = (&v_for_correct.transcript, &v_for_distractor.transcript);
    if a.question_id != b.question_id {
        return Err(ProtocolError::EnsembleMismatch(format!(
            "question ids differ: {} vs {}",
            a.question_id, b.question_id
        )));
    }
    for (run, expected) in [
        (v_for_correct, Side::Correct),
        (v_for_distractor, Side::Distractor),
    ] {
        match run.consultant_side_of_run() {
            Some(side) if side == expected => {}
            other => {
                return Err(ProtocolError::EnsembleMismatch(format!(
                    "expected a single consultancy with the consultant on the {expected:?} side, found {other:?}"
                )))
            }
        }
    }
    Ok((v_for_correct.verdict.p_correct + v_for_distractor.verdict.p_correct) / 2.0)
}

/// One divergence between a recorded context and the protocol's visibility
/// contract.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VisibilityViolation {
    pub consumer: ContextConsumer,
    pub detail: String,
}

/// Recomputes the permitted visible set for every recorded context and
/// reports divergences.
pub fn audit_visibility(run: &JudgedTranscript) -> Vec<VisibilityViolation> {
    let mut violations = Vec::new();
    let protocol = run.transcript.protocol;
    for manifest in &run.speech_manifests {
        let ContextConsumer::Speech { author, turn } = manifest.consumer else {
            violations.push(VisibilityViolation {
                consumer: manifest.consumer,
                detail: "speech manifest recorded with a judge consumer".to_string(),
            });
            continue;
        };
        if !manifest.story_visible {
            violations.push(VisibilityViolation {
                consumer: manifest.consumer,
                detail: "speaker context must include the story".to_string(),
            });
        }
        let mut permitted: Vec<SpeechRef> = match protocol {
            ProtocolKind::Debate => (0..turn)
                .flat_map(|t| {
                    [
                        SpeechRef {
                            author: DebaterName::A,
                            turn: t,
                        },
                        SpeechRef {
                            author: DebaterName::B,
                            turn: t,
                        },
                    ]
                })
                .collect(),
            ProtocolKind::SingleConsultancy | ProtocolKind::DoubleConsultancy => (0..turn)
                .map(|t| SpeechRef { author, turn: t })
                .collect(),
        };
        permitted.sort();
        let mut visible = manifest.visible.clone();
        visible.sort();
        if visible != permitted {
            violations.push(VisibilityViolation {
                consumer: manifest.consumer,
                detail: format!("visible {visible:?} differs from permitted {permitted:?}"),
            });
        }
    }
    let judge = &run.judge_manifest;
    if judge.story_visible {
        violations.push(VisibilityViolation {
            consumer: judge.consumer,
            detail: "judge context must not include the story".to_string(),
        });
    }
    let mut judged: Vec<SpeechRef> = judge.visible.clone();
    judged.sort();
    let mut all: Vec<SpeechRef> = run
        .transcript
        .speeches
        .iter()
        .map(|s| SpeechRef {
            author: s.author,
            turn: s.turn,
        })
        .collect();
    all.sort();
    if judged != all {
        violations.push(VisibilityViolation {
            consumer: judge.consumer,
            detail: "judge context must contain exactly the transcript's speeches".to_string(),
        });
    }
    violations
}

/// Structural signature of the judge's context: prompt family plus the
/// ordered speech slots. Two runs with equal signatures put the judge in
/// the same position regardless of how the speeches were produced.
pub fn judge_context_signature(run: &JudgedTranscript) -> (JudgeStyle, Vec<SpeechRef>) {
    (
        run.judge_style,
        run.transcript
            .speeches
            .iter()
            .map(|s| SpeechRef {
                author: s.author,
                turn: s.turn,
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{AgentError, JudgeReadout, StubDebater, StubJudge};
    use crate::protocol::types::toy_question;

    fn config(turns: u32, seed: u64) -> ProtocolConfig {
        ProtocolConfig {
            num_turns: turns,
            seed,
            ..ProtocolConfig::default()
        }
    }

    fn stub_agents() -> (StubDebater, StubJudge) {
        (StubDebater::new(0.8, 3, 1), StubJudge::new(0.0, 4.0, 2))
    }

    #[test]
    fn debate_two_turns_has_four_speeches_with_two_priors_each() {
        let q = toy_question("q1");
        let (debater, judge) = stub_agents();
        let outcome = run_protocol(
            &q,
            ProtocolSpec::Debate,
            &ProtocolAgents::self_play(&debater),
            &judge,
            &config(2, 5),
        )
        .unwrap();
        let run = &outcome.runs[0];
        assert_eq!(run.transcript.speeches.len(), 4);
        run.transcript.validate().unwrap();
        for manifest in &run.speech_manifests {
            let ContextConsumer::Speech { turn, .. } = manifest.consumer else {
                panic!("speech manifest expected");
            };
            let expected = if turn == 0 { 0 } else { 2 };
            assert_eq!(manifest.visible.len(), expected, "turn {turn}");
        }
        assert!(audit_visibility(run).is_empty());
    }

    #[test]
    fn double_consultancy_single_turn_sees_no_opponent() {
        let q = toy_question("q1");
        let (debater, judge) = stub_agents();
        let outcome = run_protocol(
            &q,
            ProtocolSpec::DoubleConsultancy,
            &ProtocolAgents::self_play(&debater),
            &judge,
            &config(1, 5),
        )
        .unwrap();
        let run = &outcome.runs[0];
        assert_eq!(run.transcript.speeches.len(), 2);
        for manifest in &run.speech_manifests {
            assert!(manifest.visible.is_empty());
        }
        assert!(audit_visibility(run).is_empty());
    }

    #[test]
    fn double_consultancy_never_shows_opponent_speeches() {
        let q = toy_question("q1");
        let (debater, judge) = stub_agents();
        let outcome = run_protocol(
            &q,
            ProtocolSpec::DoubleConsultancy,
            &ProtocolAgents::self_play(&debater),
            &judge,
            &config(2, 9),
        )
        .unwrap();
        let run = &outcome.runs[0];
        for manifest in &run.speech_manifests {
            let ContextConsumer::Speech { author, .. } = manifest.consumer else {
                panic!()
            };
            assert!(manifest.visible.iter().all(|r| r.author == author));
        }
        assert!(audit_visibility(run).is_empty());
    }

    #[test]
    fn single_consultancy_second_context_contains_only_the_first() {
        let q = toy_question("q1");
        let (debater, judge) = stub_agents();
        let outcome = run_protocol(
            &q,
            ProtocolSpec::SingleConsultancy(Side::Correct),
            &ProtocolAgents::self_play(&debater),
            &judge,
            &config(2, 5),
        )
        .unwrap();
        let run = &outcome.runs[0];
        assert_eq!(run.transcript.speeches.len(), 2);
        let second = &run.speech_manifests[1];
        let author = run.transcript.speeches[0].author;
        assert_eq!(second.visible, vec![SpeechRef { author, turn: 0 }]);
        assert!(audit_visibility(run).is_empty());
        assert_eq!(run.consultant_side_of_run(), Some(Side::Correct));
    }

    #[test]
    fn run_is_deterministic() {
        let q = toy_question("q1");
        let (debater, judge) = stub_agents();
        let run = |seed| {
            run_protocol(
                &q,
                ProtocolSpec::Debate,
                &ProtocolAgents::self_play(&debater),
                &judge,
                &config(2, seed),
            )
            .unwrap()
            .runs
            .remove(0)
        };
        assert_eq!(run(5).transcript, run(5).transcript);
        assert_eq!(run(5).verdict, run(5).verdict);
    }

    #[test]
    fn ensembled_averages_and_checks_question_ids() {
        let q = toy_question("q1");
        let (debater, judge) = stub_agents();
        let outcome = run_protocol(
            &q,
            ProtocolSpec::EnsembledConsultancy,
            &ProtocolAgents::self_play(&debater),
            &judge,
            &config(1, 5),
        )
        .unwrap();
        assert_eq!(outcome.runs.len(), 2);
        let expected = (outcome.runs[0].verdict.p_correct + outcome.runs[1].verdict.p_correct) / 2.0;
        assert_eq!(outcome.ensembled_p_correct, Some(expected));

        let other = toy_question("q2");
        let mismatch = run_protocol(
            &other,
            ProtocolSpec::SingleConsultancy(Side::Distractor),
            &ProtocolAgents::self_play(&debater),
            &judge,
            &config(1, 5),
        )
        .unwrap();
        let err = aggregate_ensembled(&outcome.runs[0], &mismatch.runs[0]).unwrap_err();
        assert!(matches!(err, ProtocolError::EnsembleMismatch(_)));
    }

    #[test]
    fn ensembled_is_invariant_to_name_assignment() {
        // The same pair of consultancies judged under flipped display-name
        // assignments must aggregate identically: p_correct already factors
        // the names out.
        let q = toy_question("q1");
        let (debater, judge) = stub_agents();
        let outcome = |seed| {
            run_protocol(
                &q,
                ProtocolSpec::EnsembledConsultancy,
                &ProtocolAgents::self_play(&debater),
                &judge,
                &config(1, seed),
            )
            .unwrap()
        };
        // Seeds chosen so the two runs assign the correct answer to
        // different display names.
        let (seed_a, seed_b) = {
            let base = assign_sides(&q, 0).name_of_correct;
            let flipped = (1..100)
                .find(|&s| assign_sides(&q, s).name_of_correct != base)
                .unwrap();
            (0, flipped)
        };
        let a = outcome(seed_a);
        let b = outcome(seed_b);
        // Aggregation runs off p_correct, so each outcome's ensembled value
        // equals the mean regardless of which name held the correct answer.
        for o in [&a, &b] {
            let expected = (o.runs[0].verdict.p_correct + o.runs[1].verdict.p_correct) / 2.0;
            assert_eq!(o.ensembled_p_correct, Some(expected));
        }
    }

    #[test]
    fn ensembled_arithmetic_matches_examples() {
        // (0.9, 0.9) -> 0.9; (0.8, 0.4) -> 0.6; (0.3, 0.5) -> 0.4 (incorrect
        // under the strict threshold).
        for &(pa, pb, want, correct) in &[
            (0.9f64, 0.9, 0.9, true),
            (0.8, 0.4, 0.6, true),
            (0.3, 0.5, 0.4, false),
        ] {
            let p = (pa + pb) / 2.0;
            assert!((p - want).abs() < 1e-12);
            assert_eq!(p > 0.5, correct);
        }
    }

    struct FailingDebater;
    impl Debater for FailingDebater {
        fn speak(&self, _ctx: &SpeechContext<'_>) -> Result<String, AgentError> {
            Err(AgentError::Other("model offline".to_string()))
        }
    }

    #[test]
    fn agent_failure_aborts_with_turn_recorded() {
        let q = toy_question("q1");
        let (_, judge) = stub_agents();
        let failing = FailingDebater;
        let err = run_protocol(
            &q,
            ProtocolSpec::Debate,
            &ProtocolAgents::self_play(&failing),
            &judge,
            &config(2, 5),
        )
        .unwrap_err();
        match err {
            ProtocolError::SpeechFailed { turn, attempts, .. } => {
                assert_eq!(turn, 0);
                assert_eq!(attempts, 2);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    struct FailingJudge;
    impl Judge for FailingJudge {
        fn judge(&self, _ctx: &JudgeContext<'_>) -> Result<JudgeReadout, AgentError> {
            Err(AgentError::Other("judge offline".to_string()))
        }
    }

    #[test]
    fn judge_failure_aborts() {
        let q = toy_question("q1");
        let (debater, _) = stub_agents();
        let err = run_protocol(
            &q,
            ProtocolSpec::Debate,
            &ProtocolAgents::self_play(&debater),
            &FailingJudge,
            &config(1, 5),
        )
        .unwrap_err();
        assert!(matches!(err, ProtocolError::JudgeFailed { .. }));
    }

    #[test]
    fn double_consultancy_judge_context_matches_debate_at_one_turn() {
        let q = toy_question("q1");
        let (debater, judge) = stub_agents();
        let debate = run_protocol(
            &q,
            ProtocolSpec::Debate,
            &ProtocolAgents::self_play(&debater),
            &judge,
            &config(1, 5),
        )
        .unwrap();
        let double = run_protocol(
            &q,
            ProtocolSpec::DoubleConsultancy,
            &ProtocolAgents::self_play(&debater),
            &judge,
            &config(1, 5),
        )
        .unwrap();
        assert_eq!(
            judge_context_signature(&debate.runs[0]),
            judge_context_signature(&double.runs[0])
        );
    }

    #[test]
    fn consultant_side_balanced() {
        let correct = (0..1000)
            .filter(|&s| consultant_side("q", s) == Side::Correct)
            .count();
        assert!((350..=650).contains(&correct));
    }

    #[test]
    fn truncation_cuts_at_sentence_boundary_outside_quotes() {
        let text = "First sentence. Second <quote>quoted. text</quote> tail. Third part!";
        let out = truncate_speech(text, 40);
        assert_eq!(out, "First sentence.");
        let out = truncate_speech(text, 64);
        assert_eq!(out, "First sentence. Second <quote>quoted. text</quote> tail.");
        let short = truncate_speech("abc", 10);
        assert_eq!(short, "abc");
    }
}
