//! Deterministic stub agents for offline end-to-end runs.
//!
//! The stub debater quotes the story sentences that best overlap its
//! assigned answer, degraded by a skill knob; the stub judge scores each
//! side by how much of its answer is covered by valid quotes. Together they
//! make every pipeline runnable, seeded, and reproducible without a model
//! endpoint.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::verdict::JudgeReadout;
use super::{AgentError, AgentSpec, Debater, Judge};
use crate::protocol::{DebaterName, JudgeContext, SpeechContext};
use crate::seed::derive_seed_path;

/// Lowercased alphanumeric word tokens.
pub(crate) fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().filter_map(|token| {
        let trimmed: String = token
            .trim_matches(|c: char| !c.is_alphanumeric())
            .to_lowercase();
        (!trimmed.is_empty()).then_some(trimmed)
    })
}

/// Splits a story into sentence slices (each an exact substring of the
/// story, so quoting them verifies).
pub(crate) fn split_sentences(story: &str) -> Vec<&str> {
    let mut sentences = Vec::new();
    let mut start = 0usize;
    for (i, b) in story.bytes().enumerate() {
        if matches!(b, b'.' | b'!' | b'?') {
            let end = i + 1;
            let slice = story[start..end].trim();
            if !slice.is_empty() {
                sentences.push(slice);
            }
            start = end;
        }
    }
    let tail = story[start..].trim();
    if !tail.is_empty() {
        sentences.push(tail);
    }
    sentences
}

fn overlap_score(sentence: &str, answer: &str) -> usize {
    let answer_words: std::collections::BTreeSet<String> = words(answer).collect();
    words(sentence)
        .filter(|w| answer_words.contains(w))
        .collect::<std::collections::BTreeSet<_>>()
        .len()
}

/// Seeded debater that quotes high-overlap story sentences.
///
/// With probability `skill` each quote slot takes the next best-ranked
/// sentence (by lexical overlap with the defended answer); otherwise it
/// takes a uniformly random one. `skill = 1` is fully greedy and
/// deterministic, `skill = 0` quotes at random.
#[derive(Debug, Clone, Copy)]
pub struct StubDebater {
    pub skill: f64,
    pub quotes_per_speech: usize,
    pub seed: u64,
}

impl StubDebater {
    pub fn new(skill: f64, quotes_per_speech: usize, seed: u64) -> StubDebater {
        StubDebater {
            skill: skill.clamp(0.0, 1.0),
            quotes_per_speech: quotes_per_speech.max(1),
            seed,
        }
    }

    pub fn from_spec(spec: &AgentSpec) -> StubDebater {
        StubDebater::new(spec.skill, 3, spec.seed)
    }

    fn pick_quotes<'s>(&self, ctx: &SpeechContext<'s>) -> Result<Vec<&'s str>, AgentError> {
        let sentences = split_sentences(&ctx.question.story);
        if sentences.is_empty() {
            return Err(AgentError::EmptyStory);
        }
        // Prefer material not already quoted in this speaker's prior speeches.
        let prior_quotes: std::collections::BTreeSet<String> = ctx
            .own_prior
            .iter()
            .flat_map(|s| s.valid_quotes())
            .map(crate::protocol::normalize_for_match)
            .collect();
        let mut ranked: Vec<usize> = (0..sentences.len()).collect();
        ranked.sort_by_key(|&i| {
            (
                std::cmp::Reverse(overlap_score(sentences[i], ctx.position)),
                prior_quotes.contains(&crate::protocol::normalize_for_match(sentences[i])),
                i,
            )
        });
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_path(
            self.seed,
            "stub-debater",
            &[&ctx.seed.to_string()],
        ));
        let k = self.quotes_per_speech.min(sentences.len());
        let mut taken = vec![false; sentences.len()];
        let mut quotes = Vec::with_capacity(k);
        let mut next_best = 0usize;
        for _ in 0..k {
            let use_best = rng.random::<f64>() < self.skill;
            let pick = if use_best {
                while next_best < ranked.len() && taken[ranked[next_best]] {
                    next_best += 1;
                }
                ranked[next_best.min(ranked.len() - 1)]
            } else {
                let free: Vec<usize> = (0..sentences.len()).filter(|&i| !taken[i]).collect();
                free[rng.random_range(0..free.len())]
            };
            taken[pick] = true;
            quotes.push(sentences[pick]);
        }
        Ok(quotes)
    }
}

impl Debater for StubDebater {
    fn speak(&self, ctx: &SpeechContext<'_>) -> Result<String, AgentError> {
        let quotes = self.pick_quotes(ctx)?;
        let mut speech = if ctx.turn == 0 {
            format!(
                "I am {}, and the answer is \"{}\". The background text settles this. ",
                ctx.name, ctx.position
            )
        } else {
            format!(
                "As {}, I maintain that \"{}\" is the answer. ",
                ctx.name, ctx.position
            )
        };
        for quote in quotes {
            speech.push_str("The text states: <quote>");
            speech.push_str(quote);
            speech.push_str("</quote> ");
        }
        speech.push_str(&format!(
            "Nothing supports \"{}\" over this reading.",
            ctx.opponent_position
        ));
        Ok(speech)
    }
}

/// Seeded judge that scores each name by the fraction of its answer's words
/// covered by that name's valid quotes, plus optional zero-mean noise, and
/// maps the score difference through a logistic.
///
/// Invalid-quote content is ignored. A name with no speeches at all (the
/// absent side of a single consultancy) scores `absence_prior`: the judge
/// reasons from absence instead of always siding with the consultant.
#[derive(Debug, Clone, Copy)]
pub struct StubJudge {
    pub noise_scale: f64,
    pub sharpness: f64,
    pub absence_prior: f64,
    pub seed: u64,
}

impl StubJudge {
    pub fn new(noise_scale: f64, sharpness: f64, seed: u64) -> StubJudge {
        StubJudge {
            noise_scale,
            sharpness,
            absence_prior: 0.35,
            seed,
        }
    }

    pub fn from_spec(spec: &AgentSpec) -> StubJudge {
        StubJudge::new(spec.noise_scale, 4.0, spec.seed)
    }

    fn side_score(&self, ctx: &JudgeContext<'_>, name: DebaterName, answer: &str) -> f64 {
        let speeches: Vec<_> = ctx.speeches.iter().filter(|s| s.author == name).collect();
        if speeches.is_empty() {
            return self.absence_prior;
        }
        let answer_words: std::collections::BTreeSet<String> = words(answer).collect();
        if answer_words.is_empty() {
            return 0.0;
        }
        let quoted: std::collections::BTreeSet<String> = speeches
            .iter()
            .flat_map(|s| s.valid_quotes())
            .flat_map(words)
            .collect();
        answer_words.iter().filter(|w| quoted.contains(*w)).count() as f64
            / answer_words.len() as f64
    }

    fn side_noise(&self, ctx: &JudgeContext<'_>, answer: &str) -> f64 {
        if self.noise_scale <= 0.0 {
            return 0.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_path(
            self.seed,
            "stub-judge-noise",
            &[ctx.question_id, answer],
        ));
        // Per-side deviations sized so the difference has sd = noise_scale.
        let normal = Normal::new(0.0, self.noise_scale / std::f64::consts::SQRT_2)
            .expect("positive scale");
        normal.sample(&mut rng)
    }
}

impl Judge for StubJudge {
    fn judge(&self, ctx: &JudgeContext<'_>) -> Result<JudgeReadout, AgentError> {
        let [(name_a, answer_a), (name_b, answer_b)] = ctx.positions;
        let score_a = self.side_score(ctx, name_a, answer_a) + self.side_noise(ctx, answer_a);
        let score_b = self.side_score(ctx, name_b, answer_b) + self.side_noise(ctx, answer_b);
        let p_a = 1.0 / (1.0 + (-self.sharpness * (score_a - score_b)).exp());
        Ok(JudgeReadout::from_probs(p_a, 1.0 - p_a))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{
        assign_sides, ProtocolConfig, ProtocolKind, Question, QuoteSpan, Speech,
    };

    fn toy_question() -> Question {
        Question {
            id: "toy".to_string(),
            story: "The freighter carried mail to the outer station. \
                    Its pilot counted four ships near the relay. \
                    The relay hummed all night. \
                    Dinner was served cold. \
                    Nobody mentioned the storm."
                .to_string(),
            question: "How many ships did the pilot count?".to_string(),
            correct_answer: "four ships".to_string(),
            distractor_answer: "nine ships".to_string(),
            difficulty_label: None,
        }
    }

    fn ctx_for<'a>(q: &'a Question, seed: u64) -> SpeechContext<'a> {
        SpeechContext {
            question: q,
            protocol: ProtocolKind::Debate,
            name: DebaterName::A,
            opponent_name: DebaterName::B,
            position: &q.correct_answer,
            opponent_position: &q.distractor_answer,
            own_prior: vec![],
            opponent_prior: vec![],
            turn: 0,
            seed,
            max_speech_chars: 2_400,
        }
    }

    #[test]
    fn full_skill_is_deterministic() {
        let q = toy_question();
        let debater = StubDebater::new(1.0, 2, 3);
        let a = debater.speak(&ctx_for(&q, 17)).unwrap();
        let b = debater.speak(&ctx_for(&q, 17)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn full_skill_quotes_the_best_overlap_sentence() {
        // Independent oracle: recompute overlaps for the five sentences by
        // hand; the one containing the full answer string must win.
        let q = toy_question();
        let sentences = split_sentences(&q.story);
        let oracle_best = sentences
            .iter()
            .enumerate()
            .max_by_key(|(i, s)| (overlap_score(s, &q.correct_answer), usize::MAX - i))
            .map(|(_, s)| *s)
            .unwrap();
        assert!(oracle_best.contains("four ships"));
        let debater = StubDebater::new(1.0, 1, 3);
        let speech = debater.speak(&ctx_for(&q, 17)).unwrap();
        assert!(speech.contains(&format!("<quote>{oracle_best}</quote>")));
    }

    #[test]
    fn zero_skill_quotes_vary_with_seed() {
        let q = toy_question();
        let debater = StubDebater::new(0.0, 1, 3);
        let picks: std::collections::BTreeSet<String> = (0..20)
            .map(|s| debater.speak(&ctx_for(&q, s)).unwrap())
            .collect();
        assert!(picks.len() > 1, "random quotes should differ across seeds");
    }

    #[test]
    fn empty_story_is_an_error() {
        let mut q = toy_question();
        q.story = "   ".to_string();
        let debater = StubDebater::new(1.0, 1, 3);
        assert!(matches!(
            debater.speak(&ctx_for(&q, 0)),
            Err(AgentError::EmptyStory)
        ));
    }

    #[test]
    fn stub_speeches_verify_cleanly() {
        let q = toy_question();
        let debater = StubDebater::new(0.5, 3, 3);
        let raw = debater.speak(&ctx_for(&q, 4)).unwrap();
        let (_, spans) =
            crate::protocol::verify_quotes(&raw, &q.story, &ProtocolConfig::default()).unwrap();
        assert!(!spans.is_empty());
        assert!(spans.iter().all(|s| s.valid));
    }

    fn speech(author: DebaterName, turn: u32, quoted: &str, valid: bool) -> Speech {
        let open = if valid { "<quote>" } else { "<invalid_quote>" };
        let close = if valid { "</quote>" } else { "</invalid_quote>" };
        let verified = format!("claim {open}{quoted}{close} done");
        let start = "claim ".len() + open.len();
        Speech {
            author,
            turn,
            raw_text: format!("claim <quote>{quoted}</quote> done"),
            verified_text: verified,
            quote_spans: vec![QuoteSpan {
                start,
                end: start + quoted.len(),
                valid,
            }],
        }
    }

    fn judge_ctx<'a>(q: &'a Question, speeches: &'a [Speech]) -> JudgeContext<'a> {
        JudgeContext {
            question_id: &q.id,
            topic: &q.question,
            positions: [
                (DebaterName::A, q.correct_answer.as_str()),
                (DebaterName::B, q.distractor_answer.as_str()),
            ],
            speeches,
            protocol: ProtocolKind::Debate,
            num_turns: 1,
            seed: 0,
        }
    }

    #[test]
    fn symmetric_input_gives_even_probs() {
        let q = toy_question();
        let speeches = vec![
            speech(DebaterName::A, 0, "the relay hummed", false),
            speech(DebaterName::B, 0, "the relay hummed", false),
        ];
        let judge = StubJudge::new(0.0, 4.0, 1);
        let readout = judge.judge(&judge_ctx(&q, &speeches)).unwrap();
        let probs = readout.name_token_probs.unwrap();
        assert!((probs[&DebaterName::A] - 0.5).abs() < 1e-12);
        assert!((probs[&DebaterName::B] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn answer_covering_quotes_win() {
        // Hand-computed: A's valid quote covers both answer words (score 1),
        // B has an invalid quote only (score 0), so p(A) = sigmoid(4) > 0.5.
        let q = toy_question();
        let speeches = vec![
            speech(DebaterName::A, 0, "counted four ships near", true),
            speech(DebaterName::B, 0, "nine ships everywhere", false),
        ];
        let judge = StubJudge::new(0.0, 4.0, 1);
        let readout = judge.judge(&judge_ctx(&q, &speeches)).unwrap();
        let p_a = readout.name_token_probs.unwrap()[&DebaterName::A];
        let expected = 1.0 / (1.0 + (-4.0_f64).exp());
        assert!((p_a - expected).abs() < 1e-12);
    }

    #[test]
    fn invalid_quotes_are_ignored() {
        let q = toy_question();
        let with_invalid = vec![
            speech(DebaterName::A, 0, "counted four ships", false),
            speech(DebaterName::B, 0, "unrelated words", false),
        ];
        let judge = StubJudge::new(0.0, 4.0, 1);
        let readout = judge.judge(&judge_ctx(&q, &with_invalid)).unwrap();
        let p_a = readout.name_token_probs.unwrap()[&DebaterName::A];
        assert!((p_a - 0.5).abs() < 1e-12);
    }

    #[test]
    fn name_order_does_not_move_p_correct() {
        let q = toy_question();
        let assignment_a = assign_sides(&q, 0);
        // Build the same content under both name labelings.
        let build = |correct_name: DebaterName| {
            vec![
                speech(correct_name, 0, "counted four ships near the relay", true),
                speech(correct_name.other(), 0, "dinner was served cold", true),
            ]
        };
        let judge = StubJudge::new(0.05, 4.0, 9);
        let p_correct_of = |correct_name: DebaterName| {
            let speeches = build(correct_name);
            let ctx = JudgeContext {
                question_id: &q.id,
                topic: &q.question,
                positions: if correct_name == DebaterName::A {
                    [
                        (DebaterName::A, q.correct_answer.as_str()),
                        (DebaterName::B, q.distractor_answer.as_str()),
                    ]
                } else {
                    [
                        (DebaterName::A, q.distractor_answer.as_str()),
                        (DebaterName::B, q.correct_answer.as_str()),
                    ]
                },
                speeches: &speeches,
                protocol: ProtocolKind::Debate,
                num_turns: 1,
                seed: 0,
            };
            let probs = judge.judge(&ctx).unwrap().name_token_probs.unwrap();
            probs[&correct_name]
        };
        let _ = assignment_a;
        assert!((p_correct_of(DebaterName::A) - p_correct_of(DebaterName::B)).abs() < 1e-12);
    }

    #[test]
    fn absent_side_scores_the_absence_prior() {
        let q = toy_question();
        let speeches = vec![speech(DebaterName::A, 0, "dinner was served cold", true)];
        let judge = StubJudge::new(0.0, 4.0, 1);
        let readout = judge.judge(&judge_ctx(&q, &speeches)).unwrap();
        let p_a = readout.name_token_probs.unwrap()[&DebaterName::A];
        // A quoted nothing relevant (score 0), absent B holds the prior, so
        // the judge leans against the consultant.
        let expected = 1.0 / (1.0 + (4.0_f64 * judge.absence_prior).exp());
        assert!((p_a - expected).abs() < 1e-12);
    }
}
