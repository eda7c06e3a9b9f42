//! Seeded generators for synthetic stories, questions, rollout trees, and
//! toy preference sets. These power the offline pipelines, the benches,
//! and the test suites; nothing here is wired to any external dataset.
//!
//! Stories are built so that the correct answer has full-sentence quotable
//! support while the distractor answer is only ever half-supported (its
//! sentences carry one of its two words). A quote-overlap judge can then
//! separate the sides exactly when the debaters surface the right
//! passages, which is what makes the skill knob measurable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dpo::CandidatePools;
use crate::prefgen::{
    BranchPoint, Candidate, LeafOutcome, PreferencePair, RolloutNode, RolloutTree,
    PREFPAIR_SCHEMA,
};
use crate::protocol::{
    Assignment, DebaterName, ProtocolKind, Question, Side, Speech, Transcript, Verdict,
};
use crate::seed::derive_seed;

const ADJECTIVES: &[&str] = &[
    "silver", "copper", "amber", "ivory", "crimson", "cobalt", "olive", "violet", "golden",
    "slate",
];
const NOUNS: &[&str] = &[
    "compass", "lantern", "ledger", "anchor", "spyglass", "chart", "bell", "cargo", "sextant",
    "pennant",
];
const SUBJECTS: &[&str] = &[
    "The steward", "The bosun", "The navigator", "The cook", "The harbormaster", "The lookout",
    "The carpenter", "The quartermaster",
];
const DOINGS: &[&str] = &[
    "checked the ropes at dusk",
    "counted the barrels twice",
    "watched the horizon for hours",
    "mended the torn sail",
    "swept the lower deck",
    "logged the morning weather",
    "shared out the rations",
    "argued about the tide tables",
];

const STORY_SENTENCES: usize = 12;

/// Generates `n` questions with seeded stories, answers, and alternating
/// easy/hard difficulty labels. Hard questions carry a single fully
/// supporting sentence for the correct answer; easy ones carry three.
pub fn synthetic_questions(n: usize, seed: u64) -> Vec<Question> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "question", &i.to_string()));
            let adj_correct = ADJECTIVES[rng.random_range(0..ADJECTIVES.len())];
            let noun_correct = NOUNS[rng.random_range(0..NOUNS.len())];
            let (adj_distractor, noun_distractor) = loop {
                let a = ADJECTIVES[rng.random_range(0..ADJECTIVES.len())];
                let o = NOUNS[rng.random_range(0..NOUNS.len())];
                if a != adj_correct && o != noun_correct {
                    break (a, o);
                }
            };
            let correct = format!("the {adj_correct} {noun_correct}");
            let distractor = format!("the {adj_distractor} {noun_distractor}");
            let hard = i % 2 == 1;
            let support_count = if hard { 1 } else { 3 };
            let mut sentences: Vec<String> = Vec::with_capacity(STORY_SENTENCES);
            let support_templates = [
                format!("The captain locked {correct} in the sea chest before nightfall."),
                format!("Everyone aboard saw {correct} pass from hand to hand."),
                format!("A line in the log mentioned {correct} beside the tally."),
            ];
            sentences.extend(support_templates.iter().take(support_count).cloned());
            // Half-support for the distractor: its adjective only, never its
            // noun, so quoting cannot cover the full phrase.
            sentences.push(format!("A {adj_distractor} kettle steamed by the galley stove."));
            sentences.push(format!("Someone had left a {adj_distractor} ribbon on the rail."));
            while sentences.len() < STORY_SENTENCES {
                let subject = SUBJECTS[rng.random_range(0..SUBJECTS.len())];
                let doing = DOINGS[rng.random_range(0..DOINGS.len())];
                sentences.push(format!("{subject} {doing}."));
            }
            // Seeded interleave so support sentences sit at varying offsets.
            for swap in 0..sentences.len() {
                let other = rng.random_range(0..sentences.len());
                sentences.swap(swap, other);
            }
            Question {
                id: format!("syn-{i:04}"),
                story: sentences.join(" "),
                question: "Which item did the captain lock in the sea chest?".to_string(),
                correct_answer: correct,
                distractor_answer: distractor,
                difficulty_label: Some(if hard { "hard" } else { "easy" }.to_string()),
            }
        })
        .collect()
}

/// A toy preference dataset whose rewards always favor candidate 0 of each
/// prompt's pool. Returns the pairs and the matching candidate pools.
pub fn toy_preference_set(
    n_prompts: usize,
    pool_size: usize,
    seed: u64,
) -> (Vec<PreferencePair>, CandidatePools) {
    assert!(pool_size >= 2, "need at least two candidates per pool");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    let mut pools = CandidatePools::new();
    for p in 0..n_prompts {
        let prompt = format!("prompt-{p:03}");
        let pool: Vec<String> = (0..pool_size)
            .map(|c| format!("{prompt} candidate {c}"))
            .collect();
        for challenger in 1..pool_size {
            let c_best: f64 = rng.random_range(0.70..0.95);
            let c_other: f64 = rng.random_range(0.10..0.45);
            let flip = rng.random::<bool>();
            let (y0, y1, c0, c1) = if flip {
                (pool[challenger].clone(), pool[0].clone(), c_other, c_best)
            } else {
                (pool[0].clone(), pool[challenger].clone(), c_best, c_other)
            };
            pairs.push(PreferencePair {
                schema: PREFPAIR_SCHEMA.to_string(),
                pair_id: format!("{prompt}:{challenger}"),
                question_id: prompt.clone(),
                target: Side::Correct,
                turn: 0,
                y0,
                y1,
                c0,
                c1,
                context_digest: prompt.clone(),
                iteration: 1,
                duplicate: false,
            });
        }
        pools.insert(prompt, pool);
    }
    (pairs, pools)
}

fn placeholder_speech(author: DebaterName, turn: u32, path: &str) -> Speech {
    let text = format!("sampled speech {path} at turn {turn}");
    Speech {
        author,
        turn,
        raw_text: text.clone(),
        verified_text: text,
        quote_spans: Vec::new(),
    }
}

fn random_node(
    turn: u32,
    num_turns: u32,
    path: String,
    rng: &mut ChaCha8Rng,
    assignment: &Assignment,
) -> RolloutNode {
    if turn < num_turns {
        RolloutNode::Branch(Box::new(random_branch(turn, num_turns, path, rng, assignment)))
    } else {
        let p_for_target: f64 = rng.random_range(0.0..1.0);
        let speeches: Vec<Speech> = (0..num_turns)
            .map(|t| placeholder_speech(assignment.name_of_correct, t, &path))
            .collect();
        RolloutNode::Leaf(LeafOutcome {
            transcript: Transcript {
                question_id: "synthetic".to_string(),
                protocol: ProtocolKind::SingleConsultancy,
                num_turns,
                speeches,
                assignment: *assignment,
            },
            verdict: Verdict::from_p_correct(p_for_target, assignment),
            p_for_target,
        })
    }
}

fn random_branch(
    turn: u32,
    num_turns: u32,
    path: String,
    rng: &mut ChaCha8Rng,
    assignment: &Assignment,
) -> BranchPoint {
    let make = |i: usize, rng: &mut ChaCha8Rng| Candidate {
        speech: placeholder_speech(assignment.name_of_correct, turn, &format!("{path}{i}")),
        next: random_node(turn + 1, num_turns, format!("{path}{i}"), rng, assignment),
    };
    let c0 = make(0, rng);
    let c1 = make(1, rng);
    BranchPoint {
        turn,
        path: path.clone(),
        context_digest: format!("ctx-{path}"),
        opponent_speech: None,
        candidates: [c0, c1],
    }
}

/// A structurally valid rollout tree with uniformly random leaf
/// confidences, for exercising scoring against independent oracles.
pub fn synthetic_rollout_tree(num_turns: u32, seed: u64) -> RolloutTree {
    assert!(num_turns >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let assignment = Assignment {
        name_of_correct: DebaterName::A,
        name_of_distractor: DebaterName::B,
        seed,
    };
    RolloutTree {
        question_id: "synthetic".to_string(),
        protocol: ProtocolKind::SingleConsultancy,
        target_side: Side::Correct,
        target_name: DebaterName::A,
        num_turns,
        root: random_branch(0, num_turns, String::new(), &mut rng, &assignment),
    }
}
