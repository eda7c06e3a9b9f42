//! Branching self-play rollouts and reward-weighted preference pairs.
//!
//! One side of the round is designated the target. Each time the target
//! speaks, two speeches are sampled instead of one and the game tree
//! bifurcates; the non-target side's speech at each depth is sampled once
//! and shared across the bifurcation. After `T` turns there are `2^T`
//! judged leaf transcripts and `2^T - 1` branch points. A speech's reward
//! is the mean judge confidence in the target's position over the leaves of
//! its subtree, and every branch point yields one preference pair whose two
//! speeches replied to the identical context.

use serde::{Deserialize, Serialize};

use crate::agents::Judge;
use crate::protocol::{
    assign_sides, DebaterName, ProtocolConfig, ProtocolError, ProtocolKind, Question, Side,
    Speech, Transcript, Verdict,
};
use crate::seed::derive_seed;
use crate::storage::sha256_hex;

#[derive(Debug, thiserror::Error)]
pub enum PrefGenError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("rollouts need at least one turn")]
    NoTurns,
    #[error("leaf `{0}` is unjudged")]
    UnjudgedLeaf(String),
}

/// Judged endpoint of one root-to-leaf path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeafOutcome {
    pub transcript: Transcript,
    pub verdict: Verdict,
    /// Judge confidence in the target's position.
    pub p_for_target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum RolloutNode {
    Branch(Box<BranchPoint>),
    Leaf(LeafOutcome),
}

/// One sampled target speech and the subtree it leads to.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub speech: Speech,
    pub next: RolloutNode,
}

/// A context from which the target sampled two speeches.
///
/// `path` is the branch-index string from the root (`""`, `"0"`, `"01"`,
/// ...); both candidates share `context_digest` by construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchPoint {
    pub turn: u32,
    pub path: String,
    pub context_digest: String,
    /// The non-target speech at this depth, shared across both candidates.
    /// Absent for consultancy rollouts.
    pub opponent_speech: Option<Speech>,
    pub candidates: [Candidate; 2],
}

/// A full branching rollout for one `(question, target side)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RolloutTree {
    pub question_id: String,
    pub protocol: ProtocolKind,
    pub target_side: Side,
    pub target_name: DebaterName,
    pub num_turns: u32,
    pub root: BranchPoint,
}

impl RolloutTree {
    pub fn leaves(&self) -> Vec<(&str, &LeafOutcome)> {
        let mut leaves = Vec::new();
        collect_leaves(&self.root, &mut leaves);
        leaves
    }

    pub fn branch_points(&self) -> Vec<&BranchPoint> {
        let mut points = Vec::new();
        collect_branches(&self.root, &mut points);
        points
    }
}

fn collect_leaves<'t>(point: &'t BranchPoint, out: &mut Vec<(&'t str, &'t LeafOutcome)>) {
    for candidate in &point.candidates {
        match &candidate.next {
            RolloutNode::Branch(next) => collect_leaves(next, out),
            RolloutNode::Leaf(leaf) => out.push((point.path.as_str(), leaf)),
        }
    }
}

fn collect_branches<'t>(point: &'t BranchPoint, out: &mut Vec<&'t BranchPoint>) {
    out.push(point);
    for candidate in &point.candidates {
        if let RolloutNode::Branch(next) = &candidate.next {
            collect_branches(next, out);
        }
    }
}

/// Reward of one sampled speech: the mean leaf confidence of its subtree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeechScore {
    /// Branch-point path plus candidate index, e.g. `":0"` for the root's
    /// first sample.
    pub speech_path: String,
    pub turn: u32,
    pub reward: f64,
    pub leaf_count: usize,
}

fn subtree_stats(node: &RolloutNode, path: &str) -> Result<(f64, usize), PrefGenError> {
    match node {
        RolloutNode::Leaf(leaf) => {
            if !leaf.p_for_target.is_finite() {
                return Err(PrefGenError::UnjudgedLeaf(path.to_string()));
            }
            Ok((leaf.p_for_target, 1))
        }
        RolloutNode::Branch(point) => {
            let mut sum = 0.0;
            let mut count = 0;
            for (i, candidate) in point.candidates.iter().enumerate() {
                let (s, c) = subtree_stats(&candidate.next, &format!("{}{}", point.path, i))?;
                sum += s;
                count += c;
            }
            Ok((sum, count))
        }
    }
}

/// Scores every sampled target speech by averaging the judge confidences of
/// the leaves in its subtree. A final-turn speech's reward is exactly its
/// single leaf's confidence.
pub fn score_speeches(tree: &RolloutTree) -> Result<Vec<SpeechScore>, PrefGenError> {
    let mut scores = Vec::new();
    for point in tree.branch_points() {
        for (i, candidate) in point.candidates.iter().enumerate() {
            let (sum, count) = subtree_stats(&candidate.next, &point.path)?;
            scores.push(SpeechScore {
                speech_path: format!("{}:{}", point.path, i),
                turn: point.turn,
                reward: sum / count as f64,
                leaf_count: count,
            });
        }
    }
    Ok(scores)
}

/// Two same-context speeches with their estimated rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub schema: String,
    pub pair_id: String,
    pub question_id: String,
    pub target: Side,
    pub turn: u32,
    pub y0: String,
    pub y1: String,
    pub c0: f64,
    pub c1: f64,
    pub context_digest: String,
    pub iteration: u32,
    #[serde(default)]
    pub duplicate: bool,
}

pub const PREFPAIR_SCHEMA: &str = "prefpair/1";

impl PreferencePair {
    /// Deterministic file order: `(question id, target, turn, pair id)`.
    pub fn sort_key(&self) -> (String, u8, u32, String) {
        let side = match self.target {
            Side::Correct => 0u8,
            Side::Distractor => 1u8,
        };
        (self.question_id.clone(), side, self.turn, self.pair_id.clone())
    }
}

/// One preference pair per branch point. Presentation order of `(y0, y1)`
/// is randomized by `order_seed`; byte-equal candidates are emitted with a
/// duplicate flag rather than dropped.
pub fn emit_pairs(
    tree: &RolloutTree,
    scores: &[SpeechScore],
    order_seed: u64,
    iteration: u32,
) -> Vec<PreferencePair> {
    let reward_of = |path: &str| -> f64 {
        scores
            .iter()
            .find(|s| s.speech_path == path)
            .map(|s| s.reward)
            .unwrap_or(f64::NAN)
    };
    let side_tag = match tree.target_side {
        Side::Correct => "correct",
        Side::Distractor => "distractor",
    };
    let mut pairs = Vec::new();
    for point in tree.branch_points() {
        let pair_id = format!(
            "{}:{}:{}:{}",
            tree.question_id,
            side_tag,
            point.turn,
            if point.path.is_empty() { "root" } else { &point.path }
        );
        let mut y0 = point.candidates[0].speech.raw_text.clone();
        let mut y1 = point.candidates[1].speech.raw_text.clone();
        let mut c0 = reward_of(&format!("{}:0", point.path));
        let mut c1 = reward_of(&format!("{}:1", point.path));
        if derive_seed(order_seed, "pair-order", &pair_id) & 1 == 1 {
            std::mem::swap(&mut y0, &mut y1);
            std::mem::swap(&mut c0, &mut c1);
        }
        let duplicate = y0 == y1;
        pairs.push(PreferencePair {
            schema: PREFPAIR_SCHEMA.to_string(),
            pair_id,
            question_id: tree.question_id.clone(),
            target: tree.target_side,
            turn: point.turn,
            y0,
            y1,
            c0,
            c1,
            context_digest: point.context_digest.clone(),
            iteration,
            duplicate,
        });
    }
    pairs
}

/// Combines pair datasets from several iterations into one deterministically
/// shuffled training set.
pub fn merge_and_shuffle(datasets: &[Vec<PreferencePair>], shuffle_seed: u64) -> Vec<PreferencePair> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut all: Vec<PreferencePair> = datasets.iter().flatten().cloned().collect();
    all.sort_by_key(|p| (p.iteration, p.sort_key()));
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(shuffle_seed);
    all.shuffle(&mut rng);
    all
}

/// Leaf/pair counts implied by the bifurcation rule.
pub fn expected_counts(num_turns: u32) -> (usize, usize) {
    let leaves = 1usize << num_turns;
    (leaves, leaves - 1)
}

/// Digest of the target's generation context at a branch point: everything
/// the two samples could condition on.
fn context_digest(
    question: &Question,
    protocol: ProtocolKind,
    target_side: Side,
    turn: u32,
    visible: &[Speech],
) -> String {
    let mut payload = format!(
        "{}\u{1f}{:?}\u{1f}{:?}\u{1f}{}\u{1f}",
        question.id, protocol, target_side, turn
    );
    for speech in visible {
        payload.push_str(&format!(
            "{}|{}|{}\u{1e}",
            speech.author, speech.turn, speech.verified_text
        ));
    }
    sha256_hex(payload.as_bytes())
}

struct TreeBuilder<'a> {
    question: &'a Question,
    protocol: ProtocolKind,
    assignment: crate::protocol::Assignment,
    target_name: DebaterName,
    target_side: Side,
    agents: &'a crate::protocol::ProtocolAgents<'a>,
    judge: &'a dyn Judge,
    config: &'a ProtocolConfig,
}

impl TreeBuilder<'_> {
    fn build(&self, turn: u32, prefix: &[Speech], path: String) -> Result<BranchPoint, PrefGenError> {
        let opponent_name = self.target_name.other();
        // The shared non-target speech for this depth; simultaneous, so it
        // sees only turns < turn, like the two target samples.
        let opponent_speech = if self.protocol == ProtocolKind::Debate {
            let salt = format!("tree-opp-{path}");
            let job = crate::protocol::run_support::SpeechJob {
                question: self.question,
                protocol: self.protocol,
                assignment: &self.assignment,
                author: opponent_name,
                turn,
                opponent_turns_visible: turn,
                salt: &salt,
            };
            let (speech, _manifest) = crate::protocol::run_support::generate_speech(
                &job,
                prefix,
                self.agents.for_side(self.target_side.other()),
                self.config,
            )?;
            Some(speech)
        } else {
            None
        };
        let visible_to_target: Vec<Speech> = prefix.to_vec();
        let digest = context_digest(
            self.question,
            self.protocol,
            self.target_side,
            turn,
            &visible_to_target,
        );
        let mut candidates = Vec::with_capacity(2);
        for sample in 0..2 {
            let salt = format!("tree-{path}-s{sample}");
            let job = crate::protocol::run_support::SpeechJob {
                question: self.question,
                protocol: self.protocol,
                assignment: &self.assignment,
                author: self.target_name,
                turn,
                opponent_turns_visible: turn,
                salt: &salt,
            };
            let (speech, _manifest) = crate::protocol::run_support::generate_speech(
                &job,
                prefix,
                self.agents.for_side(self.target_side),
                self.config,
            )?;
            let mut extended: Vec<Speech> = prefix.to_vec();
            extended.push(speech.clone());
            if let Some(opp) = &opponent_speech {
                extended.push(opp.clone());
            }
            extended.sort_by_key(|s| (s.turn, s.author));
            let child_path = format!("{path}{sample}");
            let next = if turn + 1 < self.config.num_turns {
                RolloutNode::Branch(Box::new(self.build(turn + 1, &extended, child_path)?))
            } else {
                RolloutNode::Leaf(self.judge_leaf(extended, &child_path)?)
            };
            candidates.push(Candidate { speech, next });
        }
        let candidates: [Candidate; 2] = candidates.try_into().expect("two samples");
        Ok(BranchPoint {
            turn,
            path,
            context_digest: digest,
            opponent_speech,
            candidates,
        })
    }

    fn judge_leaf(&self, speeches: Vec<Speech>, path: &str) -> Result<LeafOutcome, PrefGenError> {
        let transcript = Transcript {
            question_id: self.question.id.clone(),
            protocol: self.protocol,
            num_turns: self.config.num_turns,
            speeches,
            assignment: self.assignment,
        };
        let (verdict, _manifest) = crate::protocol::run_support::judge_transcript(
            self.question,
            &transcript,
            self.judge,
            self.config,
            &format!("leaf-{path}"),
        )?;
        let p_for_target = verdict.p_for(self.target_name);
        Ok(LeafOutcome {
            transcript,
            verdict,
            p_for_target,
        })
    }
}

/// Runs one branching rollout. Any speech or judging failure fails the
/// whole tree; no partial pairs are ever emitted.
pub fn branch_rollout(
    question: &Question,
    target_side: Side,
    agents: &crate::protocol::ProtocolAgents<'_>,
    judge: &dyn Judge,
    config: &ProtocolConfig,
    protocol: ProtocolKind,
) -> Result<RolloutTree, PrefGenError> {
    if config.num_turns == 0 {
        return Err(PrefGenError::NoTurns);
    }
    question.validate().map_err(ProtocolError::from)?;
    let assignment = assign_sides(question, config.seed);
    let target_name = assignment.name_for(target_side);
    let builder = TreeBuilder {
        question,
        protocol,
        assignment,
        target_name,
        target_side,
        agents,
        judge,
        config,
    };
    let root = builder.build(0, &[], String::new())?;
    Ok(RolloutTree {
        question_id: question.id.clone(),
        protocol,
        target_side,
        target_name,
        num_turns: config.num_turns,
        root,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{StubDebater, StubJudge};
    use crate::protocol::ProtocolAgents;

    fn question() -> Question {
        Question {
            id: "q-tree".to_string(),
            story: "The beacon failed on the third night. \
                    The crew counted four ships before the fog. \
                    A spare lamp hung in the storeroom. \
                    The harbormaster kept his ledger closed. \
                    Morning came with clear skies."
                .to_string(),
            question: "How many ships did the crew count?".to_string(),
            correct_answer: "four ships".to_string(),
            distractor_answer: "no ships".to_string(),
            difficulty_label: None,
        }
    }

    fn config(turns: u32, seed: u64) -> ProtocolConfig {
        ProtocolConfig {
            num_turns: turns,
            seed,
            ..ProtocolConfig::default()
        }
    }

    fn run_tree(turns: u32, seed: u64, protocol: ProtocolKind) -> RolloutTree {
        let q = question();
        let debater = StubDebater::new(0.6, 2, 3);
        let judge = StubJudge::new(0.0, 4.0, 11);
        branch_rollout(
            &q,
            Side::Correct,
            &ProtocolAgents::self_play(&debater),
            &judge,
            &config(turns, seed),
            protocol,
        )
        .unwrap()
    }

    #[test]
    fn two_turns_give_four_leaves_three_branch_points() {
        let tree = run_tree(2, 7, ProtocolKind::Debate);
        assert_eq!(tree.leaves().len(), 4);
        assert_eq!(tree.branch_points().len(), 3);
        let scores = score_speeches(&tree).unwrap();
        let pairs = emit_pairs(&tree, &scores, 7, 1);
        assert_eq!(pairs.len(), 3);
        let mut turns: Vec<u32> = pairs.iter().map(|p| p.turn).collect();
        turns.sort();
        assert_eq!(turns, vec![0, 1, 1]);
    }

    #[test]
    fn one_turn_gives_two_leaves_one_pair() {
        let tree = run_tree(1, 7, ProtocolKind::Debate);
        assert_eq!(tree.leaves().len(), 2);
        let scores = score_speeches(&tree).unwrap();
        assert_eq!(emit_pairs(&tree, &scores, 7, 1).len(), 1);
    }

    #[test]
    fn consultancy_trees_have_no_opponent_and_same_counts() {
        let tree = run_tree(2, 9, ProtocolKind::SingleConsultancy);
        assert_eq!(tree.leaves().len(), 4);
        assert_eq!(tree.branch_points().len(), 3);
        for point in tree.branch_points() {
            assert!(point.opponent_speech.is_none());
        }
        for (_, leaf) in tree.leaves() {
            assert_eq!(leaf.transcript.speeches.len(), 2);
            assert!(leaf
                .transcript
                .speeches
                .iter()
                .all(|s| s.author == tree.target_name));
        }
    }

    #[test]
    fn opponent_speech_is_shared_across_sibling_subtrees() {
        let tree = run_tree(2, 13, ProtocolKind::Debate);
        let opponent = tree.target_name.other();
        // Each branch's subtree reuses the one opponent speech generated for
        // that depth: compare the opponent turn-1 speech across the two
        // leaves under each turn-1 branch point.
        for point in tree.branch_points().iter().filter(|p| p.turn == 1) {
            let shared = point.opponent_speech.as_ref().unwrap();
            for candidate in &point.candidates {
                let RolloutNode::Leaf(leaf) = &candidate.next else {
                    panic!("turn-1 candidates end in leaves");
                };
                let in_transcript = leaf
                    .transcript
                    .speeches
                    .iter()
                    .find(|s| s.author == opponent && s.turn == 1)
                    .unwrap();
                assert_eq!(in_transcript.raw_text, shared.raw_text);
            }
        }
    }

    #[test]
    fn final_turn_reward_is_the_leaf_confidence() {
        let tree = run_tree(2, 21, ProtocolKind::Debate);
        let scores = score_speeches(&tree).unwrap();
        for point in tree.branch_points().iter().filter(|p| p.turn == 1) {
            for (i, candidate) in point.candidates.iter().enumerate() {
                let RolloutNode::Leaf(leaf) = &candidate.next else {
                    panic!()
                };
                let score = scores
                    .iter()
                    .find(|s| s.speech_path == format!("{}:{}", point.path, i))
                    .unwrap();
                assert_eq!(score.leaf_count, 1);
                assert!((score.reward - leaf.p_for_target).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn first_turn_reward_is_the_two_point_mean() {
        let tree = run_tree(2, 33, ProtocolKind::Debate);
        let scores = score_speeches(&tree).unwrap();
        let leaves = tree.leaves();
        // Candidate 0 of the root owns the leaves whose branch path starts
        // with "0".
        let mean_of = |prefix: &str| {
            let subset: Vec<f64> = leaves
                .iter()
                .filter(|(path, _)| path.starts_with(prefix))
                .map(|(_, leaf)| leaf.p_for_target)
                .collect();
            subset.iter().sum::<f64>() / subset.len() as f64
        };
        let score0 = scores.iter().find(|s| s.speech_path == ":0").unwrap();
        let score1 = scores.iter().find(|s| s.speech_path == ":1").unwrap();
        assert_eq!(score0.leaf_count, 2);
        assert!((score0.reward - mean_of("0")).abs() < 1e-12);
        assert!((score1.reward - mean_of("1")).abs() < 1e-12);
    }

    #[test]
    fn reward_conservation_at_the_root() {
        let tree = run_tree(2, 41, ProtocolKind::Debate);
        let scores = score_speeches(&tree).unwrap();
        let root_mean = (scores.iter().find(|s| s.speech_path == ":0").unwrap().reward
            + scores.iter().find(|s| s.speech_path == ":1").unwrap().reward)
            / 2.0;
        let leaves = tree.leaves();
        let leaf_mean =
            leaves.iter().map(|(_, l)| l.p_for_target).sum::<f64>() / leaves.len() as f64;
        assert!((root_mean - leaf_mean).abs() < 1e-12);
    }

    #[test]
    fn pairs_share_context_digests_and_flag_duplicates() {
        // Fully greedy stubs produce byte-equal samples at every branch.
        let q = question();
        let debater = StubDebater::new(1.0, 2, 3);
        let judge = StubJudge::new(0.0, 4.0, 11);
        let tree = branch_rollout(
            &q,
            Side::Correct,
            &ProtocolAgents::self_play(&debater),
            &judge,
            &config(2, 5),
            ProtocolKind::Debate,
        )
        .unwrap();
        let scores = score_speeches(&tree).unwrap();
        let pairs = emit_pairs(&tree, &scores, 5, 1);
        for pair in &pairs {
            assert!(pair.duplicate);
            assert_eq!(pair.c0, pair.c1);
            assert!(!pair.context_digest.is_empty());
        }
    }

    struct FailingJudge;
    impl Judge for FailingJudge {
        fn judge(
            &self,
            _ctx: &crate::protocol::JudgeContext<'_>,
        ) -> Result<crate::agents::JudgeReadout, crate::agents::AgentError> {
            Err(crate::agents::AgentError::Other("judge down".to_string()))
        }
    }

    #[test]
    fn judging_failure_fails_the_whole_tree() {
        let q = question();
        let debater = StubDebater::new(0.6, 2, 3);
        let result = branch_rollout(
            &q,
            Side::Correct,
            &ProtocolAgents::self_play(&debater),
            &FailingJudge,
            &config(2, 5),
            ProtocolKind::Debate,
        );
        assert!(matches!(result, Err(PrefGenError::Protocol(_))));
    }

    #[test]
    fn unjudged_leaf_is_an_error() {
        let mut tree = run_tree(1, 7, ProtocolKind::Debate);
        if let RolloutNode::Leaf(leaf) = &mut tree.root.candidates[0].next {
            leaf.p_for_target = f64::NAN;
        }
        assert!(matches!(
            score_speeches(&tree),
            Err(PrefGenError::UnjudgedLeaf(_))
        ));
    }

    #[test]
    fn merge_and_shuffle_is_deterministic_and_complete() {
        let tree = run_tree(2, 7, ProtocolKind::Debate);
        let scores = score_speeches(&tree).unwrap();
        let batch1 = emit_pairs(&tree, &scores, 7, 1);
        let batch2 = emit_pairs(&tree, &scores, 7, 2);
        let merged_a = merge_and_shuffle(&[batch1.clone(), batch2.clone()], 99);
        let merged_b = merge_and_shuffle(&[batch1.clone(), batch2.clone()], 99);
        assert_eq!(merged_a, merged_b);
        assert_eq!(merged_a.len(), 6);
        let merged_c = merge_and_shuffle(&[batch1, batch2], 100);
        assert_ne!(
            merged_a.iter().map(|p| &p.pair_id).collect::<Vec<_>>(),
            merged_c.iter().map(|p| &p.pair_id).collect::<Vec<_>>()
        );
    }

    #[test]
    fn expected_counts_match_the_bifurcation_rule() {
        assert_eq!(expected_counts(1), (2, 1));
        assert_eq!(expected_counts(2), (4, 3));
        assert_eq!(expected_counts(3), (8, 7));
        // Dataset arithmetic: both sides of every question, pairs per tree.
        let questions = 1_252usize;
        let (_, pairs_per_tree) = expected_counts(2);
        assert_eq!(questions * 2 * pairs_per_tree, 7_512);
    }
}
