//! Parallel vs sequential throughput on the batch stages: rollout
//! generation, round-robin tournaments, and batched loss evaluation.
//!
//! Run with `cargo bench -p debatelab`. The parallel variants go through
//! the same rayon entry points the pipelines use; the sequential ones call
//! the plain-loop fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use debatelab::agents::{StubDebater, StubJudge};
use debatelab::dpo::{dpo_plus_loss, CompletionLogProbs, LossParams};
use debatelab::eval::{run_round_robin, run_round_robin_seq, TournamentEntry};
use debatelab::exec::{map_batch, map_batch_seq};
use debatelab::prefgen::{branch_rollout, emit_pairs, score_speeches};
use debatelab::protocol::{ProtocolAgents, ProtocolConfig, ProtocolKind, Question, Side};
use debatelab::synthetic::{synthetic_questions, toy_preference_set};

fn rollout_cells(questions: &[Question]) -> Vec<(usize, Side)> {
    (0..questions.len())
        .flat_map(|i| [(i, Side::Correct), (i, Side::Distractor)])
        .collect()
}

fn run_tree(questions: &[Question], cell: &(usize, Side)) -> usize {
    let debater = StubDebater::new(0.6, 2, 3);
    let judge = StubJudge::new(0.0, 4.0, 11);
    let config = ProtocolConfig {
        num_turns: 2,
        seed: 17,
        ..ProtocolConfig::default()
    };
    let tree = branch_rollout(
        &questions[cell.0],
        cell.1,
        &ProtocolAgents::self_play(&debater),
        &judge,
        &config,
        ProtocolKind::Debate,
    )
    .expect("stub rollouts succeed");
    let scores = score_speeches(&tree).expect("judged tree");
    emit_pairs(&tree, &scores, 17, 1).len()
}

fn bench_rollouts(c: &mut Criterion) {
    let questions = synthetic_questions(24, 5);
    let cells = rollout_cells(&questions);
    let mut group = c.benchmark_group("gen_prefs");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("parallel", cells.len()), |b| {
        b.iter(|| {
            let pairs: usize = map_batch(&cells, |cell| run_tree(&questions, cell))
                .into_iter()
                .sum();
            black_box(pairs)
        })
    });
    group.bench_function(BenchmarkId::new("sequential", cells.len()), |b| {
        b.iter(|| {
            let pairs: usize = map_batch_seq(&cells, |cell| run_tree(&questions, cell))
                .into_iter()
                .sum();
            black_box(pairs)
        })
    });
    group.finish();
}

fn bench_tournament(c: &mut Criterion) {
    let questions = synthetic_questions(12, 9);
    let d1 = StubDebater::new(0.9, 2, 1);
    let d2 = StubDebater::new(0.6, 2, 2);
    let d3 = StubDebater::new(0.3, 2, 3);
    let entries = vec![
        TournamentEntry { id: "a".to_string(), debater: &d1 },
        TournamentEntry { id: "b".to_string(), debater: &d2 },
        TournamentEntry { id: "c".to_string(), debater: &d3 },
    ];
    let judge = StubJudge::new(0.05, 4.0, 7);
    let config = ProtocolConfig::default();
    let mut group = c.benchmark_group("tournament");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter(|| {
            let report = run_round_robin(&entries, &questions, &judge, &config, 5).unwrap();
            black_box(report.results.len())
        })
    });
    group.bench_function("sequential", |b| {
        b.iter(|| {
            let report = run_round_robin_seq(&entries, &questions, &judge, &config, 5).unwrap();
            black_box(report.results.len())
        })
    });
    group.finish();
}

fn bench_loss_batch(c: &mut Criterion) {
    let (pairs, _pools) = toy_preference_set(2_000, 4, 3);
    let params = LossParams::default_debate();
    let inputs: Vec<(f64, f64)> = pairs.iter().map(|p| (p.c0, p.c1)).collect();
    let eval = |&(c0, c1): &(f64, f64)| {
        dpo_plus_loss(
            &CompletionLogProbs { logp_policy: -3.0, logp_ref: -2.5, token_count: 40 },
            &CompletionLogProbs { logp_policy: -4.0, logp_ref: -3.5, token_count: 42 },
            c0,
            c1,
            &params,
        )
        .unwrap()
        .loss
    };
    let mut group = c.benchmark_group("loss_batch");
    group.bench_function("parallel", |b| {
        b.iter(|| black_box(map_batch(&inputs, eval).into_iter().sum::<f64>()))
    });
    group.bench_function("sequential", |b| {
        b.iter(|| black_box(map_batch_seq(&inputs, eval).into_iter().sum::<f64>()))
    });
    group.finish();
}

criterion_group!(benches, bench_rollouts, bench_tournament, bench_loss_batch);
criterion_main!(benches);
