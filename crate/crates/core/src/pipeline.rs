//! Command orchestration: the library layer behind the CLI.
//!
//! Every command reads one declarative [`RunConfig`], writes its artifacts
//! under the configured output directory, and finishes by writing a
//! manifest listing each artifact with its digest. With stub agents and a
//! warm cache, re-running a command reproduces every artifact byte for
//! byte; only the manifest timestamp moves.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agents::{
    AgentKind, AgentSpec, Debater, Judge, PromptLibrary, RemoteAgent, RemoteClient, RemoteConfig,
};
use crate::dpo::{
    calibrate_gamma, clamp_confidence, dpo_plus_loss, total_preferred_weight, CompletionLogProbs,
    DpoError, LossParams, RewardShape, RewardShapeKind,
};
use crate::eval::{
    fit_elo, implied_winrate, judge_accuracy, run_round_robin, skill_accuracy_series,
    style_metrics, AccuracyProtocol, AccuracyReport, CheckpointPoint, EvalError, JudgmentRecord,
    StyleReport, TournamentEntry,
};
use crate::exec;
use crate::prefgen::{branch_rollout, emit_pairs, score_speeches, PreferencePair, PREFPAIR_SCHEMA};
use crate::protocol::{
    consultant_side, run_protocol, ContextManifest, JudgeStyle, JudgedTranscript, ProtocolAgents,
    ProtocolConfig, ProtocolKind, ProtocolSpec, Question, Side, Transcript, Verdict,
};
use crate::seed::derive_seed_path;
use crate::storage::{
    load_questions, read_jsonl, CacheError, ConsultancyVariant, DatasetError, ManifestError,
    ResponseCache, RosterEntry, RunConfig, RunManifest,
};

pub const TRANSCRIPT_SCHEMA: &str = "transcript/1";
pub const JUDGMENT_SCHEMA: &str = "judgment/1";
pub const ENSEMBLED_SCHEMA: &str = "ensembled/1";
pub const MATCH_SCHEMA: &str = "match/1";
pub const ELO_SCHEMA: &str = "elo/1";
pub const REPORT_SCHEMA: &str = "report/1";
pub const LOSSCHECK_SCHEMA: &str = "losscheck/1";
pub const PAIRLOGP_SCHEMA: &str = "pairlogp/1";
pub const GAMMA_SCHEMA: &str = "gamma/1";
pub const CSV_SCHEMA: &str = "csv/1";
pub const TEXT_SCHEMA: &str = "text/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunCommand {
    Debate,
    Consultancy,
    GenPrefs,
    Tournament,
    Report,
    LossCheck,
    CalibrateGamma,
}

impl RunCommand {
    pub fn name(self) -> &'static str {
        match self {
            RunCommand::Debate => "debate",
            RunCommand::Consultancy => "consultancy",
            RunCommand::GenPrefs => "gen-prefs",
            RunCommand::Tournament => "tournament",
            RunCommand::Report => "report",
            RunCommand::LossCheck => "loss-check",
            RunCommand::CalibrateGamma => "calibrate-gamma",
        }
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub no_cache: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    InvalidConfig(Vec<String>),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("io error at {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Dpo(#[from] DpoError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("every item failed; first error: {0}")]
    TotalFailure(String),
}

/// What a command run produced.
#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub output_dir: PathBuf,
    /// True when some items failed and were excluded.
    pub partial: bool,
    pub notes: Vec<String>,
}

/// One judged transcript as persisted to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub schema: String,
    pub transcript: Transcript,
    pub verdict: Verdict,
    pub judge_style: JudgeStyle,
    pub speech_manifests: Vec<ContextManifest>,
    pub judge_manifest: ContextManifest,
    pub provenance: BTreeMap<String, String>,
}

impl TranscriptRecord {
    fn from_run(run: JudgedTranscript, provenance: BTreeMap<String, String>) -> TranscriptRecord {
        TranscriptRecord {
            schema: TRANSCRIPT_SCHEMA.to_string(),
            transcript: run.transcript,
            verdict: run.verdict,
            judge_style: run.judge_style,
            speech_manifests: run.speech_manifests,
            judge_manifest: run.judge_manifest,
            provenance,
        }
    }

    fn consultant_side(&self) -> Option<Side> {
        if self.transcript.protocol != ProtocolKind::SingleConsultancy {
            return None;
        }
        self.transcript
            .speeches
            .first()
            .map(|s| self.transcript.assignment.side_of(s.author))
    }

    fn judgment(&self, label: Option<&str>) -> JudgmentRecord {
        JudgmentRecord {
            question_id: self.transcript.question_id.clone(),
            difficulty_label: label.map(str::to_string),
            p_correct: self.verdict.p_correct,
            confidence: self.verdict.confidence,
            chosen_correct: self.verdict.chosen == self.transcript.assignment.name_of_correct,
            consultant_side: self.consultant_side(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembledRecord {
    pub schema: String,
    pub question_id: String,
    pub p_correct: f64,
    pub correct: bool,
}

/// Log-probability annotations for one stored pair, as produced by an
/// external trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairLogProbs {
    pub schema: String,
    pub pair_id: String,
    pub y0: CompletionLogProbs,
    pub y1: CompletionLogProbs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCheckRecord {
    pub schema: String,
    pub pair_id: String,
    pub loss: f64,
    pub target_p: f64,
    pub model_p: f64,
    pub grad_logp_policy_y0: f64,
    pub grad_logp_policy_y1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaRecord {
    pub schema: String,
    pub shape: RewardShapeKind,
    pub target_total_weight: f64,
    pub gamma: f64,
    pub n_pairs: usize,
    pub achieved_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportRecord {
    Accuracy {
        schema: String,
        #[serde(flatten)]
        report: AccuracyReport,
    },
    Style {
        schema: String,
        #[serde(flatten)]
        report: StyleReport,
    },
}

struct ArtifactDir<'a> {
    dir: &'a Path,
    manifest: &'a mut RunManifest,
}

impl ArtifactDir<'_> {
    fn write_bytes(&mut self, name: &str, schema: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| PipelineError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        self.manifest.record_artifact(name, schema, bytes);
        Ok(())
    }

    fn write_jsonl<T: Serialize>(
        &mut self,
        name: &str,
        schema: &str,
        records: &[T],
    ) -> Result<(), PipelineError> {
        let mut bytes = Vec::new();
        for record in records {
            serde_json::to_writer(&mut bytes, record).expect("serializable record");
            bytes.push(b'\n');
        }
        self.write_bytes(name, schema, &bytes)
    }

    fn write_json<T: Serialize>(
        &mut self,
        name: &str,
        schema: &str,
        value: &T,
    ) -> Result<(), PipelineError> {
        let mut bytes = serde_json::to_vec_pretty(value).expect("serializable value");
        bytes.push(b'\n');
        self.write_bytes(name, schema, &bytes)
    }
}

enum BuiltDebater {
    Stub(crate::agents::StubDebater),
    Remote(RemoteAgent),
}

impl Debater for BuiltDebater {
    fn speak(
        &self,
        ctx: &crate::protocol::SpeechContext<'_>,
    ) -> Result<String, crate::agents::AgentError> {
        match self {
            BuiltDebater::Stub(inner) => inner.speak(ctx),
            BuiltDebater::Remote(inner) => inner.speak(ctx),
        }
    }
}

enum BuiltJudge {
    Stub(crate::agents::StubJudge),
    Remote(RemoteAgent),
}

impl Judge for BuiltJudge {
    fn judge(
        &self,
        ctx: &crate::protocol::JudgeContext<'_>,
    ) -> Result<crate::agents::JudgeReadout, crate::agents::AgentError> {
        match self {
            BuiltJudge::Stub(inner) => inner.judge(ctx),
            BuiltJudge::Remote(inner) => inner.judge(ctx),
        }
    }
}

struct AgentFactory {
    remote: Option<Arc<RemoteClient>>,
    prompts: PromptLibrary,
}

impl AgentFactory {
    fn new(config: &RunConfig, overrides: &RunOverrides) -> Result<AgentFactory, PipelineError> {
        let mut prompts = PromptLibrary::default();
        if let Some(dir) = &config.agents.prompt_dir {
            prompts
                .load_overrides(dir)
                .map_err(|e| PipelineError::InvalidConfig(vec![e.to_string()]))?;
        }
        let remote = match &config.remote {
            Some(remote_config) => {
                let mut remote_config = remote_config.clone();
                if overrides.no_cache {
                    remote_config.cache = false;
                }
                let cache = match (&config.cache_dir, remote_config.cache) {
                    (Some(dir), true) => Some(ResponseCache::open(dir)?),
                    _ => None,
                };
                Some(Arc::new(RemoteClient::http(remote_config, cache)))
            }
            None => None,
        };
        Ok(AgentFactory { remote, prompts })
    }

    fn debater(&self, spec: &AgentSpec) -> Result<BuiltDebater, PipelineError> {
        match spec.kind {
            AgentKind::StubDebater => Ok(BuiltDebater::Stub(
                crate::agents::StubDebater::from_spec(spec),
            )),
            AgentKind::Remote => {
                let client = self.remote.clone().ok_or_else(|| {
                    PipelineError::InvalidConfig(vec![
                        "remote agent requested without a [remote] section".to_string(),
                    ])
                })?;
                Ok(BuiltDebater::Remote(RemoteAgent::new(
                    client,
                    self.prompts.clone(),
                )))
            }
            AgentKind::StubJudge => Err(PipelineError::InvalidConfig(vec![
                "agents.debater: a stub_judge spec cannot speak".to_string(),
            ])),
        }
    }

    fn judge(&self, spec: &AgentSpec) -> Result<BuiltJudge, PipelineError> {
        match spec.kind {
            AgentKind::StubJudge => Ok(BuiltJudge::Stub(crate::agents::StubJudge::from_spec(spec))),
            AgentKind::Remote => {
                let client = self.remote.clone().ok_or_else(|| {
                    PipelineError::InvalidConfig(vec![
                        "remote judge requested without a [remote] section".to_string(),
                    ])
                })?;
                Ok(BuiltJudge::Remote(RemoteAgent::new(
                    client,
                    self.prompts.clone(),
                )))
            }
            AgentKind::StubDebater => Err(PipelineError::InvalidConfig(vec![
                "agents.judge: a stub_debater spec cannot judge".to_string(),
            ])),
        }
    }
}

fn command_problems(command: RunCommand, config: &RunConfig) -> Vec<String> {
    let mut problems = Vec::new();
    match command {
        RunCommand::Tournament => {
            if config.tournament.roster.len() < 2 {
                problems.push("tournament.roster: need at least 2 entries".to_string());
            }
        }
        RunCommand::Report => {
            if config.report.transcripts.is_none() {
                problems.push("report.transcripts: required for the report command".to_string());
            }
        }
        RunCommand::LossCheck => {
            if config.loss_check.pairs.is_none() {
                problems.push("loss_check.pairs: required for the loss-check command".to_string());
            }
            if config.loss_check.logprobs.is_none() {
                problems
                    .push("loss_check.logprobs: required for the loss-check command".to_string());
            }
        }
        RunCommand::CalibrateGamma => {
            if config.calibrate.pairs.is_none() {
                problems.push("calibrate.pairs: required for calibrate-gamma".to_string());
            }
            if config.calibrate.target_total_weight.is_none() {
                problems
                    .push("calibrate.target_total_weight: required for calibrate-gamma".to_string());
            }
        }
        _ => {}
    }
    problems
}

/// Runs one subcommand end to end: validate, execute, write artifacts,
/// write the manifest.
pub fn cmd_run(
    command: RunCommand,
    config: &RunConfig,
    overrides: &RunOverrides,
) -> Result<RunOutcome, PipelineError> {
    let mut problems = config.validate();
    problems.extend(command_problems(command, config));
    if !problems.is_empty() {
        return Err(PipelineError::InvalidConfig(problems));
    }
    let seed = overrides.seed.unwrap_or(config.seed);
    let workers = overrides.workers.unwrap_or(config.workers);
    // Each command writes a self-contained directory so its manifest can
    // account for every file in it.
    let output_dir = config.output_dir.join(command.name());
    std::fs::create_dir_all(&output_dir).map_err(|e| PipelineError::Io {
        path: output_dir.display().to_string(),
        message: e.to_string(),
    })?;
    let mut manifest = RunManifest::new(command.name(), &config.digest(), seed);
    manifest.warnings.extend(config.protocol.to_protocol_config(seed).warnings());
    let factory = AgentFactory::new(config, overrides)?;
    let partial = exec::with_workers(workers, || -> Result<bool, PipelineError> {
        let mut artifacts = ArtifactDir {
            dir: &output_dir,
            manifest: &mut manifest,
        };
        match command {
            RunCommand::Debate => cmd_debate(config, seed, &factory, &mut artifacts),
            RunCommand::Consultancy => cmd_consultancy(config, seed, &factory, &mut artifacts),
            RunCommand::GenPrefs => cmd_gen_prefs(config, seed, &factory, &mut artifacts),
            RunCommand::Tournament => cmd_tournament(config, seed, &factory, &mut artifacts),
            RunCommand::Report => cmd_report(config, &mut artifacts),
            RunCommand::LossCheck => cmd_loss_check(config, &mut artifacts),
            RunCommand::CalibrateGamma => cmd_calibrate(config, &mut artifacts),
        }
    })?;
    manifest.write(&output_dir)?;
    let notes = manifest.warnings.clone();
    Ok(RunOutcome {
        manifest,
        output_dir,
        partial,
        notes,
    })
}

/// Provenance recorded on every transcript an agent touches. Remote agents
/// report the endpoint's model and sampling params, not the spec stanza.
fn effective_provenance(
    spec: &AgentSpec,
    remote: Option<&RemoteConfig>,
) -> BTreeMap<String, String> {
    let mut provenance = spec.provenance();
    if spec.kind == AgentKind::Remote {
        if let Some(remote) = remote {
            provenance.insert("model_name".to_string(), remote.model.clone());
            provenance.insert("temperature".to_string(), format!("{}", remote.temperature));
            provenance.insert("max_tokens".to_string(), format!("{}", remote.max_tokens));
            provenance.insert("endpoint".to_string(), remote.endpoint.clone());
        }
    }
    provenance
}

fn protocol_config_for(config: &RunConfig, seed: u64, question_id: &str, salt: &str) -> ProtocolConfig {
    config
        .protocol
        .to_protocol_config(derive_seed_path(seed, "protocol", &[salt, question_id]))
}

type RunResult = Result<Vec<(TranscriptRecord, JudgmentRecord)>, (String, String)>;

/// One self-play batch over the dataset: which agents run, under which
/// seed/salt, and what provenance lands on each record.
struct ProtocolBatch<'a> {
    questions: &'a [Question],
    debater: &'a BuiltDebater,
    judge: &'a BuiltJudge,
    config: &'a RunConfig,
    seed: u64,
    salt: &'a str,
    provenance: &'a BTreeMap<String, String>,
}

fn run_protocol_batch(
    batch: &ProtocolBatch<'_>,
    spec_of: impl Fn(&Question) -> ProtocolSpec + Sync,
) -> (Vec<TranscriptRecord>, Vec<JudgmentRecord>, Vec<EnsembledRecord>, Vec<String>) {
    let ProtocolBatch {
        questions,
        debater,
        judge,
        config,
        seed,
        salt,
        provenance,
    } = *batch;
    let outcomes: Vec<(RunResult, Option<EnsembledRecord>)> = exec::map_batch(questions, |q| {
        let protocol_config = protocol_config_for(config, seed, &q.id, salt);
        let agents = ProtocolAgents::self_play(debater);
        match run_protocol(q, spec_of(q), &agents, judge, &protocol_config) {
            Ok(outcome) => {
                let ensembled = outcome.ensembled_p_correct.map(|p| EnsembledRecord {
                    schema: ENSEMBLED_SCHEMA.to_string(),
                    question_id: q.id.clone(),
                    p_correct: p,
                    correct: p > 0.5,
                });
                let rows = outcome
                    .runs
                    .into_iter()
                    .map(|run| {
                        let record = TranscriptRecord::from_run(run, provenance.clone());
                        let judgment = record.judgment(q.difficulty_label.as_deref());
                        (record, judgment)
                    })
                    .collect();
                (Ok(rows), ensembled)
            }
            Err(e) => ((Err((q.id.clone(), e.to_string()))), None),
        }
    });
    let mut transcripts = Vec::new();
    let mut judgments = Vec::new();
    let mut ensembled = Vec::new();
    let mut failures = Vec::new();
    for (outcome, ensemble) in outcomes {
        match outcome {
            Ok(rows) => {
                for (record, judgment) in rows {
                    transcripts.push(record);
                    judgments.push(judgment);
                }
                ensembled.extend(ensemble);
            }
            Err((id, error)) => failures.push(format!("{id}: {error}")),
        }
    }
    (transcripts, judgments, ensembled, failures)
}

fn finish_batch(
    artifacts: &mut ArtifactDir<'_>,
    transcripts: &[TranscriptRecord],
    judgments: &[JudgmentRecord],
    ensembled: &[EnsembledRecord],
    failures: Vec<String>,
) -> Result<bool, PipelineError> {
    if transcripts.is_empty() {
        if let Some(first) = failures.first() {
            return Err(PipelineError::TotalFailure(first.clone()));
        }
    }
    artifacts.write_jsonl("transcripts.jsonl", TRANSCRIPT_SCHEMA, transcripts)?;
    artifacts.write_jsonl("judgments.jsonl", JUDGMENT_SCHEMA, judgments)?;
    if !ensembled.is_empty() {
        artifacts.write_jsonl("ensembled.jsonl", ENSEMBLED_SCHEMA, ensembled)?;
    }
    let partial = !failures.is_empty();
    artifacts.manifest.failed_items.extend(failures);
    Ok(partial)
}

fn cmd_debate(
    config: &RunConfig,
    seed: u64,
    factory: &AgentFactory,
    artifacts: &mut ArtifactDir<'_>,
) -> Result<bool, PipelineError> {
    let (questions, dataset_digest) = load_questions(&config.dataset)?;
    artifacts.manifest.dataset_digest = Some(dataset_digest);
    let debater = factory.debater(&config.agents.debater)?;
    let judge = factory.judge(&config.agents.judge)?;
    let provenance = effective_provenance(&config.agents.debater, config.remote.as_ref());
    let batch = ProtocolBatch {
        questions: &questions,
        debater: &debater,
        judge: &judge,
        config,
        seed,
        salt: "debate",
        provenance: &provenance,
    };
    let (transcripts, judgments, ensembled, failures) =
        run_protocol_batch(&batch, |_| ProtocolSpec::Debate);
    finish_batch(artifacts, &transcripts, &judgments, &ensembled, failures)
}

fn cmd_consultancy(
    config: &RunConfig,
    seed: u64,
    factory: &AgentFactory,
    artifacts: &mut ArtifactDir<'_>,
) -> Result<bool, PipelineError> {
    let (questions, dataset_digest) = load_questions(&config.dataset)?;
    artifacts.manifest.dataset_digest = Some(dataset_digest);
    let debater = factory.debater(&config.agents.debater)?;
    let judge = factory.judge(&config.agents.judge)?;
    let provenance = effective_provenance(&config.agents.debater, config.remote.as_ref());
    let variant = config.consultancy.variant.clone();
    let batch = ProtocolBatch {
        questions: &questions,
        debater: &debater,
        judge: &judge,
        config,
        seed,
        salt: "consultancy",
        provenance: &provenance,
    };
    let (transcripts, judgments, ensembled, failures) = run_protocol_batch(&batch, |q| {
        match variant {
            ConsultancyVariant::Single => {
                ProtocolSpec::SingleConsultancy(consultant_side(&q.id, seed))
            }
            ConsultancyVariant::Ensembled => ProtocolSpec::EnsembledConsultancy,
            ConsultancyVariant::Double => ProtocolSpec::DoubleConsultancy,
        }
    });
    finish_batch(artifacts, &transcripts, &judgments, &ensembled, failures)
}

fn cmd_gen_prefs(
    config: &RunConfig,
    seed: u64,
    factory: &AgentFactory,
    artifacts: &mut ArtifactDir<'_>,
) -> Result<bool, PipelineError> {
    let (questions, dataset_digest) = load_questions(&config.dataset)?;
    artifacts.manifest.dataset_digest = Some(dataset_digest);
    let debater = factory.debater(&config.agents.debater)?;
    let judge = factory.judge(&config.agents.judge)?;
    let protocol = if config.prefgen.use_consultancy {
        ProtocolKind::SingleConsultancy
    } else {
        ProtocolKind::Debate
    };
    let cells: Vec<(usize, Side)> = (0..questions.len())
        .flat_map(|i| [(i, Side::Correct), (i, Side::Distractor)])
        .collect();
    let outcomes = exec::map_batch(&cells, |(index, side)| {
        let question = &questions[*index];
        let side_tag = match side {
            Side::Correct => "correct",
            Side::Distractor => "distractor",
        };
        let protocol_config = config.protocol.to_protocol_config(derive_seed_path(
            seed,
            "prefgen",
            &[&question.id, side_tag],
        ));
        let agents = ProtocolAgents::self_play(&debater);
        branch_rollout(question, *side, &agents, &judge, &protocol_config, protocol)
            .and_then(|tree| {
                let scores = score_speeches(&tree)?;
                let order_seed = derive_seed_path(seed, "pair-order", &[&question.id, side_tag]);
                Ok(emit_pairs(
                    &tree,
                    &scores,
                    order_seed,
                    config.prefgen.iteration,
                ))
            })
            .map_err(|e| format!("{}/{side_tag}: {e}", question.id))
    });
    let mut pairs: Vec<PreferencePair> = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(tree_pairs) => pairs.extend(tree_pairs),
            Err(message) => failures.push(message),
        }
    }
    if pairs.is_empty() {
        if let Some(first) = failures.first() {
            return Err(PipelineError::TotalFailure(first.clone()));
        }
    }
    pairs.sort_by_key(|p| p.sort_key());
    artifacts.write_jsonl("pairs.jsonl", PREFPAIR_SCHEMA, &pairs)?;
    let partial = !failures.is_empty();
    artifacts.manifest.failed_items.extend(failures);
    Ok(partial)
}

fn cmd_tournament(
    config: &RunConfig,
    seed: u64,
    factory: &AgentFactory,
    artifacts: &mut ArtifactDir<'_>,
) -> Result<bool, PipelineError> {
    let (questions, dataset_digest) = load_questions(&config.dataset)?;
    artifacts.manifest.dataset_digest = Some(dataset_digest);
    let judge = factory.judge(&config.agents.judge)?;
    let roster: &[RosterEntry] = &config.tournament.roster;
    let debaters: Vec<BuiltDebater> = roster
        .iter()
        .map(|entry| factory.debater(&entry.agent))
        .collect::<Result<_, _>>()?;
    let entries: Vec<TournamentEntry<'_>> = roster
        .iter()
        .zip(&debaters)
        .map(|(entry, debater)| TournamentEntry {
            id: entry.id.clone(),
            debater,
        })
        .collect();
    let protocol_config = config.protocol.to_protocol_config(seed);
    let report = run_round_robin(&entries, &questions, &judge, &protocol_config, seed)?;
    artifacts.write_jsonl("matches.jsonl", MATCH_SCHEMA, &report.results)?;
    let mut failures: Vec<String> = report
        .failures
        .iter()
        .map(|f| format!("{} vs {} on {}: {}", f.model_a, f.model_b, f.question_id, f.error))
        .collect();
    let table = fit_elo(&report.results)?;
    let implied: BTreeMap<String, f64> = table
        .ratings
        .keys()
        .map(|model| {
            let rate = implied_winrate(&table, model).expect("model from table");
            (model.clone(), rate)
        })
        .collect();
    artifacts.write_json(
        "elo.json",
        ELO_SCHEMA,
        &serde_json::json!({
            "schema": ELO_SCHEMA,
            "table": table,
            "implied_winrates": implied,
        }),
    )?;
    // Self-play accuracy per checkpoint, paired with the implied win rate.
    let mut accuracy_reports = Vec::new();
    let mut points = Vec::new();
    for (entry, debater) in roster.iter().zip(&debaters) {
        let provenance = effective_provenance(&entry.agent, config.remote.as_ref());
        let batch = ProtocolBatch {
            questions: &questions,
            debater,
            judge: &judge,
            config,
            seed: derive_seed_path(seed, "selfplay", &[&entry.id]),
            salt: "selfplay",
            provenance: &provenance,
        };
        let (_, judgments, _, mut entry_failures) =
            run_protocol_batch(&batch, |_| ProtocolSpec::Debate);
        failures.append(&mut entry_failures);
        if judgments.is_empty() {
            continue;
        }
        let report = judge_accuracy(&judgments, AccuracyProtocol::Debate, &entry.id, config.report.bins)?;
        points.push(CheckpointPoint {
            checkpoint: entry.id.clone(),
            win_rate: implied[&entry.id],
            accuracy: report.accuracy,
        });
        accuracy_reports.push(ReportRecord::Accuracy {
            schema: REPORT_SCHEMA.to_string(),
            report,
        });
    }
    artifacts.write_jsonl("accuracy.jsonl", REPORT_SCHEMA, &accuracy_reports)?;
    let series = skill_accuracy_series(&points);
    let mut csv = String::from("# columns: checkpoint,win_rate,accuracy\n");
    for point in &points {
        csv.push_str(&format!(
            "{},{},{}\n",
            point.checkpoint, point.win_rate, point.accuracy
        ));
    }
    if let Ok(series) = &series {
        csv.push_str(&format!(
            "# ols_slope: {} stderr: {}\n",
            series.slope, series.slope_stderr
        ));
    }
    artifacts.write_bytes("skill_accuracy.csv", CSV_SCHEMA, csv.as_bytes())?;
    let mut standings = String::from("model           rating    implied_winrate\n");
    for (model, rating) in &table.ratings {
        standings.push_str(&format!(
            "{model:<15} {rating:>8.2}  {:>15.4}{}\n",
            implied[model],
            if table.divergent.contains(model) { "  (divergent)" } else { "" },
        ));
    }
    artifacts.write_bytes("standings.txt", TEXT_SCHEMA, standings.as_bytes())?;
    let partial = !failures.is_empty();
    artifacts.manifest.failed_items.extend(failures);
    Ok(partial)
}

fn cmd_report(config: &RunConfig, artifacts: &mut ArtifactDir<'_>) -> Result<bool, PipelineError> {
    let transcripts_path = config
        .report
        .transcripts
        .as_ref()
        .expect("validated by command_problems");
    let records: Vec<TranscriptRecord> = read_jsonl(transcripts_path)?;
    let (questions, dataset_digest) = load_questions(&config.dataset)?;
    artifacts.manifest.dataset_digest = Some(dataset_digest);
    let labels: BTreeMap<&str, Option<&str>> = questions
        .iter()
        .map(|q| (q.id.as_str(), q.difficulty_label.as_deref()))
        .collect();
    let judgment_of = |record: &TranscriptRecord| {
        record.judgment(
            labels
                .get(record.transcript.question_id.as_str())
                .copied()
                .flatten(),
        )
    };
    let mut by_protocol: BTreeMap<ProtocolKind, Vec<&TranscriptRecord>> = BTreeMap::new();
    for record in &records {
        by_protocol
            .entry(record.transcript.protocol)
            .or_default()
            .push(record);
    }
    let checkpoint = config.report.checkpoint.as_str();
    let bins = config.report.bins;
    let mut report_records: Vec<ReportRecord> = Vec::new();
    let mut all_judgments: Vec<JudgmentRecord> = Vec::new();
    for (protocol, group) in &by_protocol {
        let judgments: Vec<JudgmentRecord> = group.iter().map(|r| judgment_of(r)).collect();
        all_judgments.extend(judgments.iter().cloned());
        let accuracy_protocol = match protocol {
            ProtocolKind::Debate => AccuracyProtocol::Debate,
            ProtocolKind::SingleConsultancy => AccuracyProtocol::SingleConsultancy,
            ProtocolKind::DoubleConsultancy => AccuracyProtocol::DoubleConsultancy,
        };
        let report = judge_accuracy(&judgments, accuracy_protocol, checkpoint, bins)?;
        report_records.push(ReportRecord::Accuracy {
            schema: REPORT_SCHEMA.to_string(),
            report,
        });
        // Single consultancies that cover both sides of a question also
        // yield the ensembled evaluation.
        if *protocol == ProtocolKind::SingleConsultancy {
            if let Some(ensembled) = ensembled_judgments(&judgments) {
                let report =
                    judge_accuracy(&ensembled, AccuracyProtocol::EnsembledConsultancy, checkpoint, bins)?;
                report_records.push(ReportRecord::Accuracy {
                    schema: REPORT_SCHEMA.to_string(),
                    report,
                });
            }
        }
    }
    let transcripts: Vec<Transcript> = records.iter().map(|r| r.transcript.clone()).collect();
    let style = style_metrics(&transcripts, checkpoint);
    report_records.push(ReportRecord::Style {
        schema: REPORT_SCHEMA.to_string(),
        report: style,
    });
    artifacts.write_jsonl("reports.jsonl", REPORT_SCHEMA, &report_records)?;

    let calibration = crate::eval::calibration_metrics(
        &all_judgments
            .iter()
            .map(|r| (r.confidence, r.chosen_correct))
            .collect::<Vec<_>>(),
        bins,
    )?;
    let mut csv = String::from("# columns: bin_center,mean_confidence,accuracy,count\n");
    for bin in &calibration.curve {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            bin.center, bin.mean_confidence, bin.accuracy, bin.count
        ));
    }
    artifacts.write_bytes("reliability.csv", CSV_SCHEMA, csv.as_bytes())?;
    artifacts.write_bytes("report.txt", TEXT_SCHEMA, render_report_table(&report_records).as_bytes())?;
    Ok(false)
}

#[derive(Default)]
struct SidePair<'a> {
    p_when_correct: Option<f64>,
    p_when_distractor: Option<f64>,
    label: Option<&'a str>,
}

fn ensembled_judgments(judgments: &[JudgmentRecord]) -> Option<Vec<JudgmentRecord>> {
    let mut by_question: BTreeMap<&str, SidePair<'_>> = BTreeMap::new();
    for judgment in judgments {
        let entry = by_question
            .entry(judgment.question_id.as_str())
            .or_default();
        entry.label = entry.label.or(judgment.difficulty_label.as_deref());
        match judgment.consultant_side {
            Some(Side::Correct) => entry.p_when_correct = Some(judgment.p_correct),
            Some(Side::Distractor) => entry.p_when_distractor = Some(judgment.p_correct),
            None => return None,
        }
    }
    let ensembled: Vec<JudgmentRecord> = by_question
        .iter()
        .filter_map(|(question, pair)| {
            let p = (pair.p_when_correct? + pair.p_when_distractor?) / 2.0;
            Some(JudgmentRecord {
                question_id: question.to_string(),
                difficulty_label: pair.label.map(str::to_string),
                p_correct: p,
                confidence: p.max(1.0 - p),
                chosen_correct: p > 0.5,
                consultant_side: None,
            })
        })
        .collect();
    (!ensembled.is_empty()).then_some(ensembled)
}

fn render_report_table(records: &[ReportRecord]) -> String {
    let mut table = String::from(
        "protocol                checkpoint      n    accuracy   wilson95              ece      brier\n",
    );
    for record in records {
        match record {
            ReportRecord::Accuracy { report, .. } => {
                table.push_str(&format!(
                    "{:<22}  {:<12} {:>4}    {:.4}   [{:.4}, {:.4}]   {:.4}   {:.4}\n",
                    format!("{:?}", report.protocol),
                    report.checkpoint_id,
                    report.n_questions,
                    report.accuracy,
                    report.wilson_95.0,
                    report.wilson_95.1,
                    report.ece,
                    report.brier,
                ));
                for (label, accuracy) in &report.group_breakdowns {
                    table.push_str(&format!("    [{label}] accuracy {accuracy:.4}\n"));
                }
            }
            ReportRecord::Style { report, .. } => {
                table.push_str(&format!(
                    "style[{}]: quoted words/speech {:.2}",
                    report.checkpoint_id, report.mean_quoted_words_per_speech
                ));
                if let Some(fraction) = report.repeated_quote_fraction_turn2 {
                    table.push_str(&format!(", repeated turn-2 fraction {fraction:.3}"));
                }
                if let Some(r) = report.cross_judge_winrate_correlation {
                    table.push_str(&format!(", cross-judge correlation {r:.3}"));
                }
                table.push('\n');
            }
        }
    }
    table
}

fn resolved_loss_params(config: &RunConfig) -> LossParams {
    // Protocol defaults: 7 for debate-generated pairs, 10 for consultancy.
    let gamma = config
        .loss
        .gamma
        .unwrap_or(if config.prefgen.use_consultancy { 10.0 } else { 7.0 });
    LossParams {
        beta: config.loss.beta,
        alpha: config.loss.alpha,
        shape: RewardShape::new(config.loss.shape, gamma),
    }
}

fn cmd_loss_check(config: &RunConfig, artifacts: &mut ArtifactDir<'_>) -> Result<bool, PipelineError> {
    let pairs_path = config.loss_check.pairs.as_ref().expect("validated");
    let logprobs_path = config.loss_check.logprobs.as_ref().expect("validated");
    let pairs: Vec<PreferencePair> = read_jsonl(pairs_path)?;
    let annotations: Vec<PairLogProbs> = read_jsonl(logprobs_path)?;
    let by_id: BTreeMap<&str, &PairLogProbs> = annotations
        .iter()
        .map(|a| (a.pair_id.as_str(), a))
        .collect();
    let params = resolved_loss_params(config);
    let needs_clamp = matches!(
        params.shape.kind,
        RewardShapeKind::LogProb | RewardShapeKind::Logit
    );
    let outcomes = exec::map_batch(&pairs, |pair| {
        let annotation = by_id
            .get(pair.pair_id.as_str())
            .ok_or_else(|| format!("{}: no log-prob annotation", pair.pair_id))?;
        let (c0, c1) = if needs_clamp {
            (clamp_confidence(pair.c0), clamp_confidence(pair.c1))
        } else {
            (pair.c0, pair.c1)
        };
        let out = dpo_plus_loss(&annotation.y0, &annotation.y1, c0, c1, &params)
            .map_err(|e| format!("{}: {e}", pair.pair_id))?;
        Ok::<LossCheckRecord, String>(LossCheckRecord {
            schema: LOSSCHECK_SCHEMA.to_string(),
            pair_id: pair.pair_id.clone(),
            loss: out.loss,
            target_p: out.target_p,
            model_p: out.model_p,
            grad_logp_policy_y0: out.grad_logp_policy_y0,
            grad_logp_policy_y1: out.grad_logp_policy_y1,
        })
    });
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(record) => records.push(record),
            Err(message) => failures.push(message),
        }
    }
    if records.is_empty() {
        if let Some(first) = failures.first() {
            return Err(PipelineError::TotalFailure(first.clone()));
        }
    }
    artifacts.write_jsonl("losscheck.jsonl", LOSSCHECK_SCHEMA, &records)?;
    let partial = !failures.is_empty();
    artifacts.manifest.failed_items.extend(failures);
    Ok(partial)
}

fn cmd_calibrate(config: &RunConfig, artifacts: &mut ArtifactDir<'_>) -> Result<bool, PipelineError> {
    let pairs_path = config.calibrate.pairs.as_ref().expect("validated");
    let target = config.calibrate.target_total_weight.expect("validated");
    let pairs: Vec<PreferencePair> = read_jsonl(pairs_path)?;
    let kind = config.calibrate.shape;
    let needs_clamp = matches!(kind, RewardShapeKind::LogProb | RewardShapeKind::Logit);
    let confidences: Vec<(f64, f64)> = pairs
        .iter()
        .map(|p| {
            if needs_clamp {
                (clamp_confidence(p.c0), clamp_confidence(p.c1))
            } else {
                (p.c0, p.c1)
            }
        })
        .collect();
    let gamma = calibrate_gamma(&confidences, kind, target)?;
    let achieved = total_preferred_weight(&confidences, kind, gamma)?;
    artifacts.write_json(
        "gamma.json",
        GAMMA_SCHEMA,
        &GammaRecord {
            schema: GAMMA_SCHEMA.to_string(),
            shape: kind,
            target_total_weight: target,
            gamma,
            n_pairs: pairs.len(),
            achieved_weight: achieved,
        },
    )?;
    Ok(false)
}

/// Validates a question dataset and reports per-line issues; the
/// `validate-dataset` CLI command is a thin wrapper over this.
pub fn validate_dataset_report(path: &Path) -> Result<crate::storage::DatasetReport, PipelineError> {
    Ok(crate::storage::validate_dataset(path)?)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::MatchResult;
    use crate::storage::{write_jsonl, write_questions};

    fn base_config(dir: &Path, n_questions: usize) -> RunConfig {
        let dataset = dir.join("questions.jsonl");
        write_questions(&dataset, &crate::synthetic::synthetic_questions(n_questions, 11))
            .unwrap();
        let toml_text = format!(
            "dataset = {:?}\noutput_dir = {:?}\nseed = 7\n\n[agents.debater]\nkind = \"stub_debater\"\nskill = 0.8\nseed = 1\n\n[agents.judge]\nkind = \"stub_judge\"\nnoise_scale = 0.0\nseed = 2\n",
            dataset.display().to_string(),
            dir.join("out").display().to_string(),
        );
        RunConfig::from_toml_str(&toml_text).unwrap()
    }

    #[test]
    fn gen_prefs_counts_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = base_config(dir.path(), 2);
        config.output_dir = dir.path().join("out1");
        let outcome = cmd_run(RunCommand::GenPrefs, &config, &RunOverrides::default()).unwrap();
        assert!(!outcome.partial);
        let pairs: Vec<PreferencePair> =
            read_jsonl(&outcome.output_dir.join("pairs.jsonl")).unwrap();
        // 2 questions x 2 sides x 3 pairs at T=2.
        assert_eq!(pairs.len(), 12);
        let digest_1 = outcome
            .manifest
            .artifacts
            .iter()
            .find(|a| a.path == "pairs.jsonl")
            .unwrap()
            .sha256
            .clone();

        config.output_dir = dir.path().join("out2");
        let outcome2 = cmd_run(RunCommand::GenPrefs, &config, &RunOverrides::default()).unwrap();
        let digest_2 = outcome2
            .manifest
            .artifacts
            .iter()
            .find(|a| a.path == "pairs.jsonl")
            .unwrap()
            .sha256
            .clone();
        assert_eq!(digest_1, digest_2);
        // Sorted by (question, target, turn, pair id).
        let mut sorted = pairs.clone();
        sorted.sort_by_key(|p| p.sort_key());
        assert_eq!(pairs, sorted);
    }

    #[test]
    fn missing_dataset_is_a_config_error_naming_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = base_config(dir.path(), 1);
        config.dataset = dir.path().join("nope.jsonl");
        let err = cmd_run(RunCommand::Debate, &config, &RunOverrides::default()).unwrap_err();
        match err {
            PipelineError::InvalidConfig(problems) => {
                assert!(problems.iter().any(|p| p.contains("nope.jsonl")));
            }
            other => panic!("expected config error, got {other}"),
        }
    }

    #[test]
    fn debate_writes_manifest_covering_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let config = base_config(dir.path(), 3);
        let outcome = cmd_run(RunCommand::Debate, &config, &RunOverrides::default()).unwrap();
        assert!(!outcome.partial);
        let manifest = RunManifest::read(&outcome.output_dir).unwrap();
        manifest.verify(&outcome.output_dir).unwrap();
        assert_eq!(manifest.command, "debate");
        assert!(manifest.dataset_digest.is_some());
        let transcripts: Vec<TranscriptRecord> =
            read_jsonl(&outcome.output_dir.join("transcripts.jsonl")).unwrap();
        assert_eq!(transcripts.len(), 3);
        for record in &transcripts {
            assert_eq!(record.schema, TRANSCRIPT_SCHEMA);
            assert_eq!(record.transcript.speeches.len(), 4);
        }
    }

    #[test]
    fn consultancy_ensembled_emits_aggregates() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = base_config(dir.path(), 2);
        config.consultancy.variant = ConsultancyVariant::Ensembled;
        let outcome = cmd_run(RunCommand::Consultancy, &config, &RunOverrides::default()).unwrap();
        let ensembled: Vec<EnsembledRecord> =
            read_jsonl(&outcome.output_dir.join("ensembled.jsonl")).unwrap();
        assert_eq!(ensembled.len(), 2);
        let transcripts: Vec<TranscriptRecord> =
            read_jsonl(&outcome.output_dir.join("transcripts.jsonl")).unwrap();
        assert_eq!(transcripts.len(), 4);
    }

    #[test]
    fn report_over_debate_transcripts() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = base_config(dir.path(), 4);
        cmd_run(RunCommand::Debate, &config, &RunOverrides::default()).unwrap();
        let transcripts_path = config.output_dir.join("debate/transcripts.jsonl");
        config.report.transcripts = Some(transcripts_path);
        config.output_dir = dir.path().join("report-out");
        let outcome = cmd_run(RunCommand::Report, &config, &RunOverrides::default()).unwrap();
        let manifest = RunManifest::read(&outcome.output_dir).unwrap();
        manifest.verify(&outcome.output_dir).unwrap();
        let reports = std::fs::read_to_string(outcome.output_dir.join("reports.jsonl")).unwrap();
        assert!(reports.contains("\"kind\":\"accuracy\""));
        assert!(reports.contains("\"kind\":\"style\""));
        let csv = std::fs::read_to_string(outcome.output_dir.join("reliability.csv")).unwrap();
        assert!(csv.starts_with("# columns: bin_center"));
    }

    #[test]
    fn loss_check_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = base_config(dir.path(), 2);
        cmd_run(RunCommand::GenPrefs, &config, &RunOverrides::default()).unwrap();
        let pairs_path = config.output_dir.join("gen-prefs/pairs.jsonl");
        let pairs: Vec<PreferencePair> = read_jsonl(&pairs_path).unwrap();
        let annotations: Vec<PairLogProbs> = pairs
            .iter()
            .enumerate()
            .map(|(i, p)| PairLogProbs {
                schema: PAIRLOGP_SCHEMA.to_string(),
                pair_id: p.pair_id.clone(),
                y0: CompletionLogProbs {
                    logp_policy: -1.0 - i as f64 * 0.1,
                    logp_ref: -1.5,
                    token_count: 20,
                },
                y1: CompletionLogProbs {
                    logp_policy: -2.0,
                    logp_ref: -1.8,
                    token_count: 25,
                },
            })
            .collect();
        let logprobs_path = dir.path().join("logprobs.jsonl");
        write_jsonl(&logprobs_path, &annotations).unwrap();
        config.loss_check.pairs = Some(pairs_path);
        config.loss_check.logprobs = Some(logprobs_path);
        config.output_dir = dir.path().join("loss-out");
        let outcome = cmd_run(RunCommand::LossCheck, &config, &RunOverrides::default()).unwrap();
        let records: Vec<LossCheckRecord> =
            read_jsonl(&outcome.output_dir.join("losscheck.jsonl")).unwrap();
        assert_eq!(records.len(), 12);
        for record in &records {
            assert!(record.loss.is_finite());
            assert!(record.grad_logp_policy_y0.is_finite());
        }
    }

    #[test]
    fn calibrate_gamma_command() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = base_config(dir.path(), 2);
        cmd_run(RunCommand::GenPrefs, &config, &RunOverrides::default()).unwrap();
        let pairs_path = config.output_dir.join("gen-prefs/pairs.jsonl");
        let pairs: Vec<PreferencePair> = read_jsonl(&pairs_path).unwrap();
        let n = pairs.len() as f64;
        config.calibrate.pairs = Some(pairs_path);
        config.calibrate.target_total_weight = Some(0.75 * n);
        config.output_dir = dir.path().join("gamma-out");
        let outcome = cmd_run(RunCommand::CalibrateGamma, &config, &RunOverrides::default());
        match outcome {
            Ok(outcome) => {
                let record: GammaRecord = serde_json::from_str(
                    &std::fs::read_to_string(outcome.output_dir.join("gamma.json")).unwrap(),
                )
                .unwrap();
                assert!(record.gamma > 0.0);
                assert!((record.achieved_weight - 0.75 * n).abs() <= 1e-9 * n);
            }
            // Stub rollouts can produce all-tied rewards on tiny datasets.
            Err(PipelineError::Dpo(DpoError::Unidentifiable)) => {}
            Err(other) => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn tournament_command_produces_elo_and_series() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = base_config(dir.path(), 4);
        config.tournament.roster = vec![
            RosterEntry {
                id: "weak".to_string(),
                agent: AgentSpec::stub_debater(0.2, 1),
            },
            RosterEntry {
                id: "strong".to_string(),
                agent: AgentSpec::stub_debater(0.9, 2),
            },
        ];
        config.agents.judge.noise_scale = 0.05;
        let outcome = cmd_run(RunCommand::Tournament, &config, &RunOverrides::default()).unwrap();
        let manifest = RunManifest::read(&outcome.output_dir).unwrap();
        manifest.verify(&outcome.output_dir).unwrap();
        let matches: Vec<MatchResult> =
            read_jsonl(&outcome.output_dir.join("matches.jsonl")).unwrap();
        assert_eq!(matches.len(), 4);
        let csv =
            std::fs::read_to_string(outcome.output_dir.join("skill_accuracy.csv")).unwrap();
        assert!(csv.starts_with("# columns: checkpoint,win_rate,accuracy"));
    }
}
