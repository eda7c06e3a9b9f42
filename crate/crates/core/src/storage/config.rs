//! Declarative run configuration.
//!
//! One TOML file describes an experiment end to end; the only thing read
//! from the environment is the remote credential. The global seed reaches
//! every seeded operation through `seed::derive_seed`, so a config digest
//! plus a dataset digest pin the entire run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{AgentKind, AgentSpec, RemoteConfig};
use crate::dpo::RewardShapeKind;
use crate::protocol::{ProtocolConfig, QuoteNormalization};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsultancyVariant {
    Single,
    Ensembled,
    Double,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSection {
    #[serde(default = "default_num_turns")]
    pub num_turns: u32,
    #[serde(default = "default_max_speech_chars")]
    pub max_speech_chars: usize,
    #[serde(default)]
    pub quote_normalization: QuoteNormalization,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
}

fn default_num_turns() -> u32 {
    2
}
fn default_max_speech_chars() -> usize {
    2_400
}
fn default_max_retries() -> u32 {
    1
}

impl Default for ProtocolSection {
    fn default() -> Self {
        ProtocolSection {
            num_turns: default_num_turns(),
            max_speech_chars: default_max_speech_chars(),
            quote_normalization: QuoteNormalization::default(),
            max_retries: default_max_retries(),
        }
    }
}

impl ProtocolSection {
    pub fn to_protocol_config(&self, seed: u64) -> ProtocolConfig {
        ProtocolConfig {
            num_turns: self.num_turns,
            max_speech_chars: self.max_speech_chars,
            quote_normalization: self.quote_normalization,
            seed,
            max_retries: self.max_retries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentsSection {
    pub debater: AgentSpec,
    pub judge: AgentSpec,
    /// Optional directory of `<name>.txt` prompt template overrides.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_dir: Option<PathBuf>,
}

impl Default for AgentsSection {
    fn default() -> Self {
        AgentsSection {
            debater: AgentSpec::stub_debater(0.8, 1),
            judge: AgentSpec::stub_judge(0.05, 2),
            prompt_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsultancySection {
    pub variant: ConsultancyVariant,
}

impl Default for ConsultancySection {
    fn default() -> Self {
        ConsultancySection {
            variant: ConsultancyVariant::Single,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefGenSection {
    /// Iteration tag stamped on every emitted pair.
    #[serde(default = "default_iteration")]
    pub iteration: u32,
    /// Roll out single consultancies instead of debates.
    #[serde(default)]
    pub use_consultancy: bool,
}

fn default_iteration() -> u32 {
    1
}

impl Default for PrefGenSection {
    fn default() -> Self {
        PrefGenSection {
            iteration: default_iteration(),
            use_consultancy: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSection {
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub shape: RewardShapeKind,
    /// Reward scale; when absent the protocol default applies (7 for
    /// debate-generated pairs, 10 for consultancy).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

fn default_beta() -> f64 {
    0.5
}
fn default_alpha() -> f64 {
    0.005
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection {
            beta: default_beta(),
            alpha: default_alpha(),
            shape: RewardShapeKind::default(),
            gamma: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub id: String,
    pub agent: AgentSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TournamentSection {
    #[serde(default)]
    pub roster: Vec<RosterEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSection {
    /// Transcript file produced by the debate/consultancy commands.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcripts: Option<PathBuf>,
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Checkpoint id stamped on emitted reports.
    #[serde(default = "default_checkpoint")]
    pub checkpoint: String,
}

fn default_bins() -> usize {
    10
}
fn default_checkpoint() -> String {
    "default".to_string()
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection {
            transcripts: None,
            bins: default_bins(),
            checkpoint: default_checkpoint(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct LossCheckSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CalibrateSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<PathBuf>,
    #[serde(default)]
    pub shape: RewardShapeKind,
    /// Total preferred weight to match across the dataset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_total_weight: Option<f64>,
}

/// The whole experiment in one declarative file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads for batch stages; 0 keeps the library default.
    #[serde(default)]
    pub workers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub agents: AgentsSection,
    #[serde(default)]
    pub consultancy: ConsultancySection,
    #[serde(default)]
    pub prefgen: PrefGenSection,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub tournament: TournamentSection,
    #[serde(default)]
    pub report: ReportSection,
    #[serde(default)]
    pub loss_check: LossCheckSection,
    #[serde(default)]
    pub calibrate: CalibrateSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote: Option<RemoteConfig>,
    /// Free-form provenance notes (e.g. the finetuning hyperparameters a
    /// pair dataset is destined for). Carried into the config digest,
    /// never interpreted.
    #[serde(default, skip_serializing_if = "std::collections::BTreeMap::is_empty")]
    pub training_notes: std::collections::BTreeMap<String, String>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<RunConfig, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        Self::from_toml_str(&text).map_err(|e| format!("config {}: {e}", path.display()))
    }

    /// Digest of the canonical serialized form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("serializable config");
        super::manifest::sha256_hex(&json)
    }

    /// Field-level diagnostics. Referenced paths must exist; agent and loss
    /// parameters must be in range.
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if !self.dataset.exists() {
            problems.push(format!(
                "dataset: path {} does not exist",
                self.dataset.display()
            ));
        }
        if let Some(dir) = &self.agents.prompt_dir {
            if !dir.is_dir() {
                problems.push(format!(
                    "agents.prompt_dir: {} is not a directory",
                    dir.display()
                ));
            }
        }
        for (field, path) in [
            ("report.transcripts", &self.report.transcripts),
            ("loss_check.pairs", &self.loss_check.pairs),
            ("loss_check.logprobs", &self.loss_check.logprobs),
            ("calibrate.pairs", &self.calibrate.pairs),
        ] {
            if let Some(path) = path {
                if !path.exists() {
                    problems.push(format!("{field}: path {} does not exist", path.display()));
                }
            }
        }
        if self.protocol.num_turns == 0 {
            problems.push("protocol.num_turns: must be positive".to_string());
        }
        if self.loss.beta <= 0.0 {
            problems.push("loss.beta: must be positive".to_string());
        }
        if self.loss.alpha < 0.0 {
            problems.push("loss.alpha: must be nonnegative".to_string());
        }
        if let Some(gamma) = self.loss.gamma {
            if gamma <= 0.0 || !gamma.is_finite() {
                problems.push("loss.gamma: must be positive and finite".to_string());
            }
        }
        if !(0.0..=1.0).contains(&self.agents.debater.skill) {
            problems.push("agents.debater.skill: must lie in [0, 1]".to_string());
        }
        if self.report.bins < 2 {
            problems.push("report.bins: need at least 2 calibration bins".to_string());
        }
        for entry in &self.tournament.roster {
            if entry.id.trim().is_empty() {
                problems.push("tournament.roster: entry with empty id".to_string());
            }
        }
        if self
            .tournament
            .roster
            .iter()
            .any(|e| e.agent.kind == AgentKind::Remote)
            && self.remote.is_none()
        {
            problems.push(
                "tournament.roster: remote agents require the [remote] section".to_string(),
            );
        }
        if (self.agents.debater.kind == AgentKind::Remote
            || self.agents.judge.kind == AgentKind::Remote)
            && self.remote.is_none()
        {
            problems.push("agents: remote agents require the [remote] section".to_string());
        }
        problems
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = dir.path().join("qs.jsonl");
        std::fs::write(&dataset, "").unwrap();
        let toml_text = format!(
            "dataset = {:?}\noutput_dir = {:?}\nseed = 42\n",
            dataset.display().to_string(),
            dir.path().join("out").display().to_string(),
        );
        let config = RunConfig::from_toml_str(&toml_text).unwrap();
        assert_eq!(config.seed, 42);
        assert_eq!(config.protocol.num_turns, 2);
        assert_eq!(config.protocol.max_speech_chars, 2_400);
        assert_eq!(config.loss.beta, 0.5);
        assert_eq!(config.loss.alpha, 0.005);
        assert!(config.validate().is_empty());
    }

    #[test]
    fn missing_dataset_named_in_diagnostics() {
        let config = RunConfig::from_toml_str(
            "dataset = \"/definitely/not/here.jsonl\"\noutput_dir = \"out\"\n",
        )
        .unwrap();
        let problems = config.validate();
        assert!(problems.iter().any(|p| p.contains("/definitely/not/here.jsonl")));
    }

    #[test]
    fn training_notes_parse_and_enter_the_digest() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = dir.path().join("qs.jsonl");
        std::fs::write(&dataset, "").unwrap();
        let base = format!(
            "dataset = {:?}\noutput_dir = \"out\"\n",
            dataset.display().to_string()
        );
        let with_notes = format!("{base}[training_notes]\nlearning_rate = \"1e-5\"\n");
        let a = RunConfig::from_toml_str(&base).unwrap();
        let b = RunConfig::from_toml_str(&with_notes).unwrap();
        assert!(a.training_notes.is_empty());
        assert_eq!(b.training_notes["learning_rate"], "1e-5");
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn digest_is_stable_and_sensitive() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = dir.path().join("qs.jsonl");
        std::fs::write(&dataset, "").unwrap();
        let text = format!(
            "dataset = {:?}\noutput_dir = \"out\"\n",
            dataset.display().to_string()
        );
        let a = RunConfig::from_toml_str(&text).unwrap();
        let b = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(a.digest(), b.digest());
        let mut c = a.clone();
        c.seed = 9;
        assert_ne!(a.digest(), c.digest());
    }
}
