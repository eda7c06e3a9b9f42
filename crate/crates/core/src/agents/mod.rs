//! Agent abstractions: debaters/consultants, judges, prompt templates,
//! deterministic stub agents for offline runs, and the remote
//! chat-completions client.

mod prompts;
mod remote;
mod stub;
mod verdict;

use serde::{Deserialize, Serialize};

use crate::protocol::{JudgeContext, SpeechContext};

pub use prompts::{render_prompt, scan_placeholders, PromptError, PromptLibrary, PromptTemplate};
pub use remote::{
    ChatMessage, Completion, HttpTransport, RemoteAgent, RemoteClient, RemoteConfig, RemoteError,
    TokenLogprob, TokenPosition, Transport, TransportError,
};
pub use stub::{StubDebater, StubJudge};
pub use verdict::{extract_verdict, JudgeReadout, VerdictError, VerdictExtraction};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("stub debater requires a nonempty story")]
    EmptyStory,
    #[error("prompt error: {0}")]
    Prompt(#[from] PromptError),
    #[error("remote agent error: {0}")]
    Remote(#[from] RemoteError),
    #[error("verdict error: {0}")]
    Verdict(#[from] VerdictError),
    #[error("{0}")]
    Other(String),
}

/// What kind of agent a config entry describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    StubDebater,
    StubJudge,
    Remote,
}

/// Declarative description of an agent, as it appears in run configs and in
/// transcript provenance.
///
/// Stub agents are pure functions of `(context, seed)`; remote agents record
/// `model_name` and sampling params in every transcript they touch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub kind: AgentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub seed: u64,
    /// Stub-debater skill knob in `[0, 1]`.
    #[serde(default = "default_skill")]
    pub skill: f64,
    /// Stub-judge noise scale on the score difference.
    #[serde(default = "default_noise_scale")]
    pub noise_scale: f64,
}

fn default_max_tokens() -> u32 {
    600
}

fn default_skill() -> f64 {
    1.0
}

fn default_noise_scale() -> f64 {
    0.05
}

impl AgentSpec {
    pub fn stub_debater(skill: f64, seed: u64) -> AgentSpec {
        AgentSpec {
            kind: AgentKind::StubDebater,
            model_name: None,
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            seed,
            skill,
            noise_scale: 0.0,
        }
    }

    pub fn stub_judge(noise_scale: f64, seed: u64) -> AgentSpec {
        AgentSpec {
            kind: AgentKind::StubJudge,
            model_name: None,
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            seed,
            skill: 1.0,
            noise_scale,
        }
    }

    /// Provenance fields recorded in transcript output.
    pub fn provenance(&self) -> std::collections::BTreeMap<String, String> {
        let mut map = std::collections::BTreeMap::new();
        map.insert(
            "kind".to_string(),
            serde_json::to_value(self.kind)
                .expect("serializable enum")
                .as_str()
                .unwrap_or_default()
                .to_string(),
        );
        if let Some(model) = &self.model_name {
            map.insert("model_name".to_string(), model.clone());
            map.insert("temperature".to_string(), format!("{}", self.temperature));
            map.insert("max_tokens".to_string(), format!("{}", self.max_tokens));
        }
        map.insert("seed".to_string(), format!("{}", self.seed));
        map
    }
}

/// Produces one speech for the side described by the context.
///
/// Implementations must be pure in `(context, own seed)` when they claim
/// determinism, and must be `Send + Sync`: protocol runs for distinct
/// questions execute concurrently.
pub trait Debater: Send + Sync {
    fn speak(&self, ctx: &SpeechContext<'_>) -> Result<String, AgentError>;
}

/// Produces a judge readout from a judged transcript context.
pub trait Judge: Send + Sync {
    fn judge(&self, ctx: &JudgeContext<'_>) -> Result<JudgeReadout, AgentError>;
}
