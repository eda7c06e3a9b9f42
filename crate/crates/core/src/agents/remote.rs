//! Remote chat-completions client.
//!
//! Speaks the chat-completions wire format (JSON body with `messages`,
//! `temperature`, `max_tokens`, `logprobs`/`top_logprobs`, `seed`) over a
//! pluggable [`Transport`], with a bounded exponential-backoff retry loop,
//! a shared on-disk response cache keyed by request digest, and an
//! in-flight request cap for concurrent batch stages.
//!
//! Judge verdicts are read from token-level probabilities when the endpoint
//! exposes them: the client scans for the first response position whose
//! top alternatives disambiguate the two debater names and sums the
//! alternative mass per name. Endpoints without logprob support fall back
//! to verdict-line parsing.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};

use super::prompts::{
    render_prompt, PromptLibrary, CONSULTANCY_CONSULTANT_TURN_1, CONSULTANCY_CONSULTANT_TURN_2,
    CONSULTANCY_JUDGE_FOOTER, CONSULTANCY_JUDGE_HEADER, DEBATE_DEBATER_TURN_1,
    DEBATE_DEBATER_TURN_2, DEBATE_JUDGE_FOOTER, DEBATE_JUDGE_HEADER, SPEECH_BLOCK,
};
use super::verdict::JudgeReadout;
use super::{AgentError, Debater, Judge};
use crate::protocol::{DebaterName, JudgeContext, ProtocolKind, SpeechContext};
use crate::storage::ResponseCache;

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("network error: {0}")]
    Network(String),
    #[error("http {status}: {body}")]
    Http { status: u16, body: String },
}

#[derive(Debug, thiserror::Error)]
pub enum RemoteError {
    #[error("request failed after {attempts} attempts: {last_error}")]
    Exhausted { attempts: u32, last_error: String },
    #[error("endpoint rejected the request: {0}")]
    Rejected(String),
    #[error("malformed response: {0}")]
    BadResponse(String),
    #[error("cache error: {0}")]
    Cache(#[from] crate::storage::CacheError),
    #[error("remote endpoint is not configured")]
    NotConfigured,
}

/// Connection settings for the remote endpoint. The credential itself comes
/// from the environment variable named by `api_key_env`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_remote_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_top_logprobs")]
    pub top_logprobs: u32,
    #[serde(default = "default_remote_retries")]
    pub max_retries: u32,
    #[serde(default = "default_retry_base_ms")]
    pub retry_base_ms: u64,
    #[serde(default = "default_in_flight")]
    pub in_flight: usize,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_cache_enabled")]
    pub cache: bool,
}

fn default_temperature() -> f64 {
    1.0
}
fn default_remote_max_tokens() -> u32 {
    600
}
fn default_top_logprobs() -> u32 {
    5
}
fn default_remote_retries() -> u32 {
    3
}
fn default_retry_base_ms() -> u64 {
    250
}
fn default_in_flight() -> usize {
    4
}
fn default_api_key_env() -> String {
    "DEBATELAB_API_KEY".to_string()
}
fn default_cache_enabled() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> ChatMessage {
        ChatMessage {
            role: "user".to_string(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

/// One generated token with its top alternatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenPosition {
    pub token: String,
    pub logprob: f64,
    #[serde(default)]
    pub top_logprobs: Vec<TokenLogprob>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub logprobs: Option<Vec<TokenPosition>>,
    pub from_cache: bool,
}

/// Sampling parameters for one request.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub want_logprobs: bool,
    pub seed: u64,
}

/// Blocking JSON POST. Implementations must be shareable across the batch
/// workers.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        api_key: Option<&str>,
        body: &serde_json::Value,
    ) -> Result<(u16, String), TransportError>;
}

/// reqwest-backed transport.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new() -> HttpTransport {
        HttpTransport {
            client: reqwest::blocking::Client::new(),
        }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl Transport for HttpTransport {
    fn post_json(
        &self,
        url: &str,
        api_key: Option<&str>,
        body: &serde_json::Value,
    ) -> Result<(u16, String), TransportError> {
        let mut request = self.client.post(url).json(body);
        if let Some(key) = api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .text()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        Ok((status, text))
    }
}

/// Counting semaphore for the in-flight request cap.
struct InFlight {
    max: usize,
    available: Mutex<usize>,
    signal: Condvar,
}

impl InFlight {
    fn new(max: usize) -> InFlight {
        let max = max.max(1);
        InFlight {
            max,
            available: Mutex::new(max),
            signal: Condvar::new(),
        }
    }

    fn acquire(&self) -> InFlightGuard<'_> {
        let mut available = self.available.lock().expect("limiter poisoned");
        while *available == 0 {
            available = self.signal.wait(available).expect("limiter poisoned");
        }
        *available -= 1;
        InFlightGuard { limiter: self }
    }
}

struct InFlightGuard<'a> {
    limiter: &'a InFlight,
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut available = self.limiter.available.lock().expect("limiter poisoned");
        *available = (*available + 1).min(self.limiter.max);
        self.limiter.signal.notify_one();
    }
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    logprobs: Option<WireLogprobs>,
}

#[derive(Debug, Deserialize)]
struct WireMessage {
    content: String,
}

#[derive(Debug, Deserialize)]
struct WireLogprobs {
    #[serde(default)]
    content: Vec<TokenPosition>,
}

/// Shared client: safe for concurrent use, caching by request digest.
pub struct RemoteClient {
    config: RemoteConfig,
    transport: Box<dyn Transport>,
    cache: Option<ResponseCache>,
    limiter: InFlight,
    api_key: Option<String>,
    network_calls: AtomicU64,
}

impl RemoteClient {
    pub fn new(
        config: RemoteConfig,
        transport: Box<dyn Transport>,
        cache: Option<ResponseCache>,
    ) -> RemoteClient {
        let api_key = std::env::var(&config.api_key_env).ok();
        let limiter = InFlight::new(config.in_flight);
        RemoteClient {
            config,
            transport,
            cache,
            limiter,
            api_key,
            network_calls: AtomicU64::new(0),
        }
    }

    pub fn http(config: RemoteConfig, cache: Option<ResponseCache>) -> RemoteClient {
        RemoteClient::new(config, Box::new(HttpTransport::new()), cache)
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    /// Number of requests that actually hit the transport.
    pub fn network_calls(&self) -> u64 {
        self.network_calls.load(Ordering::Relaxed)
    }

    fn build_body(&self, messages: &[ChatMessage], params: &CompletionParams) -> serde_json::Value {
        let mut body = serde_json::json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
            "seed": params.seed,
        });
        if params.want_logprobs {
            body["logprobs"] = serde_json::Value::Bool(true);
            body["top_logprobs"] = serde_json::json!(self.config.top_logprobs);
        }
        body
    }

    fn parse_response(&self, body: &str) -> Result<Completion, RemoteError> {
        let wire: WireResponse = serde_json::from_str(body)
            .map_err(|e| RemoteError::BadResponse(format!("{e}; body: {body:.200}")))?;
        let choice = wire
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| RemoteError::BadResponse("response has no choices".to_string()))?;
        Ok(Completion {
            text: choice.message.content,
            logprobs: choice.logprobs.map(|l| l.content),
            from_cache: false,
        })
    }

    pub fn complete(
        &self,
        messages: &[ChatMessage],
        params: &CompletionParams,
    ) -> Result<Completion, RemoteError> {
        if self.config.endpoint.is_empty() {
            return Err(RemoteError::NotConfigured);
        }
        let messages_json = serde_json::to_value(messages).expect("serializable messages");
        let params_json = serde_json::to_value(params).expect("serializable params");
        let key = ResponseCache::request_key(
            &self.config.endpoint,
            &self.config.model,
            &messages_json,
            &params_json,
            params.seed,
        );
        if let Some(cache) = self.cache.as_ref().filter(|_| self.config.cache) {
            if let Some(entry) = cache.get(&key)? {
                let raw = entry
                    .value
                    .as_str()
                    .map(str::to_string)
                    .unwrap_or_else(|| entry.value.to_string());
                let mut completion = self.parse_response(&raw)?;
                completion.from_cache = true;
                return Ok(completion);
            }
        }
        let body = self.build_body(messages, params);
        let attempts = self.config.max_retries + 1;
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.config.retry_base_ms.saturating_mul(1 << (attempt - 1));
                std::thread::sleep(std::time::Duration::from_millis(delay));
            }
            let _permit = self.limiter.acquire();
            self.network_calls.fetch_add(1, Ordering::Relaxed);
            match self
                .transport
                .post_json(&self.config.endpoint, self.api_key.as_deref(), &body)
            {
                Ok((status, text)) if (200..300).contains(&status) => {
                    let completion = self.parse_response(&text)?;
                    if let Some(cache) = self.cache.as_ref().filter(|_| self.config.cache) {
                        cache.put(&key, serde_json::Value::String(text))?;
                    }
                    return Ok(completion);
                }
                Ok((status, text)) if status == 429 || status >= 500 => {
                    last_error = format!("http {status}: {text:.200}");
                }
                Ok((status, text)) => {
                    return Err(RemoteError::Rejected(format!("http {status}: {text:.200}")));
                }
                Err(e) => last_error = e.to_string(),
            }
        }
        Err(RemoteError::Exhausted {
            attempts,
            last_error,
        })
    }
}

/// Whether `token`, appended after `prefix`, commits the text to `name`.
///
/// True when some suffix of `prefix` is a prefix of `name` and the token
/// extends it past the point where the two debater names diverge.
fn token_commits_to_name(prefix: &str, token: &str, name: &str) -> bool {
    let divergence = DebaterName::A
        .as_str()
        .chars()
        .zip(DebaterName::B.as_str().chars())
        .take_while(|(a, b)| a == b)
        .count();
    for overlap in 0..name.len() {
        if !prefix.ends_with(&name[..overlap]) {
            continue;
        }
        let remainder = &name[overlap..];
        let matches = remainder.starts_with(token) || token.starts_with(remainder);
        if !matches {
            continue;
        }
        let reach = overlap + token.len().min(remainder.len());
        if reach > divergence {
            return true;
        }
    }
    false
}

/// Reads both debater-name probabilities at the first response position
/// whose alternatives disambiguate the names. Returns `(mass_A, mass_B)`
/// when at least one name receives probability mass.
pub fn name_probs_from_logprobs(positions: &[TokenPosition]) -> Option<(f64, f64)> {
    let mut prefix = String::new();
    for position in positions {
        let commits_a = token_commits_to_name(&prefix, &position.token, DebaterName::A.as_str());
        let commits_b = token_commits_to_name(&prefix, &position.token, DebaterName::B.as_str());
        if commits_a || commits_b {
            let mut mass_a = 0.0;
            let mut mass_b = 0.0;
            let mut saw_chosen = false;
            for alt in &position.top_logprobs {
                if alt.token == position.token {
                    saw_chosen = true;
                }
                let p = alt.logprob.exp();
                if token_commits_to_name(&prefix, &alt.token, DebaterName::A.as_str()) {
                    mass_a += p;
                } else if token_commits_to_name(&prefix, &alt.token, DebaterName::B.as_str()) {
                    mass_b += p;
                }
            }
            if !saw_chosen {
                let p = position.logprob.exp();
                if commits_a {
                    mass_a += p;
                } else {
                    mass_b += p;
                }
            }
            if mass_a + mass_b > 0.0 {
                return Some((mass_a, mass_b));
            }
        }
        prefix.push_str(&position.token);
    }
    None
}

/// An agent backed by the remote client: renders the protocol prompts,
/// requests a completion, and (as a judge) extracts name probabilities.
pub struct RemoteAgent {
    client: Arc<RemoteClient>,
    prompts: PromptLibrary,
    temperature: f64,
    max_tokens: u32,
}

impl RemoteAgent {
    pub fn new(client: Arc<RemoteClient>, prompts: PromptLibrary) -> RemoteAgent {
        let temperature = client.config().temperature;
        let max_tokens = client.config().max_tokens;
        RemoteAgent {
            client,
            prompts,
            temperature,
            max_tokens,
        }
    }

    fn bindings_for_speech(ctx: &SpeechContext<'_>) -> std::collections::BTreeMap<String, String> {
        let join = |speeches: &[&crate::protocol::Speech]| {
            speeches
                .iter()
                .map(|s| s.verified_text.clone())
                .collect::<Vec<_>>()
                .join("\n\n")
        };
        let mut bindings = std::collections::BTreeMap::new();
        bindings.insert("NAME".to_string(), ctx.name.to_string());
        bindings.insert("OPPONENT_NAME".to_string(), ctx.opponent_name.to_string());
        bindings.insert("TOPIC".to_string(), ctx.question.question.clone());
        bindings.insert("POSITION".to_string(), ctx.position.to_string());
        bindings.insert(
            "OPPONENT_POSITION".to_string(),
            ctx.opponent_position.to_string(),
        );
        bindings.insert(
            "BACKGROUND_TEXT".to_string(),
            ctx.question.story.clone(),
        );
        if ctx.turn > 0 {
            bindings.insert("PREVIOUS_SPEECH".to_string(), join(&ctx.own_prior));
            bindings.insert(
                "PREVIOUS_OPPONENT_SPEECH".to_string(),
                join(&ctx.opponent_prior),
            );
        }
        bindings
    }

    fn judge_prompt(&self, ctx: &JudgeContext<'_>) -> Result<String, AgentError> {
        let consultancy = ctx.protocol == ProtocolKind::SingleConsultancy;
        let (header_name, footer_name) = if consultancy {
            (CONSULTANCY_JUDGE_HEADER, CONSULTANCY_JUDGE_FOOTER)
        } else {
            (DEBATE_JUDGE_HEADER, DEBATE_JUDGE_FOOTER)
        };
        // For consultancy the named party is the consultant; for debate the
        // header/footer name the two debaters in fixed display order.
        let (name, opponent) = if consultancy {
            let consultant = ctx
                .speeches
                .first()
                .map(|s| s.author)
                .unwrap_or(DebaterName::A);
            (consultant, consultant.other())
        } else {
            (DebaterName::A, DebaterName::B)
        };
        let answer_of = |who: DebaterName| {
            ctx.positions
                .iter()
                .find(|(n, _)| *n == who)
                .map(|(_, a)| a.to_string())
                .unwrap_or_default()
        };
        let mut bindings = std::collections::BTreeMap::new();
        bindings.insert("NAME".to_string(), name.to_string());
        bindings.insert("OPPONENT_NAME".to_string(), opponent.to_string());
        bindings.insert("TOPIC".to_string(), ctx.topic.to_string());
        bindings.insert("POSITION".to_string(), answer_of(name));
        bindings.insert("OPPONENT_POSITION".to_string(), answer_of(opponent));
        let mut prompt = render_prompt(self.prompts.get(header_name)?, &bindings)?.text;
        let block = self.prompts.get(SPEECH_BLOCK)?;
        for speech in ctx.speeches {
            let mut speech_bindings = std::collections::BTreeMap::new();
            speech_bindings.insert("NAME".to_string(), speech.author.to_string());
            speech_bindings.insert("SPEECH".to_string(), speech.verified_text.clone());
            prompt.push('\n');
            prompt.push_str(&render_prompt(block, &speech_bindings)?.text);
        }
        prompt.push('\n');
        prompt.push_str(&render_prompt(self.prompts.get(footer_name)?, &bindings)?.text);
        Ok(prompt)
    }
}

impl Debater for RemoteAgent {
    fn speak(&self, ctx: &SpeechContext<'_>) -> Result<String, AgentError> {
        let template_name = match (ctx.protocol, ctx.turn) {
            (ProtocolKind::Debate, 0) => DEBATE_DEBATER_TURN_1,
            (ProtocolKind::Debate, _) => DEBATE_DEBATER_TURN_2,
            (_, 0) => CONSULTANCY_CONSULTANT_TURN_1,
            (_, _) => CONSULTANCY_CONSULTANT_TURN_2,
        };
        let bindings = Self::bindings_for_speech(ctx);
        let rendered = render_prompt(self.prompts.get(template_name)?, &bindings)?;
        let completion = self.client.complete(
            &[ChatMessage::user(rendered.text)],
            &CompletionParams {
                temperature: self.temperature,
                max_tokens: self.max_tokens,
                want_logprobs: false,
                seed: ctx.seed,
            },
        )?;
        Ok(completion.text)
    }
}

impl Judge for RemoteAgent {
    fn judge(&self, ctx: &JudgeContext<'_>) -> Result<JudgeReadout, AgentError> {
        let prompt = self.judge_prompt(ctx)?;
        let completion = self.client.complete(
            &[ChatMessage::user(prompt)],
            &CompletionParams {
                temperature: 0.0,
                max_tokens: 16,
                want_logprobs: true,
                seed: ctx.seed,
            },
        )?;
        let name_token_probs = completion
            .logprobs
            .as_deref()
            .and_then(name_probs_from_logprobs)
            .map(|(a, b)| {
                let mut map = std::collections::BTreeMap::new();
                map.insert(DebaterName::A, a);
                map.insert(DebaterName::B, b);
                map
            });
        Ok(JudgeReadout {
            name_token_probs,
            verdict_line: Some(completion.text),
        })
    }
}
