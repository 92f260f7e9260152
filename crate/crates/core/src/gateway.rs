//! Chat-completion access for the agents and the SQL generator.
//!
//! A [`Gateway`] wraps one [`ChatBackend`] with retries, an append-only
//! token ledger, and optional request capture. Two backends ship here: an
//! OpenAI-compatible HTTP client and a closed-world scripted backend for
//! offline runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleTag {
    Reviewer,
    Crafter,
    Refiner,
    /// Requests made on behalf of the SQL generator, kept apart from agent cost.
    #[serde(rename = "sqltool")]
    SqlTool,
}

impl RoleTag {
    pub const AGENTS: [RoleTag; 3] = [RoleTag::Reviewer, RoleTag::Crafter, RoleTag::Refiner];

    pub fn as_str(self) -> &'static str {
        match self {
            RoleTag::Reviewer => "reviewer",
            RoleTag::Crafter => "crafter",
            RoleTag::Refiner => "refiner",
            RoleTag::SqlTool => "sqltool",
        }
    }

    pub fn default_temperature(self) -> f32 {
        match self {
            RoleTag::Crafter => 0.7,
            _ => 0.0,
        }
    }
}

impl fmt::Display for RoleTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub speaker: Speaker,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub role_tag: RoleTag,
    pub messages: Vec<Message>,
    pub temperature: f32,
    pub max_output_tokens: u32,
    /// Case the call is made for, used for per-question ledger averages.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribution: Option<String>,
}

impl ChatRequest {
    pub fn new(role_tag: RoleTag, system: impl Into<String>, user: impl Into<String>) -> Self {
        Self {
            role_tag,
            messages: vec![Message::system(system), Message::user(user)],
            temperature: role_tag.default_temperature(),
            max_output_tokens: 1024,
            attribution: None,
        }
    }

    pub fn attributed(mut self, case_id: &str) -> Self {
        self.attribution = Some(case_id.to_string());
        self
    }

    pub fn last_user_message(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.speaker == Speaker::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }

    /// Full prompt text, all messages concatenated.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.role_tag.as_str().as_bytes());
        for m in &self.messages {
            h.update([m.speaker as u8]);
            h.update(m.content.as_bytes());
        }
        h.finalize()[..6].iter().map(|b| format!("{b:02x}")).collect()
    }

    fn validate(&self) -> Result<(), GatewayError> {
        match self.messages.first() {
            None => Err(GatewayError::InvalidRequest("no messages".into())),
            Some(m) if m.speaker != Speaker::System => Err(GatewayError::InvalidRequest(
                "first message must be a system message".into(),
            )),
            Some(_) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub fn new(prompt_tokens: u64, completion_tokens: u64) -> Self {
        Self {
            prompt_tokens,
            completion_tokens,
        }
    }

    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    pub fn add(&mut self, other: TokenUsage) {
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
    }
}

impl std::ops::Add for TokenUsage {
    type Output = TokenUsage;
    fn add(mut self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage::add(&mut self, rhs);
        self
    }
}

/// Token usage split by role. Always carries a row for every agent role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleUsage(pub BTreeMap<RoleTag, TokenUsage>);

impl Default for RoleUsage {
    fn default() -> Self {
        Self(RoleTag::AGENTS.iter().map(|r| (*r, TokenUsage::default())).collect())
    }
}

impl RoleUsage {
    pub fn record(&mut self, role: RoleTag, usage: TokenUsage) {
        self.0.entry(role).or_default().add(usage);
    }

    pub fn get(&self, role: RoleTag) -> TokenUsage {
        self.0.get(&role).copied().unwrap_or_default()
    }

    pub fn total(&self) -> TokenUsage {
        self.0.values().fold(TokenUsage::default(), |acc, u| acc + *u)
    }

    pub fn merge(&mut self, other: &RoleUsage) {
        for (role, usage) in &other.0 {
            self.record(*role, *usage);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub usage: TokenUsage,
    pub backend_id: String,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("backend unavailable after {attempts} attempt(s): {message}")]
    BackendUnavailable { attempts: u32, message: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// How a single backend call failed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendFailure {
    /// Worth retrying: connection trouble, rate limiting, server errors.
    Transient(String),
    /// Retrying will not help: authentication, bad request.
    Fatal(String),
    Malformed(String),
}

pub trait ChatBackend: Send + Sync {
    fn id(&self) -> &str;
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendFailure>;
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub role: RoleTag,
    pub usage: TokenUsage,
    pub attribution: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerReport {
    pub per_role: RoleUsage,
    pub total: TokenUsage,
    pub calls: usize,
    /// Distinct attributed questions.
    pub questions: usize,
    /// Mean prompt+completion tokens per attributed question.
    pub avg_tokens_per_question: Option<f64>,
}

pub struct Gateway {
    backend: Box<dyn ChatBackend>,
    retry: RetryPolicy,
    ledger: Mutex<Vec<LedgerEntry>>,
    transcript: Option<Mutex<Vec<ChatRequest>>>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.id())
            .field("retry", &self.retry)
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: Box<dyn ChatBackend>) -> Self {
        Self {
            backend,
            retry: RetryPolicy::default(),
            ledger: Mutex::new(Vec::new()),
            transcript: None,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Keep a copy of every request sent, in arrival order.
    pub fn capturing(mut self) -> Self {
        self.transcript = Some(Mutex::new(Vec::new()));
        self
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        if let Some(t) = &self.transcript {
            t.lock().unwrap().push(request.clone());
        }
        let attempts = self.retry.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.backend.send(request) {
                Ok(resp) => {
                    self.ledger.lock().unwrap().push(LedgerEntry {
                        role: request.role_tag,
                        usage: resp.usage,
                        attribution: request.attribution.clone(),
                    });
                    return Ok(resp);
                }
                Err(BackendFailure::Malformed(m)) => return Err(GatewayError::MalformedResponse(m)),
                Err(BackendFailure::Fatal(m)) => {
                    return Err(GatewayError::BackendUnavailable {
                        attempts: attempt,
                        message: m,
                    })
                }
                Err(BackendFailure::Transient(m)) => {
                    log::warn!("{} attempt {attempt}/{attempts} failed: {m}", self.backend.id());
                    last = m;
                    if attempt < attempts {
                        std::thread::sleep(self.retry.base_delay * 2u32.pow(attempt - 1));
                    }
                }
            }
        }
        Err(GatewayError::BackendUnavailable {
            attempts,
            message: last,
        })
    }

    pub fn ledger_entries(&self) -> Vec<LedgerEntry> {
        self.ledger.lock().unwrap().clone()
    }

    pub fn ledger_report(&self) -> LedgerReport {
        let entries = self.ledger.lock().unwrap();
        let mut per_role = RoleUsage::default();
        let mut questions = BTreeSet::new();
        let mut attributed = 0u64;
        for e in entries.iter() {
            per_role.record(e.role, e.usage);
            if let Some(q) = &e.attribution {
                questions.insert(q.clone());
                attributed += e.usage.total();
            }
        }
        LedgerReport {
            total: per_role.total(),
            per_role,
            calls: entries.len(),
            questions: questions.len(),
            avg_tokens_per_question: (!questions.is_empty()).then(|| attributed as f64 / questions.len() as f64),
        }
    }

    /// Captured requests; empty unless built with [`Gateway::capturing`].
    pub fn transcript(&self) -> Vec<ChatRequest> {
        self.transcript
            .as_ref()
            .map(|t| t.lock().unwrap().clone())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    pub role_tag: RoleTag,
    pub match_substring: String,
    pub response: String,
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
}

/// Answers from a fixed rule list. Rules match on role and a substring of
/// the last user message, first match wins; unmatched requests are errors.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    rules: Vec<ScriptRule>,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        Self { rules }
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let rules = serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(Self::new(rules))
    }

    pub fn rules(&self) -> &[ScriptRule] {
        &self.rules
    }
}

impl ChatBackend for ScriptedBackend {
    fn id(&self) -> &str {
        "scripted"
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendFailure> {
        let last = request.last_user_message();
        let rule = self
            .rules
            .iter()
            .find(|r| r.role_tag == request.role_tag && last.contains(&r.match_substring))
            .ok_or_else(|| {
                BackendFailure::Malformed(format!(
                    "no scripted rule for {} request {}",
                    request.role_tag,
                    request.digest()
                ))
            })?;
        Ok(ChatResponse {
            content: rule.response.clone(),
            usage: TokenUsage::new(rule.prompt_tokens, rule.completion_tokens),
            backend_id: self.id().to_string(),
        })
    }
}

/// OpenAI-compatible `/chat/completions` client.
pub struct OpenAiBackend {
    id: String,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f32,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    #[serde(default)]
    choices: Vec<WireChoice>,
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl OpenAiBackend {
    pub fn new(base_url: &str, model: &str, api_key: Option<String>, request_timeout: Duration) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(request_timeout)
            .build()
            .expect("http client");
        Self {
            id: format!("openai:{model}"),
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            model: model.to_string(),
            api_key,
            client,
        }
    }
}

impl ChatBackend for OpenAiBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendFailure> {
        let body = WireRequest {
            model: &self.model,
            messages: request
                .messages
                .iter()
                .map(|m| WireMessage {
                    role: match m.speaker {
                        Speaker::System => "system",
                        Speaker::User => "user",
                        Speaker::Assistant => "assistant",
                    },
                    content: &m.content,
                })
                .collect(),
            temperature: request.temperature,
            max_tokens: request.max_output_tokens,
        };
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| BackendFailure::Transient(format!("{}: {e}", self.endpoint)))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            let msg = format!("HTTP {status}: {}", text.chars().take(300).collect::<String>());
            return Err(if status.as_u16() == 429 || status.is_server_error() {
                BackendFailure::Transient(msg)
            } else {
                BackendFailure::Fatal(msg)
            });
        }
        let parsed: WireResponse = resp
            .json()
            .map_err(|e| BackendFailure::Malformed(format!("undecodable body: {e}")))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendFailure::Malformed("response has no message content".into()))?;
        let usage = parsed
            .usage
            .map(|u| TokenUsage::new(u.prompt_tokens, u.completion_tokens))
            .unwrap_or_default();
        Ok(ChatResponse {
            content,
            usage,
            backend_id: self.id.clone(),
        })
    }
}
