//! Chat proxy over configurable providers, with optional transcript
//! context sent along with every message.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use discover_core::model::{Annotation, TranscriptSegment};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CONTEXT_HEADER: &str = "=== TRANSCRIPT ===";

#[derive(Debug, Error, PartialEq)]
pub enum AssistantError {
    #[error("unknown provider: {0}")]
    UnknownProvider(String),
    #[error("provider timeout: {0}")]
    Timeout(String),
    #[error("provider error: {provider}: {message}")]
    Provider { provider: String, message: String },
    #[error("invalid provider config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    HttpGeneric,
    Stub,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub name: String,
    pub kind: ProviderKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub headers: BTreeMap<String, String>,
}

fn default_timeout_ms() -> u64 {
    30_000
}

impl ProviderConfig {
    pub fn stub(name: &str) -> Self {
        Self {
            name: name.into(),
            kind: ProviderKind::Stub,
            endpoint: None,
            model: None,
            timeout_ms: default_timeout_ms(),
            headers: BTreeMap::new(),
        }
    }

    pub fn http(name: &str, endpoint: &str, model: &str, timeout_ms: u64) -> Self {
        Self {
            name: name.into(),
            kind: ProviderKind::HttpGeneric,
            endpoint: Some(endpoint.into()),
            model: Some(model.into()),
            timeout_ms,
            headers: BTreeMap::new(),
        }
    }
}

/// The provider registry file:
///
/// ```toml
/// [[provider]]
/// name = "local"
/// kind = "http-generic"
/// endpoint = "http://127.0.0.1:11434/chat"
/// model = "llama3"
/// timeout_ms = 20000
/// headers = { Authorization = "Bearer ..." }
/// ```
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssistantConfig {
    #[serde(default, rename = "provider")]
    pub providers: Vec<ProviderConfig>,
}

impl AssistantConfig {
    pub fn from_toml(text: &str) -> Result<Self, AssistantError> {
        toml::from_str(text).map_err(|e| AssistantError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AssistantError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| AssistantError::Config(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_toml(&text)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
}

impl Message {
    pub fn new(role: Role, text: impl Into<String>) -> Self {
        Self { role, text: text.into() }
    }
}

/// Body sent to an `http-generic` provider.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProviderRequest {
    pub model: String,
    pub messages: Vec<Message>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProviderReply {
    pub text: String,
}

/// Merges transcript segments of all roles by start time (then role name)
/// into `ROLE [start-end]: text` lines under the context header.
pub fn render_context(transcripts: &[Annotation]) -> String {
    let mut lines: Vec<(&str, &TranscriptSegment)> = transcripts
        .iter()
        .flat_map(|a| {
            let role = a.key.role.as_str();
            a.transcript().unwrap_or_default().iter().map(move |s| (role, s))
        })
        .collect();
    lines.sort_by(|(ra, a), (rb, b)| a.start_ms.cmp(&b.start_ms).then(ra.cmp(rb)));
    let mut out = String::from(CONTEXT_HEADER);
    for (role, s) in lines {
        out.push('\n');
        out.push_str(&format!("{role} [{}-{}]: {}", s.start_ms, s.end_ms, s.text));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatReply {
    pub reply: String,
    pub history: Vec<Message>,
}

/// Provider registry plus one history per chat session.
pub struct Assistant {
    providers: BTreeMap<String, ProviderConfig>,
    client: reqwest::Client,
    histories: Mutex<HashMap<String, Arc<tokio::sync::Mutex<Vec<Message>>>>>,
}

impl Assistant {
    pub fn new(config: AssistantConfig) -> Result<Self, AssistantError> {
        let mut providers = BTreeMap::new();
        for p in config.providers {
            if p.timeout_ms == 0 {
                return Err(AssistantError::Config(format!("{}: timeout_ms must be positive", p.name)));
            }
            if p.kind == ProviderKind::HttpGeneric && p.endpoint.is_none() {
                return Err(AssistantError::Config(format!("{}: http-generic needs an endpoint", p.name)));
            }
            if providers.insert(p.name.clone(), p.clone()).is_some() {
                return Err(AssistantError::Config(format!("duplicate provider {}", p.name)));
            }
        }
        Ok(Self {
            providers,
            client: reqwest::Client::new(),
            histories: Mutex::new(HashMap::new()),
        })
    }

    pub fn providers(&self) -> Vec<&ProviderConfig> {
        self.providers.values().collect()
    }

    fn history_cell(&self, session: &str) -> Arc<tokio::sync::Mutex<Vec<Message>>> {
        self.histories.lock().unwrap().entry(session.to_string()).or_default().clone()
    }

    pub async fn history(&self, session: &str) -> Vec<Message> {
        self.history_cell(session).lock().await.clone()
    }

    /// Sends `message` with the session's history to `provider`. With a
    /// `context`, it goes along as a system message of this turn only. The
    /// history grows by the user message and the reply only on success.
    pub async fn chat(
        &self,
        session: &str,
        provider: &str,
        message: &str,
        context: Option<&str>,
    ) -> Result<ChatReply, AssistantError> {
        let config = self
            .providers
            .get(provider)
            .ok_or_else(|| AssistantError::UnknownProvider(provider.to_string()))?;
        let cell = self.history_cell(session);
        let mut history = cell.lock().await;
        let mut messages = history.clone();
        if let Some(c) = context {
            messages.push(Message::new(Role::System, c));
        }
        messages.push(Message::new(Role::User, message));
        let request = ProviderRequest {
            model: config.model.clone().unwrap_or_default(),
            messages,
        };
        let reply = self.complete(config, &request).await?;
        history.push(Message::new(Role::User, message));
        history.push(Message::new(Role::Assistant, reply.clone()));
        Ok(ChatReply {
            reply,
            history: history.clone(),
        })
    }

    async fn complete(&self, config: &ProviderConfig, request: &ProviderRequest) -> Result<String, AssistantError> {
        match config.kind {
            ProviderKind::Stub => Ok(stub_reply(request)),
            ProviderKind::HttpGeneric => {
                let err = |message: String| AssistantError::Provider {
                    provider: config.name.clone(),
                    message,
                };
                let endpoint = config.endpoint.as_deref().unwrap_or_default();
                let mut req = self
                    .client
                    .post(endpoint)
                    .timeout(Duration::from_millis(config.timeout_ms))
                    .json(request);
                for (k, v) in &config.headers {
                    req = req.header(k, v);
                }
                let resp = req.send().await.map_err(|e| {
                    if e.is_timeout() {
                        AssistantError::Timeout(config.name.clone())
                    } else {
                        err(e.to_string())
                    }
                })?;
                let status = resp.status();
                if !status.is_success() {
                    return Err(err(format!("HTTP {status}")));
                }
                let reply: ProviderReply = resp.json().await.map_err(|e| {
                    if e.is_timeout() {
                        AssistantError::Timeout(config.name.clone())
                    } else {
                        err(format!("bad reply: {e}"))
                    }
                })?;
                Ok(reply.text)
            }
        }
    }
}

/// Uppercase echo of the last user message.
fn stub_reply(request: &ProviderRequest) -> String {
    let last = request
        .messages
        .iter()
        .rev()
        .find(|m| m.role == Role::User)
        .map_or("", |m| m.text.as_str());
    format!("ECHO: {}", last.to_uppercase())
}
