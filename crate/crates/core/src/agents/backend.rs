//! Completion backends: a deterministic scripted table for tests and
//! benchmarks, and a remote text-completion endpoint with retries.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use thiserror::Error;

use crate::protocol::Document;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("no scripted response for role {role:?}, key {key:?}")]
    NoScript { role: String, key: String },
    #[error("backend timed out")]
    Timeout,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed backend reply: {0}")]
    Malformed(String),
    #[error("backend failed after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: Box<BackendError> },
    #[error("backend configuration: {0}")]
    Config(String),
}

/// Which contract a prompt asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PromptRole {
    Leader,
    Worker,
    Provider,
    StateTree,
    ActionSelector,
}

impl PromptRole {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptRole::Leader => "leader",
            PromptRole::Worker => "worker",
            PromptRole::Provider => "provider",
            PromptRole::StateTree => "state_tree",
            PromptRole::ActionSelector => "action_selector",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Leader, Self::Worker, Self::Provider, Self::StateTree, Self::ActionSelector].into_iter().find(|r| r.as_str() == s)
    }
}

/// A rendered request: `key` identifies the mission or subtask for table
/// lookup, `text` is what a language model would read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub role: PromptRole,
    pub key: String,
    pub text: String,
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, prompt: &Prompt) -> Result<String, BackendError>;
}

/// Lookup keys are matched case-insensitively with collapsed whitespace.
pub fn normalize_key(key: &str) -> String {
    key.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

/// Deterministic `(role, key) → document` table.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    table: BTreeMap<(PromptRole, String), Document>,
}

const DEFAULT_SCRIPT: &str = include_str!("../../assets/scripted_backend.json");

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// The table shipped with the crate, covering the example missions and
    /// the benchmark scenarios.
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_SCRIPT).expect("bundled script is valid")
    }

    /// Parse `{"<role>": {"<key>": <document>, ...}, ...}`.
    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| BackendError::Config(format!("script is not JSON: {e}")))?;
        let roles = value.as_object().ok_or_else(|| BackendError::Config("script must be an object".into()))?;
        let mut backend = Self::new();
        for (role_name, entries) in roles {
            let role = PromptRole::parse(role_name).ok_or_else(|| BackendError::Config(format!("unknown role {role_name:?}")))?;
            let entries = entries
                .as_object()
                .ok_or_else(|| BackendError::Config(format!("entries for {role_name:?} must be an object")))?;
            for (key, doc) in entries {
                backend.insert(role, key, Document::from_json(doc));
            }
        }
        Ok(backend)
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn insert(&mut self, role: PromptRole, key: &str, doc: Document) {
        self.table.insert((role, normalize_key(key)), doc);
    }

    pub fn merge(&mut self, other: ScriptedBackend) {
        self.table.extend(other.table);
    }

    pub fn contains(&self, role: PromptRole, key: &str) -> bool {
        self.table.contains_key(&(role, normalize_key(key)))
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (PromptRole, &str, &Document)> {
        self.table.iter().map(|((r, k), d)| (*r, k.as_str(), d))
    }
}

impl CompletionBackend for ScriptedBackend {
    fn complete(&self, prompt: &Prompt) -> Result<String, BackendError> {
        let doc = self
            .table
            .get(&(prompt.role, normalize_key(&prompt.key)))
            .ok_or_else(|| BackendError::NoScript { role: prompt.role.as_str().to_owned(), key: prompt.key.clone() })?;
        let bytes = doc.canonical_bytes().map_err(|e| BackendError::Malformed(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("canonical bytes are utf-8"))
    }
}

/// One request/response exchange with a remote endpoint.
pub trait Transport: Send + Sync {
    fn post(&self, url: &str, token: Option<&str>, body: &str, timeout: Duration) -> Result<String, BackendError>;
}

/// HTTP transport.
#[derive(Debug, Clone, Default)]
pub struct HttpTransport;

impl Transport for HttpTransport {
    fn post(&self, url: &str, token: Option<&str>, body: &str, timeout: Duration) -> Result<String, BackendError> {
        let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        let mut request = agent.post(url).header("Content-Type", "application/json");
        if let Some(token) = token {
            request = request.header("Authorization", &format!("Bearer {token}"));
        }
        match request.send(body) {
            Ok(mut response) => response.body_mut().read_to_string().map_err(|e| BackendError::Transport(e.to_string())),
            Err(ureq::Error::Timeout(_)) => Err(BackendError::Timeout),
            Err(e) => Err(BackendError::Transport(e.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub url: String,
    pub token: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub max_attempts: u32,
    /// Delay before the second attempt; doubled after each failure.
    pub initial_backoff: Duration,
}

pub const ENV_URL: &str = "CORTEX_BACKEND_URL";
pub const ENV_TOKEN: &str = "CORTEX_BACKEND_TOKEN";
pub const ENV_MODEL: &str = "CORTEX_BACKEND_MODEL";
pub const ENV_TIMEOUT_MS: &str = "CORTEX_BACKEND_TIMEOUT_MS";

impl RemoteConfig {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            token: None,
            model: model.into(),
            timeout: Duration::from_secs(30),
            max_attempts: 3,
            initial_backoff: Duration::from_millis(250),
        }
    }

    pub fn from_env() -> Result<Self, BackendError> {
        let url = std::env::var(ENV_URL).map_err(|_| BackendError::Config(format!("{ENV_URL} is not set")))?;
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "default".to_owned());
        let mut config = Self::new(url, model);
        config.token = std::env::var(ENV_TOKEN).ok();
        if let Ok(ms) = std::env::var(ENV_TIMEOUT_MS) {
            let ms: u64 = ms.parse().map_err(|_| BackendError::Config(format!("{ENV_TIMEOUT_MS} must be an integer")))?;
            config.timeout = Duration::from_millis(ms);
        }
        Ok(config)
    }
}

/// Posts `{"model", "role", "prompt"}` and accepts either a JSON reply with
/// a `text` field or a plain-text reply.
pub struct RemoteBackend<T: Transport = HttpTransport> {
    config: RemoteConfig,
    transport: T,
}

impl RemoteBackend<HttpTransport> {
    pub fn http(config: RemoteConfig) -> Self {
        Self { config, transport: HttpTransport }
    }
}

impl<T: Transport> RemoteBackend<T> {
    pub fn with_transport(config: RemoteConfig, transport: T) -> Self {
        Self { config, transport }
    }

    fn attempt(&self, body: &str) -> Result<String, BackendError> {
        let reply = self.transport.post(&self.config.url, self.config.token.as_deref(), body, self.config.timeout)?;
        let trimmed = reply.trim();
        if trimmed.is_empty() {
            return Err(BackendError::Malformed("empty reply".into()));
        }
        match serde_json::from_str::<serde_json::Value>(trimmed) {
            Ok(serde_json::Value::Object(map)) if map.contains_key("text") => {
                map["text"].as_str().map(str::to_owned).ok_or_else(|| BackendError::Malformed("`text` must be a string".into()))
            }
            _ => Ok(trimmed.to_owned()),
        }
    }
}

impl<T: Transport> CompletionBackend for RemoteBackend<T> {
    fn complete(&self, prompt: &Prompt) -> Result<String, BackendError> {
        let body = serde_json::json!({
            "model": self.config.model,
            "role": prompt.role.as_str(),
            "prompt": prompt.text,
        })
        .to_string();
        let attempts = self.config.max_attempts.max(1);
        let mut delay = self.config.initial_backoff;
        let mut last = None;
        for attempt in 1..=attempts {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(e) => last = Some(e),
            }
            if attempt < attempts {
                std::thread::sleep(delay);
                delay *= 2;
            }
        }
        Err(BackendError::Exhausted { attempts, last: Box::new(last.expect("at least one attempt")) })
    }
}

fn pretty(doc: &Document) -> String {
    doc.to_json().map(|v| serde_json::to_string_pretty(&v).unwrap_or_default()).unwrap_or_default()
}

/// Prompt asking the leader to grade and split a mission.
pub fn leader_prompt(mission: &str, workers: &[(String, Vec<String>)]) -> Prompt {
    let roster: Vec<String> = workers.iter().map(|(id, tags)| format!("- {id}: {}", tags.join(", "))).collect();
    let text = format!(
        "You coordinate a team of robot workers.\n\
         Mission: {mission:?}\n\
         Workers and their skills:\n{}\n\n\
         Grade the mission as \"low\", \"medium\" or \"high\" difficulty. Only a high-difficulty mission is \
         split into subtasks, each handed to a single listed worker (no worker gets two).\n\
         Reply with one JSON object:\n\
         {{\"difficulty\": \"low|medium|high\", \"subtasks\": [{{\"subtask_id\": \"ST1\", \
         \"assigned_worker\": \"Worker_N\", \"task_description\": \"concrete objective\", \
         \"focus\": [\"3 to 5 keywords\"]}}]}}",
        roster.join("\n")
    );
    Prompt { role: PromptRole::Leader, key: mission.to_owned(), text }
}

/// Prompt asking a worker whether it needs colleagues for its subtask.
pub fn worker_prompt(subtask: &Document, own_skills: &[String], colleagues: &[(String, Vec<String>)]) -> Prompt {
    let key = subtask.get("task_description").and_then(Document::as_str).unwrap_or_default().to_owned();
    let roster: Vec<String> = colleagues.iter().map(|(id, tags)| format!("- {id}: {}", tags.join(", "))).collect();
    let text = format!(
        "Your skills: {}.\nYour subtask:\n{}\nColleagues:\n{}\n\n\
         Decide whether any listed colleague must contribute before you can finish. Reply with one JSON object:\n\
         {{\"collaboration_required\": true|false, \"requirement\": [{{\"request_id\": \"0001\", \
         \"worker_id\": \"Worker_N\", \"request_detail\": \"what they must do\"}}]}}\n\
         Leave requirement empty when no help is needed.",
        own_skills.join(", "),
        pretty(subtask),
        roster.join("\n")
    );
    Prompt { role: PromptRole::Worker, key, text }
}

/// Prompt asking a provider to carry out a colleague's request.
pub fn provider_prompt(request: &Document, own_skills: &[String]) -> Prompt {
    let key = request.get("request_detail").and_then(Document::as_str).unwrap_or_default().to_owned();
    let text = format!(
        "Your skills: {}.\nA colleague sent this request:\n{}\n\n\
         Carry it out and reply with one JSON object: {{\"response\": \"explanation of the result\"}}.",
        own_skills.join(", "),
        pretty(request)
    );
    Prompt { role: PromptRole::Provider, key, text }
}

/// Prompt asking for a bounded state-transition tree.
pub fn state_tree_prompt(task: &str, current_state: &str, actions: &[String], observations: &Document, htn: &Document) -> Prompt {
    let context = Document::object([
        ("task_description", Document::from(task)),
        ("current_state", Document::from(current_state)),
        ("available_actions", Document::strings(actions)),
        ("observations", observations.clone()),
        ("htn", htn.clone()),
    ]);
    let text = format!(
        "Context:\n{}\n\n\
         Predict how the state can evolve from current_state for at most five layers of states. Each node has \
         \"state\", \"score\" (0 to 1, higher is closer to the goal, safer and cheaper), \"is_goal\" and \
         \"transitions\"; each transition has \"action\" (from available_actions), \"probability\" and \
         \"next_state\". Goal and leaf nodes have no transitions. Drop unsafe branches. \
         Reply with {{\"next_state\": <root node>}}.",
        pretty(&context)
    );
    Prompt { role: PromptRole::StateTree, key: format!("{task} @ {current_state}"), text }
}

/// Prompt asking for the single next action.
pub fn action_selector_prompt(task: &str, current_state: &str, actions: &[String], observations: &Document) -> Prompt {
    let context = Document::object([
        ("task_description", Document::from(task)),
        ("current_state", Document::from(current_state)),
        ("available_actions", Document::strings(actions)),
        ("observations", observations.clone()),
    ]);
    let text = format!(
        "Context:\n{}\n\nPick the one action from available_actions that best moves the task forward safely. \
         Reply with {{\"selected_action\": \"<action>\", \"reason\": \"short justification\"}}.",
        pretty(&context)
    );
    Prompt { role: PromptRole::ActionSelector, key: format!("{task} @ {current_state}"), text }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Mutex;

    use super::*;

    struct Flaky {
        failures: AtomicU32,
        reply: String,
        seen: Mutex<Vec<String>>,
    }

    impl Transport for Flaky {
        fn post(&self, _: &str, _: Option<&str>, body: &str, _: Duration) -> Result<String, BackendError> {
            self.seen.lock().unwrap().push(body.to_owned());
            if self.failures.load(Ordering::SeqCst) > 0 {
                self.failures.fetch_sub(1, Ordering::SeqCst);
                return Err(BackendError::Timeout);
            }
            Ok(self.reply.clone())
        }
    }

    fn fast_config() -> RemoteConfig {
        let mut c = RemoteConfig::new("http://localhost:0/complete", "m");
        c.initial_backoff = Duration::ZERO;
        c
    }

    fn prompt() -> Prompt {
        Prompt { role: PromptRole::Provider, key: "k".into(), text: "t".into() }
    }

    #[test]
    fn remote_retries_then_succeeds() {
        let t =
            Flaky { failures: AtomicU32::new(2), reply: r#"{"text": "{\"response\": \"ok\"}"}"#.into(), seen: Mutex::default() };
        let backend = RemoteBackend::with_transport(fast_config(), t);
        assert_eq!(backend.complete(&prompt()).unwrap(), r#"{"response": "ok"}"#);
        assert_eq!(backend.transport.seen.lock().unwrap().len(), 3);
    }

    #[test]
    fn remote_timeout_after_retries() {
        let t = Flaky { failures: AtomicU32::new(10), reply: String::new(), seen: Mutex::default() };
        let backend = RemoteBackend::with_transport(fast_config(), t);
        let err = backend.complete(&prompt()).unwrap_err();
        assert_eq!(err, BackendError::Exhausted { attempts: 3, last: Box::new(BackendError::Timeout) });
    }

    #[test]
    fn scripted_lookup_is_deterministic() {
        let mut b = ScriptedBackend::new();
        b.insert(PromptRole::Leader, "Fetch  the apple", Document::object([("difficulty", Document::from("high"))]));
        let p = Prompt { role: PromptRole::Leader, key: "fetch the apple".into(), text: String::new() };
        let first = b.complete(&p).unwrap();
        assert_eq!(first, b.complete(&p).unwrap());
        assert_eq!(first, r#"{"difficulty":"high"}"#);
        let missing = Prompt { role: PromptRole::Worker, ..p };
        assert!(matches!(b.complete(&missing), Err(BackendError::NoScript { .. })));
    }

    #[test]
    fn builtin_script_loads() {
        assert!(!ScriptedBackend::builtin().is_empty());
    }
}
