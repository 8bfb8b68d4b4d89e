//! Two-step attribute discovery through a chat-completion endpoint: first a
//! description per category, then a summary of shared attribute bases.
//!
//! Wire format. Request body:
//! `{"model": "<id>", "messages": [{"role": "user", "content": "<prompt>"}]}`.
//! The reply text is read from `choices[0].message.content`; a flat
//! `{"content": "<text>"}` body is also accepted.

use std::cell::{Cell, RefCell};
use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::sha256_hex;
use crate::source::{AttributeBases, Provenance};

pub const DEFAULT_CREDENTIAL_ENV: &str = "ATPROMPT_LLM_API_KEY";
pub const CACHE_FORMAT_VERSION: u32 = 1;

pub const DESCRIBE_TEMPLATE: &str = "Describe what a {class} looks like in two or three sentences.";
pub const SUMMARIZE_TEMPLATE: &str = "Here are descriptions of several categories:\n{descriptions}\n\
List exactly {n} independent attributes that are common across all of these categories. \
Each attribute must be a single word. Answer with the attributes separated by commas and nothing else.";
pub const REPROMPT_TEMPLATE: &str = "That answer could not be used. Reply with exactly {n} distinct \
single-word attributes separated by commas, and nothing else.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmClientConfig {
    /// Full URL of the chat-completion endpoint.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API credential.
    pub credential_env: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    /// Directory for cached description responses.
    pub cache_dir: Option<PathBuf>,
}

impl Default for LlmClientConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8080/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            credential_env: DEFAULT_CREDENTIAL_ENV.into(),
            timeout_secs: 60.0,
            max_retries: 2,
            cache_dir: None,
        }
    }
}

impl LlmClientConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_secs > 0.0) || !self.timeout_secs.is_finite() {
            return Err(Error::Configuration(format!(
                "timeout_secs must be positive, got {}",
                self.timeout_secs
            )));
        }
        if self.model.trim().is_empty() {
            return Err(Error::Configuration("model identifier must not be empty".into()));
        }
        if self.credential_env.trim().is_empty() {
            return Err(Error::Configuration(
                "credential_env must name an environment variable".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    pub fn user(model: &str, content: String) -> Self {
        Self {
            model: model.to_string(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content,
            }],
        }
    }

    /// The request extended with the model's reply and a follow-up turn.
    pub fn follow_up(&self, reply: &str, content: String) -> Self {
        let mut messages = self.messages.clone();
        messages.push(ChatMessage {
            role: "assistant".into(),
            content: reply.to_string(),
        });
        messages.push(ChatMessage {
            role: "user".into(),
            content,
        });
        Self {
            model: self.model.clone(),
            messages,
        }
    }
}

/// Sends one request and returns the raw response body. Transport
/// failures are [`Error::Remote`]; the client retries them.
pub trait ChatTransport {
    fn send(&self, request: &ChatRequest) -> Result<String>;
}

/// Blocking HTTP transport. The credential is read from the configured
/// environment variable for each request and never stored.
pub struct HttpTransport {
    endpoint: String,
    credential_env: String,
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(config: &LlmClientConfig) -> Result<Self> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| Error::Remote(format!("cannot build HTTP client: {e}")))?;
        Ok(Self {
            endpoint: config.endpoint.clone(),
            credential_env: config.credential_env.clone(),
            client,
        })
    }
}

impl ChatTransport for HttpTransport {
    fn send(&self, request: &ChatRequest) -> Result<String> {
        let mut builder = self.client.post(&self.endpoint).json(request);
        match std::env::var(&self.credential_env) {
            Ok(key) if !key.is_empty() => builder = builder.bearer_auth(key),
            _ => log::warn!(
                "environment variable {} is not set; sending without credentials",
                self.credential_env
            ),
        }
        let response = builder
            .send()
            .map_err(|e| Error::Remote(format!("request to {} failed: {}", self.endpoint, e.without_url())))?;
        let status = response.status();
        let body = response.text().map_err(|e| {
            Error::Remote(format!(
                "reading response from {} failed: {}",
                self.endpoint,
                e.without_url()
            ))
        })?;
        if !status.is_success() {
            return Err(Error::Remote(format!("{} answered HTTP {status}", self.endpoint)));
        }
        Ok(body)
    }
}

type Responder = Box<dyn Fn(&ChatRequest) -> Result<String>>;

/// Offline transport that answers from a script and counts calls.
pub struct MockTransport {
    responder: RefCell<Responder>,
    queue: RefCell<Option<VecDeque<Result<String>>>>,
    calls: Cell<usize>,
    requests: RefCell<Vec<ChatRequest>>,
}

impl MockTransport {
    /// Answers every request with `respond(request)`.
    pub fn new(respond: impl Fn(&ChatRequest) -> Result<String> + 'static) -> Self {
        Self {
            responder: RefCell::new(Box::new(respond)),
            queue: RefCell::new(None),
            calls: Cell::new(0),
            requests: RefCell::new(Vec::new()),
        }
    }

    /// Answers requests with `replies` in order, then with remote errors.
    pub fn scripted(replies: Vec<Result<String>>) -> Self {
        let mock = Self::new(|_| Err(Error::Remote("mock script exhausted".into())));
        *mock.queue.borrow_mut() = Some(replies.into());
        mock
    }

    /// A chat-completion body carrying `text`.
    pub fn reply(text: &str) -> String {
        serde_json::json!({ "choices": [{ "message": { "role": "assistant", "content": text } }] }).to_string()
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.borrow().clone()
    }
}

impl ChatTransport for MockTransport {
    fn send(&self, request: &ChatRequest) -> Result<String> {
        self.calls.set(self.calls.get() + 1);
        self.requests.borrow_mut().push(request.clone());
        if let Some(queue) = self.queue.borrow_mut().as_mut() {
            if let Some(next) = queue.pop_front() {
                return next;
            }
        }
        (self.responder.borrow())(request)
    }
}

impl<T: ChatTransport + ?Sized> ChatTransport for &T {
    fn send(&self, request: &ChatRequest) -> Result<String> {
        (**self).send(request)
    }
}

/// Reply text of a chat-completion body.
pub fn parse_reply(body: &str) -> Result<String> {
    let bad = |message: String| {
        log::warn!("unusable model response: {body}");
        Error::Parse {
            message,
            raw: body.to_string(),
        }
    };
    let value: serde_json::Value = serde_json::from_str(body).map_err(|e| bad(format!("response is not JSON: {e}")))?;
    let text = value
        .pointer("/choices/0/message/content")
        .or_else(|| value.get("content"))
        .and_then(|v| v.as_str())
        .ok_or_else(|| bad("response has no message content".into()))?;
    Ok(text.trim().to_string())
}

/// Exactly `n` distinct single-word attributes, lower-cased, or `None`.
pub fn parse_attribute_list(text: &str, n: usize) -> Option<Vec<String>> {
    let items: Vec<String> = text
        .split([',', '\n', ';'])
        .map(|s| {
            s.trim()
                .trim_start_matches(|c: char| c == '-' || c == '*' || c.is_ascii_digit() || c == '.' || c == ')')
                .trim()
                .trim_end_matches('.')
                .to_lowercase()
        })
        .filter(|s| !s.is_empty())
        .collect();
    let single_word = |s: &String| s.chars().all(|c| c.is_alphabetic() || c == '-');
    if items.len() != n || !items.iter().all(single_word) {
        return None;
    }
    let mut distinct = items.clone();
    distinct.sort();
    distinct.dedup();
    (distinct.len() == n).then_some(items)
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    format_version: u32,
    model: String,
    class: String,
    prompt: String,
    response: String,
}

pub struct LlmClient<T: ChatTransport> {
    pub config: LlmClientConfig,
    transport: T,
}

impl<T: ChatTransport> LlmClient<T> {
    pub fn new(config: LlmClientConfig, transport: T) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, transport })
    }

    /// Raw body for `request`, retrying remote errors up to `max_retries`.
    fn send(&self, request: &ChatRequest) -> Result<String> {
        let mut attempt = 0;
        loop {
            match self.transport.send(request) {
                Err(Error::Remote(msg)) if attempt < self.config.max_retries => {
                    attempt += 1;
                    log::warn!(
                        "model request failed ({msg}); retry {attempt}/{}",
                        self.config.max_retries
                    );
                }
                Err(Error::Remote(msg)) => {
                    return Err(Error::Remote(format!("{msg} (after {} attempts)", attempt + 1)))
                }
                other => return other,
            }
        }
    }

    fn cache_path(&self, dir: &Path, class: &str) -> PathBuf {
        let key = sha256_hex(format!("{}\u{0}{}", self.config.model, class).as_bytes());
        dir.join(format!("{key}.json"))
    }

    fn cached(&self, class: &str) -> Result<Option<String>> {
        let Some(dir) = &self.config.cache_dir else {
            return Ok(None);
        };
        let path = self.cache_path(dir, class);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let entry: CacheEntry = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        if entry.format_version != CACHE_FORMAT_VERSION || entry.model != self.config.model || entry.class != class {
            return Err(Error::format(&path, "cache entry does not match its key"));
        }
        Ok(Some(entry.response))
    }

    fn store(&self, class: &str, prompt: &str, response: &str) -> Result<()> {
        let Some(dir) = &self.config.cache_dir else {
            return Ok(());
        };
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = self.cache_path(dir, class);
        let entry = CacheEntry {
            format_version: CACHE_FORMAT_VERSION,
            model: self.config.model.clone(),
            class: class.to_string(),
            prompt: prompt.to_string(),
            response: response.to_string(),
        };
        let text = serde_json::to_string_pretty(&entry).expect("cache entry serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// One description per class, answered from the cache when possible.
    pub fn describe_categories(&self, class_names: &[String]) -> Result<Vec<String>> {
        class_names
            .iter()
            .map(|class| {
                if let Some(hit) = self.cached(class)? {
                    log::debug!("description cache hit for `{class}`");
                    return parse_reply(&hit);
                }
                let prompt = DESCRIBE_TEMPLATE.replace("{class}", class);
                let body = self.send(&ChatRequest::user(&self.config.model, prompt.clone()))?;
                let text = parse_reply(&body)?;
                self.store(class, &prompt, &body)?;
                Ok(text)
            })
            .collect()
    }

    /// Asks for `n` shared attribute bases, with one reprompt when the
    /// first answer is unusable.
    pub fn summarize_bases(&self, dataset_name: &str, descriptions: &[String], n: usize) -> Result<AttributeBases> {
        if n == 0 {
            return Err(Error::Configuration(
                "number of attribute bases must be at least 1".into(),
            ));
        }
        if descriptions.is_empty() {
            return Err(Error::Data("no descriptions to summarize".into()));
        }
        let listing: String = descriptions.iter().map(|d| format!("- {d}\n")).collect();
        let prompt = SUMMARIZE_TEMPLATE
            .replace("{descriptions}", listing.trim_end())
            .replace("{n}", &n.to_string());
        let request = ChatRequest::user(&self.config.model, prompt);
        let first = parse_reply(&self.send(&request)?)?;
        if let Some(bases) = parse_attribute_list(&first, n) {
            return AttributeBases::new(dataset_name, bases, Provenance::Llm);
        }
        log::info!("attribute summary unusable, reprompting once");
        let retry = request.follow_up(&first, REPROMPT_TEMPLATE.replace("{n}", &n.to_string()));
        let second = parse_reply(&self.send(&retry)?)?;
        match parse_attribute_list(&second, n) {
            Some(bases) => AttributeBases::new(dataset_name, bases, Provenance::Llm),
            None => Err(Error::Extraction {
                expected: n,
                raw: second,
            }),
        }
    }
}
