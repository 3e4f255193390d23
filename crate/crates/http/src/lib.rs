//! Live providers for [`anchor_core::gateway::Gateway`] over the
//! OpenAI-compatible `chat/completions` and `embeddings` endpoints, and
//! provider selection from the environment.
//!
//! | variable | meaning |
//! |---|---|
//! | `ANCHOR_CHAT_URL` | full chat-completions endpoint URL |
//! | `ANCHOR_CHAT_MODEL` | model name, or `mock:world:<path>` / `mock:fixtures:<path>` |
//! | `ANCHOR_API_KEY` | bearer token for both endpoints |
//! | `ANCHOR_EMBED_URL` | full embeddings endpoint URL |
//! | `ANCHOR_EMBED_MODEL` | model name, or `mock:hash-<d>` |

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use anchor_core::gateway::mock::{FixtureProvider, HashEmbedder};
use anchor_core::gateway::world::ScriptedWorld;
use anchor_core::gateway::{ChatProvider, ChatRequest, ChatResponse, EmbedProvider, GatewayError, Role, Usage};
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::Deserialize;
use serde_json::json;

pub const CHAT_URL: &str = "ANCHOR_CHAT_URL";
pub const CHAT_MODEL: &str = "ANCHOR_CHAT_MODEL";
pub const API_KEY: &str = "ANCHOR_API_KEY";
pub const EMBED_URL: &str = "ANCHOR_EMBED_URL";
pub const EMBED_MODEL: &str = "ANCHOR_EMBED_MODEL";

const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone)]
pub struct Endpoint {
    pub url: String,
    pub model: String,
    pub api_key: Option<String>,
}

fn client(timeout: Duration) -> Result<Client, GatewayError> {
    Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| GatewayError::Config(format!("http client: {e}")))
}

/// Auth and missing-endpoint statuses cannot be fixed by retrying.
fn status_error(status: StatusCode, body: &str) -> GatewayError {
    let snippet: String = body.chars().take(200).collect();
    let msg = format!("HTTP {status}: {snippet}");
    match status {
        StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN | StatusCode::NOT_FOUND => GatewayError::Config(msg),
        _ => GatewayError::Transport(msg),
    }
}

fn post(client: &Client, endpoint: &Endpoint, body: &serde_json::Value) -> Result<String, GatewayError> {
    let mut req = client.post(&endpoint.url).json(body);
    if let Some(key) = &endpoint.api_key {
        req = req.bearer_auth(key);
    }
    let response = req.send().map_err(|e| GatewayError::Transport(e.to_string()))?;
    let status = response.status();
    let text = response.text().map_err(|e| GatewayError::Transport(e.to_string()))?;
    if !status.is_success() {
        return Err(status_error(status, &text));
    }
    Ok(text)
}

pub struct HttpChat {
    endpoint: Endpoint,
    client: Client,
}

impl HttpChat {
    pub fn new(endpoint: Endpoint) -> Result<Self, GatewayError> {
        Self::with_timeout(endpoint, DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(endpoint: Endpoint, timeout: Duration) -> Result<Self, GatewayError> {
        Ok(HttpChat {
            client: client(timeout)?,
            endpoint,
        })
    }

    fn body(&self, request: &ChatRequest) -> serde_json::Value {
        let mut messages = Vec::with_capacity(request.turns.len() + 1);
        if !request.system.is_empty() {
            messages.push(json!({ "role": Role::System.as_str(), "content": request.system }));
        }
        for (role, text) in &request.turns {
            messages.push(json!({ "role": role.as_str(), "content": text }));
        }
        json!({
            "model": self.endpoint.model,
            "messages": messages,
            "temperature": request.temperature,
        })
    }
}

#[derive(Deserialize)]
struct ChatBody {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<UsageBody>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct UsageBody {
    prompt_tokens: u64,
    completion_tokens: u64,
}

pub fn parse_chat_response(text: &str) -> Result<ChatResponse, GatewayError> {
    let body: ChatBody =
        serde_json::from_str(text).map_err(|e| GatewayError::Transport(format!("malformed chat response: {e}")))?;
    let content = body
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| GatewayError::Transport("chat response without content".into()))?;
    Ok(ChatResponse {
        text: content,
        usage: body.usage.map(|u| Usage {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
        }),
    })
}

impl ChatProvider for HttpChat {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let text = post(&self.client, &self.endpoint, &self.body(request))?;
        parse_chat_response(&text)
    }

    fn describe(&self) -> String {
        format!("{} at {}", self.endpoint.model, self.endpoint.url)
    }
}

pub struct HttpEmbed {
    endpoint: Endpoint,
    client: Client,
}

impl HttpEmbed {
    pub fn new(endpoint: Endpoint) -> Result<Self, GatewayError> {
        Ok(HttpEmbed {
            client: client(DEFAULT_TIMEOUT)?,
            endpoint,
        })
    }
}

#[derive(Deserialize)]
struct EmbedBody {
    data: Vec<EmbedItem>,
}

#[derive(Deserialize)]
struct EmbedItem {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

pub fn parse_embedding_response(text: &str, expected: usize) -> Result<Vec<Vec<f64>>, GatewayError> {
    let body: EmbedBody = serde_json::from_str(text)
        .map_err(|e| GatewayError::Transport(format!("malformed embedding response: {e}")))?;
    if body.data.len() != expected {
        return Err(GatewayError::CountMismatch {
            expected,
            got: body.data.len(),
        });
    }
    let mut items: Vec<(usize, Vec<f64>)> = body
        .data
        .into_iter()
        .enumerate()
        .map(|(i, item)| (item.index.unwrap_or(i), item.embedding))
        .collect();
    items.sort_by_key(|(i, _)| *i);
    Ok(items.into_iter().map(|(_, v)| v).collect())
}

impl EmbedProvider for HttpEmbed {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        let body = json!({ "model": self.endpoint.model, "input": texts });
        let text = post(&self.client, &self.endpoint, &body)?;
        parse_embedding_response(&text, texts.len())
    }

    fn describe(&self) -> String {
        format!("{} at {}", self.endpoint.model, self.endpoint.url)
    }
}

pub struct Providers {
    pub chat: Arc<dyn ChatProvider>,
    pub embed: Arc<dyn EmbedProvider>,
}

fn required(lookup: &dyn Fn(&str) -> Option<String>, name: &str) -> Result<String, GatewayError> {
    lookup(name)
        .filter(|v| !v.trim().is_empty())
        .ok_or_else(|| GatewayError::Config(format!("{name} is not set")))
}

pub fn chat_from(lookup: &dyn Fn(&str) -> Option<String>) -> Result<Arc<dyn ChatProvider>, GatewayError> {
    let model = required(lookup, CHAT_MODEL)?;
    if let Some(path) = model.strip_prefix("mock:world:") {
        return Ok(Arc::new(ScriptedWorld::load(Path::new(path))?));
    }
    if let Some(path) = model.strip_prefix("mock:fixtures:") {
        return Ok(Arc::new(FixtureProvider::from_jsonl(Path::new(path))?));
    }
    Ok(Arc::new(HttpChat::new(Endpoint {
        url: required(lookup, CHAT_URL)?,
        model,
        api_key: lookup(API_KEY),
    })?))
}

pub fn embed_from(lookup: &dyn Fn(&str) -> Option<String>) -> Result<Arc<dyn EmbedProvider>, GatewayError> {
    let model = required(lookup, EMBED_MODEL)?;
    if let Some(dim) = model.strip_prefix("mock:hash-") {
        let dim: usize = dim
            .parse()
            .ok()
            .filter(|&d| d > 0)
            .ok_or_else(|| GatewayError::Config(format!("bad hash embedder width in {model:?}")))?;
        return Ok(Arc::new(HashEmbedder::new(dim)));
    }
    Ok(Arc::new(HttpEmbed::new(Endpoint {
        url: required(lookup, EMBED_URL)?,
        model,
        api_key: lookup(API_KEY),
    })?))
}

/// Chat and embedding providers named by a variable lookup.
pub fn providers_from(lookup: impl Fn(&str) -> Option<String>) -> Result<Providers, GatewayError> {
    Ok(Providers {
        chat: chat_from(&lookup)?,
        embed: embed_from(&lookup)?,
    })
}

/// Chat and embedding providers named by the process environment.
pub fn providers_from_env() -> Result<Providers, GatewayError> {
    providers_from(|name| std::env::var(name).ok())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn lookup(pairs: &[(&str, &str)]) -> impl Fn(&str) -> Option<String> {
        let map: HashMap<String, String> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        move |k| map.get(k).cloned()
    }

    #[test]
    fn chat_response_parsing() {
        let r = parse_chat_response(
            r#"{"choices":[{"message":{"role":"assistant","content":"hi"}}],"usage":{"prompt_tokens":3,"completion_tokens":1,"total_tokens":4}}"#,
        )
        .unwrap();
        assert_eq!(r.text, "hi");
        assert_eq!(r.usage.unwrap().prompt_tokens, 3);
        assert!(parse_chat_response(r#"{"choices":[]}"#).is_err());
        assert!(parse_chat_response("<html>").is_err());
    }

    #[test]
    fn embedding_order_follows_index() {
        let v = parse_embedding_response(
            r#"{"data":[{"index":1,"embedding":[2.0]},{"index":0,"embedding":[1.0]}]}"#,
            2,
        )
        .unwrap();
        assert_eq!(v, vec![vec![1.0], vec![2.0]]);
        assert!(matches!(
            parse_embedding_response(r#"{"data":[]}"#, 1),
            Err(GatewayError::CountMismatch { .. })
        ));
    }

    #[test]
    fn hash_embedder_from_model_name() {
        let p = embed_from(&lookup(&[(EMBED_MODEL, "mock:hash-24")])).unwrap();
        assert_eq!(p.dim(), Some(24));
        assert!(embed_from(&lookup(&[(EMBED_MODEL, "mock:hash-0")])).is_err());
        assert!(embed_from(&lookup(&[(EMBED_MODEL, "mock:hash-x")])).is_err());
    }

    #[test]
    fn missing_settings_are_config_errors() {
        assert!(matches!(chat_from(&lookup(&[])), Err(GatewayError::Config(_))));
        let err = chat_from(&lookup(&[(CHAT_MODEL, "gpt")])).err().unwrap();
        assert!(err.to_string().contains(CHAT_URL));
        assert!(err.is_fatal());
        assert!(embed_from(&lookup(&[(EMBED_MODEL, "text-embed")])).is_err());
    }

    #[test]
    fn statuses() {
        assert!(status_error(StatusCode::UNAUTHORIZED, "").is_fatal());
        assert!(!status_error(StatusCode::TOO_MANY_REQUESTS, "").is_fatal());
        assert!(!status_error(StatusCode::BAD_GATEWAY, "").is_fatal());
    }
}
