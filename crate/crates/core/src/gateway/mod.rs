//! Boundary to the chat and embedding models.
//!
//! [`Gateway`] wraps a [`ChatProvider`] and an [`EmbedProvider`] with retry,
//! cost accounting, bounded concurrency and an embedding cache. Providers are
//! swappable: live HTTP clients live in a separate crate, while [`mock`] and
//! [`world`] provide offline replacements.

pub mod extract;
pub mod mock;
pub mod prompts;
pub mod world;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use extract::{extract_structured, ParseError, Payload};
pub use prompts::PromptSet;

use crate::config::PipelineConfig;

/// Identifies the prompt template and therefore the expected answer schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PromptTag {
    SentenceGen,
    FactorExtract,
    LabelVote,
    Theme,
    Prune,
    MapVote,
    Reflect,
    PhiElicit,
    LatentDiscover,
    LatentElicit,
}

impl PromptTag {
    pub const ALL: [PromptTag; 10] = [
        PromptTag::SentenceGen,
        PromptTag::FactorExtract,
        PromptTag::LabelVote,
        PromptTag::Theme,
        PromptTag::Prune,
        PromptTag::MapVote,
        PromptTag::Reflect,
        PromptTag::PhiElicit,
        PromptTag::LatentDiscover,
        PromptTag::LatentElicit,
    ];

    /// File stem of the template.
    pub fn file_stem(self) -> &'static str {
        match self {
            PromptTag::SentenceGen => "sentence_gen",
            PromptTag::FactorExtract => "factor_extract",
            PromptTag::LabelVote => "label_vote",
            PromptTag::Theme => "theme",
            PromptTag::Prune => "prune",
            PromptTag::MapVote => "map_vote",
            PromptTag::Reflect => "reflect",
            PromptTag::PhiElicit => "phi_elicit",
            PromptTag::LatentDiscover => "latent_discover",
            PromptTag::LatentElicit => "latent_elicit",
        }
    }

    /// Whether the tag belongs to factor-space construction.
    pub fn builds_space(self) -> bool {
        matches!(
            self,
            PromptTag::SentenceGen
                | PromptTag::FactorExtract
                | PromptTag::LabelVote
                | PromptTag::Theme
                | PromptTag::Prune
        )
    }
}

impl fmt::Display for PromptTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub tag: PromptTag,
    pub system: String,
    pub turns: Vec<(Role, String)>,
    pub temperature: f64,
    /// Index of this sample among repeated identical prompts. Never sent to
    /// a live provider; it only separates self-consistency samples for
    /// replay and scripted providers.
    pub sample: u32,
}

impl ChatRequest {
    /// Stable digest over tag, messages and sample index. Temperature is
    /// excluded so fixtures survive sampling-parameter changes.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.tag.file_stem().as_bytes());
        h.update([0]);
        h.update(self.system.as_bytes());
        for (role, text) in &self.turns {
            h.update([0]);
            h.update(role.as_str().as_bytes());
            h.update([0]);
            h.update(text.as_bytes());
        }
        h.update([0]);
        h.update(self.sample.to_le_bytes());
        hex::encode(h.finalize())[..32].to_string()
    }

    /// Text of the final user turn.
    pub fn query(&self) -> &str {
        self.turns
            .iter()
            .rev()
            .find(|(role, _)| *role == Role::User)
            .map(|(_, text)| text.as_str())
            .unwrap_or("")
    }

    fn prompt_chars(&self) -> usize {
        self.system.chars().count()
            + self.turns.iter().map(|(_, t)| t.chars().count()).sum::<usize>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Option<Usage>,
}

impl ChatResponse {
    pub fn text(text: impl Into<String>) -> Self {
        ChatResponse {
            text: text.into(),
            usage: None,
        }
    }
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;

    fn describe(&self) -> String {
        "chat provider".to_string()
    }
}

pub trait EmbedProvider: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError>;

    /// Width of the vectors this provider returns, when known up front.
    fn dim(&self) -> Option<usize> {
        None
    }

    fn describe(&self) -> String {
        "embedding provider".to_string()
    }
}

impl<T: ChatProvider + ?Sized> ChatProvider for Arc<T> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).complete(request)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

impl<T: EmbedProvider + ?Sized> EmbedProvider for Arc<T> {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        (**self).embed(texts)
    }

    fn dim(&self) -> Option<usize> {
        (**self).dim()
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("provider configuration: {0}")]
    Config(String),
    #[error("no fixture for {tag} request {digest}")]
    MissingFixture { tag: PromptTag, digest: String },
    #[error("embedding width {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding {index} has a non-finite component")]
    NonFinite { index: usize },
    #[error("provider returned {got} vectors for {expected} texts")]
    CountMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Parse(#[from] ParseError),
}

impl GatewayError {
    /// Errors that retrying cannot fix.
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            GatewayError::Config(_) | GatewayError::MissingFixture { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagCost {
    pub calls: u64,
    pub tokens_in: u64,
    pub tokens_out: u64,
}

/// Calls and tokens spent, per prompt tag.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub chat: BTreeMap<PromptTag, TagCost>,
    pub embed_calls: u64,
    pub embed_texts: u64,
    pub embed_tokens: u64,
}

impl CostLedger {
    pub fn calls(&self, tag: PromptTag) -> u64 {
        self.chat.get(&tag).map_or(0, |c| c.calls)
    }

    pub fn total_calls(&self) -> u64 {
        self.chat.values().map(|c| c.calls).sum()
    }

    pub fn total_tokens(&self) -> u64 {
        self.chat
            .values()
            .map(|c| c.tokens_in + c.tokens_out)
            .sum::<u64>()
            + self.embed_tokens
    }

    /// Chat calls spent building factor spaces.
    pub fn space_calls(&self) -> u64 {
        self.chat
            .iter()
            .filter(|(tag, _)| tag.builds_space())
            .map(|(_, c)| c.calls)
            .sum()
    }

    /// Spending recorded after the `earlier` snapshot of the same ledger.
    pub fn since(&self, earlier: &CostLedger) -> CostLedger {
        let chat = self
            .chat
            .iter()
            .map(|(tag, c)| {
                let e = earlier.chat.get(tag).copied().unwrap_or_default();
                let diff = TagCost {
                    calls: c.calls - e.calls,
                    tokens_in: c.tokens_in - e.tokens_in,
                    tokens_out: c.tokens_out - e.tokens_out,
                };
                (*tag, diff)
            })
            .filter(|(_, c)| *c != TagCost::default())
            .collect();
        CostLedger {
            chat,
            embed_calls: self.embed_calls - earlier.embed_calls,
            embed_texts: self.embed_texts - earlier.embed_texts,
            embed_tokens: self.embed_tokens - earlier.embed_tokens,
        }
    }

    pub fn absorb(&mut self, other: &CostLedger) {
        for (tag, c) in &other.chat {
            let e = self.chat.entry(*tag).or_default();
            e.calls += c.calls;
            e.tokens_in += c.tokens_in;
            e.tokens_out += c.tokens_out;
        }
        self.embed_calls += other.embed_calls;
        self.embed_texts += other.embed_texts;
        self.embed_tokens += other.embed_tokens;
    }
}

/// Token estimate when a provider reports no usage: one token per four
/// characters, rounded up.
pub fn estimate_tokens(chars: usize) -> u64 {
    chars.div_ceil(4) as u64
}

#[derive(Debug, Clone)]
pub struct GatewayOptions {
    /// Total attempts per structured query.
    pub retries: u32,
    pub concurrency: usize,
    pub temperature: f64,
    pub embedding_dim: Option<usize>,
    pub prompts: PromptSet,
}

impl Default for GatewayOptions {
    fn default() -> Self {
        GatewayOptions {
            retries: 20,
            concurrency: 4,
            temperature: 0.5,
            embedding_dim: None,
            prompts: PromptSet::builtin(),
        }
    }
}

impl GatewayOptions {
    pub fn from_config(config: &PipelineConfig) -> Result<Self, GatewayError> {
        let prompts = match &config.runtime.prompt_dir {
            Some(dir) => PromptSet::builtin().with_overrides(dir)?,
            None => PromptSet::builtin(),
        };
        Ok(GatewayOptions {
            retries: config.inference.elicit_retries,
            concurrency: config.runtime.concurrency,
            temperature: config.inference.temperature,
            embedding_dim: config.runtime.embedding_dim,
            prompts,
        })
    }
}

pub struct EmbeddingRequest {
    pub texts: Vec<String>,
    pub expected_dim: usize,
}

const EMBED_CHUNK: usize = 256;

pub struct Gateway {
    chat: Arc<dyn ChatProvider>,
    embedder: Arc<dyn EmbedProvider>,
    options: GatewayOptions,
    pool: rayon::ThreadPool,
    ledger: Mutex<CostLedger>,
    embed_cache: Mutex<HashMap<String, Vec<f64>>>,
    dim: Mutex<Option<usize>>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("chat", &self.chat.describe())
            .field("embedder", &self.embedder.describe())
            .field("retries", &self.options.retries)
            .finish()
    }
}

impl Gateway {
    pub fn new(
        chat: Arc<dyn ChatProvider>,
        embedder: Arc<dyn EmbedProvider>,
        options: GatewayOptions,
    ) -> Self {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.concurrency.max(1))
            .thread_name(|i| format!("gateway-{i}"))
            .build()
            .expect("thread pool");
        let dim = options.embedding_dim.or_else(|| embedder.dim());
        Gateway {
            chat,
            embedder,
            options,
            pool,
            ledger: Mutex::new(CostLedger::default()),
            embed_cache: Mutex::new(HashMap::new()),
            dim: Mutex::new(dim),
        }
    }

    pub fn options(&self) -> &GatewayOptions {
        &self.options
    }

    pub fn prompts(&self) -> &PromptSet {
        &self.options.prompts
    }

    /// Renders the template for `tag` into a request.
    pub fn request(&self, tag: PromptTag, vars: &[(&str, &str)], sample: u32) -> ChatRequest {
        let (system, turns) = self.options.prompts.render(tag, vars);
        ChatRequest {
            tag,
            system,
            turns,
            temperature: self.options.temperature,
            sample,
        }
    }

    /// One provider call, returned verbatim.
    pub fn chat_complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let response = self.chat.complete(request);
        let mut ledger = self.ledger.lock().expect("ledger lock");
        let entry = ledger.chat.entry(request.tag).or_default();
        entry.calls += 1;
        match &response {
            Ok(ChatResponse { usage: Some(u), .. }) => {
                entry.tokens_in += u.prompt_tokens;
                entry.tokens_out += u.completion_tokens;
            }
            Ok(ChatResponse { text, usage: None }) => {
                entry.tokens_in += estimate_tokens(request.prompt_chars());
                entry.tokens_out += estimate_tokens(text.chars().count());
            }
            Err(_) => entry.tokens_in += estimate_tokens(request.prompt_chars()),
        }
        response
    }

    /// Issues `request` until `parse` accepts a response.
    ///
    /// Returns `Ok(None)` when every attempt produced text that failed to
    /// parse, leaving the fallback to the caller. Fatal provider errors stop
    /// immediately; if no attempt reached the provider the last transport
    /// error is returned.
    pub fn ask<T>(
        &self,
        request: &ChatRequest,
        parse: impl Fn(&str) -> Result<T, ParseError>,
    ) -> Result<Option<T>, GatewayError> {
        let mut last_transport = None;
        let mut answered = false;
        for attempt in 0..self.options.retries.max(1) {
            match self.chat_complete(request) {
                Ok(response) => {
                    answered = true;
                    match parse(&response.text) {
                        Ok(value) => return Ok(Some(value)),
                        Err(e) => log::debug!(
                            "{} attempt {} unparseable: {e}",
                            request.tag,
                            attempt + 1
                        ),
                    }
                }
                Err(e) if e.is_fatal() => return Err(e),
                Err(e) => {
                    log::debug!("{} attempt {} failed: {e}", request.tag, attempt + 1);
                    last_transport = Some(e);
                }
            }
        }
        match (answered, last_transport) {
            (false, Some(e)) => Err(e),
            _ => {
                log::warn!("{} gave no parseable answer; falling back", request.tag);
                Ok(None)
            }
        }
    }

    /// [`Gateway::ask`] over many requests, in parallel, order preserved.
    pub fn ask_all<T, F>(
        &self,
        requests: &[ChatRequest],
        parse: F,
    ) -> Vec<Result<Option<T>, GatewayError>>
    where
        T: Send,
        F: Fn(&str) -> Result<T, ParseError> + Sync,
    {
        self.pool
            .install(|| requests.par_iter().map(|r| self.ask(r, &parse)).collect())
    }

    pub fn embed_request(&self, request: &EmbeddingRequest) -> Result<Vec<Vec<f64>>, GatewayError> {
        let vectors = self.embed(&request.texts)?;
        match vectors.iter().find(|v| v.len() != request.expected_dim) {
            Some(v) => Err(GatewayError::DimensionMismatch {
                expected: request.expected_dim,
                got: v.len(),
            }),
            None => Ok(vectors),
        }
    }

    /// Embeds `texts`, consulting the cache first. Output order matches input.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        let missing: Vec<String> = {
            let cache = self.embed_cache.lock().expect("cache lock");
            let mut seen = std::collections::HashSet::new();
            texts
                .iter()
                .filter(|t| !cache.contains_key(*t) && seen.insert(t.as_str()))
                .cloned()
                .collect()
        };
        for chunk in missing.chunks(EMBED_CHUNK) {
            let vectors = self.embed_uncached(chunk)?;
            let mut cache = self.embed_cache.lock().expect("cache lock");
            for (text, v) in chunk.iter().zip(vectors) {
                cache.insert(text.clone(), v);
            }
        }
        let cache = self.embed_cache.lock().expect("cache lock");
        Ok(texts.iter().map(|t| cache[t].clone()).collect())
    }

    fn embed_uncached(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        let mut last = None;
        let mut vectors = None;
        for _ in 0..self.options.retries.max(1) {
            match self.embedder.embed(texts) {
                Ok(v) => {
                    vectors = Some(v);
                    break;
                }
                Err(e) if e.is_fatal() => return Err(e),
                Err(e) => last = Some(e),
            }
        }
        {
            let mut ledger = self.ledger.lock().expect("ledger lock");
            ledger.embed_calls += 1;
            ledger.embed_texts += texts.len() as u64;
            ledger.embed_tokens += texts
                .iter()
                .map(|t| estimate_tokens(t.chars().count()))
                .sum::<u64>();
        }
        let vectors = match vectors {
            Some(v) => v,
            None => return Err(last.expect("at least one attempt")),
        };
        if vectors.len() != texts.len() {
            return Err(GatewayError::CountMismatch {
                expected: texts.len(),
                got: vectors.len(),
            });
        }
        let mut dim = self.dim.lock().expect("dim lock");
        for (index, v) in vectors.iter().enumerate() {
            let expected = *dim.get_or_insert(v.len());
            if v.len() != expected {
                return Err(GatewayError::DimensionMismatch {
                    expected,
                    got: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(GatewayError::NonFinite { index });
            }
        }
        Ok(vectors)
    }

    /// Snapshot of the cost ledger.
    pub fn ledger(&self) -> CostLedger {
        self.ledger.lock().expect("ledger lock").clone()
    }

    pub fn reset_ledger(&self) -> CostLedger {
        std::mem::take(&mut *self.ledger.lock().expect("ledger lock"))
    }

    pub fn describe(&self) -> String {
        format!("{} / {}", self.chat.describe(), self.embedder.describe())
    }
}

#[cfg(test)]
mod tests {
    use super::mock::{HashEmbedder, ScriptedProvider};
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn gateway(chat: impl ChatProvider + 'static, retries: u32) -> Gateway {
        Gateway::new(
            Arc::new(chat),
            Arc::new(HashEmbedder::new(16)),
            GatewayOptions {
                retries,
                ..GatewayOptions::default()
            },
        )
    }

    fn strings(raw: &str) -> Result<Vec<String>, ParseError> {
        extract::string_array(raw)
    }

    #[test]
    fn digest_ignores_temperature_but_not_sample() {
        let g = gateway(ScriptedProvider::constant("[]"), 1);
        let a = g.request(PromptTag::MapVote, &[("condition", "x")], 0);
        let mut b = a.clone();
        b.temperature = 1.3;
        assert_eq!(a.digest(), b.digest());
        b.sample = 1;
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn ledger_counts_every_call_and_estimates_tokens() {
        let g = gateway(ScriptedProvider::constant("abcdefghi"), 1);
        let req = g.request(PromptTag::Theme, &[("factors", "[]")], 0);
        g.chat_complete(&req).unwrap();
        g.chat_complete(&req).unwrap();
        let ledger = g.ledger();
        assert_eq!(ledger.calls(PromptTag::Theme), 2);
        assert_eq!(ledger.chat[&PromptTag::Theme].tokens_out, 6);
        assert_eq!(estimate_tokens(0), 0);
        assert_eq!(estimate_tokens(5), 2);
    }

    #[test]
    fn ask_retries_until_parse_succeeds() {
        let n = Arc::new(AtomicU32::new(0));
        let counter = n.clone();
        let chat = ScriptedProvider::new(move |_| {
            let i = counter.fetch_add(1, Ordering::SeqCst);
            Ok(if i < 2 { "garbage".into() } else { r#"Final answer: ["a"]"#.into() })
        });
        let g = gateway(chat, 5);
        let req = g.request(PromptTag::FactorExtract, &[], 0);
        assert_eq!(g.ask(&req, strings).unwrap(), Some(vec!["a".to_string()]));
        assert_eq!(g.ledger().calls(PromptTag::FactorExtract), 3);
    }

    #[test]
    fn ask_exhausts_budget_then_falls_back() {
        let g = gateway(ScriptedProvider::constant("no payload here"), 4);
        let req = g.request(PromptTag::FactorExtract, &[], 0);
        assert_eq!(g.ask(&req, strings).unwrap(), None);
        assert_eq!(g.ledger().calls(PromptTag::FactorExtract), 4);
    }

    #[test]
    fn transport_and_config_errors() {
        let g = gateway(
            ScriptedProvider::new(|_| Err(GatewayError::Transport("down".into()))),
            3,
        );
        let req = g.request(PromptTag::Theme, &[], 0);
        assert!(matches!(g.ask(&req, strings), Err(GatewayError::Transport(_))));
        assert_eq!(g.ledger().calls(PromptTag::Theme), 3);

        let g = gateway(
            ScriptedProvider::new(|_| Err(GatewayError::Config("no key".into()))),
            3,
        );
        assert!(matches!(g.ask(&req, strings), Err(GatewayError::Config(_))));
        assert_eq!(g.ledger().calls(PromptTag::Theme), 1);
    }

    struct Fixed(Vec<Vec<f64>>);

    impl EmbedProvider for Fixed {
        fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
            Ok(self.0.iter().cycle().take(texts.len()).cloned().collect())
        }
    }

    #[test]
    fn embedding_contract_violations() {
        let opts = |dim| GatewayOptions {
            embedding_dim: dim,
            ..GatewayOptions::default()
        };
        let chat: Arc<dyn ChatProvider> = Arc::new(ScriptedProvider::constant(""));
        let g = Gateway::new(chat.clone(), Arc::new(Fixed(vec![vec![0.0; 383]])), opts(Some(384)));
        assert_eq!(
            g.embed(&["a".into()]),
            Err(GatewayError::DimensionMismatch { expected: 384, got: 383 })
        );
        let g = Gateway::new(chat.clone(), Arc::new(Fixed(vec![vec![f64::NAN, 1.0]])), opts(None));
        assert_eq!(g.embed(&["a".into()]), Err(GatewayError::NonFinite { index: 0 }));
        let g = Gateway::new(chat, Arc::new(Fixed(vec![vec![1.0, 0.0]])), opts(None));
        let req = EmbeddingRequest {
            texts: vec!["a".into(), "b".into()],
            expected_dim: 3,
        };
        assert!(matches!(
            g.embed_request(&req),
            Err(GatewayError::DimensionMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn embeddings_are_cached() {
        let g = gateway(ScriptedProvider::constant(""), 1);
        let texts: Vec<String> = vec!["a".into(), "a".into(), "b".into()];
        let v = g.embed(&texts).unwrap();
        assert_eq!(v[0], v[1]);
        g.embed(&texts).unwrap();
        let ledger = g.ledger();
        assert_eq!((ledger.embed_calls, ledger.embed_texts), (1, 2));
    }

    #[test]
    fn ask_all_preserves_order() {
        let chat = ScriptedProvider::new(|r| Ok(format!("[\"{}\"]", r.sample)));
        let g = gateway(chat, 1);
        let reqs: Vec<ChatRequest> = (0..16)
            .map(|i| g.request(PromptTag::MapVote, &[], i))
            .collect();
        let out: Vec<String> = g
            .ask_all(&reqs, strings)
            .into_iter()
            .map(|r| r.unwrap().unwrap().remove(0))
            .collect();
        assert_eq!(out, (0..16).map(|i| i.to_string()).collect::<Vec<_>>());
        assert_eq!(g.ledger().calls(PromptTag::MapVote), 16);
    }
}
