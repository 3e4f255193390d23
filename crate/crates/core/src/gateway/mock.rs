//! Offline providers: fixture replay, recording, closures and a hash
//! embedder.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatProvider, ChatRequest, ChatResponse, EmbedProvider, GatewayError, PromptTag};

/// One recorded exchange, keyed by tag and request digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub tag: PromptTag,
    pub digest: String,
    pub response: String,
}

/// Replays recorded responses. A request without a fixture is an error,
/// never a silent default.
#[derive(Debug, Default)]
pub struct FixtureProvider {
    records: BTreeMap<(PromptTag, String), String>,
}

impl FixtureProvider {
    pub fn from_records(records: impl IntoIterator<Item = FixtureRecord>) -> Self {
        FixtureProvider {
            records: records
                .into_iter()
                .map(|r| ((r.tag, r.digest), r.response))
                .collect(),
        }
    }

    pub fn from_jsonl(path: &Path) -> Result<Self, GatewayError> {
        let config = |msg: String| GatewayError::Config(format!("{}: {msg}", path.display()));
        let file = std::fs::File::open(path).map_err(|e| config(e.to_string()))?;
        let mut records = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| config(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: FixtureRecord = serde_json::from_str(&line)
                .map_err(|e| config(format!("line {}: {e}", n + 1)))?;
            records.push(record);
        }
        Ok(Self::from_records(records))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl ChatProvider for FixtureProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let digest = request.digest();
        match self.records.get(&(request.tag, digest.clone())) {
            Some(text) => Ok(ChatResponse::text(text.clone())),
            None => Err(GatewayError::MissingFixture {
                tag: request.tag,
                digest,
            }),
        }
    }

    fn describe(&self) -> String {
        format!("fixture replay ({} records)", self.records.len())
    }
}

/// Passes requests through to `inner` and keeps every successful exchange.
pub struct RecordingProvider<P> {
    inner: P,
    records: Mutex<BTreeMap<(PromptTag, String), String>>,
}

impl<P: ChatProvider> RecordingProvider<P> {
    pub fn new(inner: P) -> Self {
        RecordingProvider {
            inner,
            records: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn records(&self) -> Vec<FixtureRecord> {
        self.records
            .lock()
            .expect("records lock")
            .iter()
            .map(|((tag, digest), response)| FixtureRecord {
                tag: *tag,
                digest: digest.clone(),
                response: response.clone(),
            })
            .collect()
    }

    /// Writes the recorded fixtures, sorted by tag and digest.
    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for record in self.records() {
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }
}

impl<P: ChatProvider> ChatProvider for RecordingProvider<P> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let response = self.inner.complete(request)?;
        self.records
            .lock()
            .expect("records lock")
            .insert((request.tag, request.digest()), response.text.clone());
        Ok(response)
    }

    fn describe(&self) -> String {
        format!("recording {}", self.inner.describe())
    }
}

type Script = dyn Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync;

/// Answers with an arbitrary closure of the request.
pub struct ScriptedProvider {
    script: Box<Script>,
}

impl ScriptedProvider {
    pub fn new(
        script: impl Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync + 'static,
    ) -> Self {
        ScriptedProvider {
            script: Box::new(script),
        }
    }

    pub fn constant(text: impl Into<String>) -> Self {
        let text = text.into();
        Self::new(move |_| Ok(text.clone()))
    }
}

impl ChatProvider for ScriptedProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (self.script)(request).map(ChatResponse::text)
    }

    fn describe(&self) -> String {
        "scripted".to_string()
    }
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "any", "are", "as", "at", "be", "by", "can", "for", "from", "in", "into",
    "is", "it", "its", "of", "on", "or", "than", "that", "the", "their", "they", "this", "to",
    "with", "you", "your",
];

/// Deterministic bag-of-words embedder.
///
/// Text is lowercased and split on non-alphanumeric characters; stopwords
/// are dropped and a plural `s` is stripped from words longer than three
/// characters (but not from `ss` endings). Each token adds `±1` to one
/// coordinate: the first eight bytes of its SHA-256 digest, read
/// little-endian, select the coordinate modulo `dim`, and the low bit of
/// byte eight selects the sign. Text without tokens is hashed whole. The
/// result is scaled to unit length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding width must be positive");
        HashEmbedder { dim }
    }

    pub fn tokens(text: &str) -> Vec<String> {
        let lower = text.to_lowercase();
        let tokens: Vec<String> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty() && !STOPWORDS.contains(t))
            .map(|t| {
                if t.chars().count() > 3 && t.ends_with('s') && !t.ends_with("ss") {
                    t[..t.len() - 1].to_string()
                } else {
                    t.to_string()
                }
            })
            .collect();
        if tokens.is_empty() {
            vec![lower.trim().to_string()]
        } else {
            tokens
        }
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for token in Self::tokens(text) {
            let h = Sha256::digest(token.as_bytes());
            let bucket = u64::from_le_bytes(h[..8].try_into().expect("8 bytes")) % self.dim as u64;
            let sign = if h[8] & 1 == 0 { 1.0 } else { -1.0 };
            v[bucket as usize] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // every token cancelled out
            v[0] = 1.0;
        } else {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl EmbedProvider for HashEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }

    fn dim(&self) -> Option<usize> {
        Some(self.dim)
    }

    fn describe(&self) -> String {
        format!("hash embedder ({} dims)", self.dim)
    }
}
