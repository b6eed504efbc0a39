//! LLM backends: an HTTP chat-completions client, a fixture replayer for
//! offline runs, and a content-addressed reply cache.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::graph::RelationType;
use crate::semantics::NodeKind;
use crate::{Error, Result};

/// What a prompt is asking. HTTP backends only see the prompt text; the
/// fixture backend answers from the structured task.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Task {
    Relation {
        a: String,
        b: String,
        relation: RelationType,
    },
    Summary {
        kind: NodeKind,
        text: String,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LlmRequest {
    pub prompt: String,
    /// Index of this query among repeated independent samples of one prompt.
    pub sample: u32,
    pub task: Task,
}

impl LlmRequest {
    /// Cache key: sha256 over the prompt and the sample index.
    pub fn cache_key(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.prompt.as_bytes());
        h.update([0u8]);
        h.update(self.sample.to_le_bytes());
        hex::encode(h.finalize())
    }
}

pub trait LlmClient: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<String>;

    fn name(&self) -> String;
}

pub const API_KEY_ENV: &str = "TRANSKT_LLM_API_KEY";

/// OpenAI-compatible chat-completions endpoint.
#[derive(Clone, Debug)]
pub struct HttpLlmClient {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_retries: u32,
    pub timeout: Duration,
    api_key: String,
}

impl HttpLlmClient {
    /// Reads the bearer token from [`API_KEY_ENV`].
    pub fn from_env(endpoint: impl Into<String>, model: impl Into<String>) -> Result<Self> {
        let api_key = std::env::var(API_KEY_ENV)
            .map_err(|_| Error::Config(format!("{API_KEY_ENV} is not set")))?;
        Ok(Self {
            endpoint: endpoint.into(),
            model: model.into(),
            temperature: 0.7,
            max_retries: 3,
            timeout: Duration::from_secs(60),
            api_key,
        })
    }

    fn attempt(&self, agent: &ureq::Agent, prompt: &str) -> Result<String> {
        let body = serde_json::json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut resp = agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| Error::Backend(format!("{}: {e}", self.endpoint)))?;
        let value: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| Error::Backend(format!("{}: bad response body: {e}", self.endpoint)))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Error::Backend(format!("{}: response has no message content", self.endpoint)))
    }
}

impl LlmClient for HttpLlmClient {
    fn complete(&self, request: &LlmRequest) -> Result<String> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut last = None;
        for attempt in 0..=self.max_retries {
            match self.attempt(&agent, &request.prompt) {
                Ok(reply) => return Ok(reply),
                Err(e) => {
                    log::warn!("llm request failed (attempt {}): {e}", attempt + 1);
                    last = Some(e);
                    if attempt < self.max_retries {
                        std::thread::sleep(Duration::from_millis(500 << attempt.min(6)));
                    }
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }

    fn name(&self) -> String {
        format!("llm_http:{}", self.model)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureRelation {
    pub a: String,
    pub b: String,
    pub relation: RelationType,
    /// Replies for successive samples, cycled if shorter than the vote count.
    pub replies: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureFile {
    #[serde(default)]
    pub relations: Vec<FixtureRelation>,
    #[serde(default = "default_reply")]
    pub default_reply: String,
    #[serde(default)]
    pub summaries: BTreeMap<String, String>,
    #[serde(default)]
    pub default_summary: Option<String>,
}

fn default_reply() -> String {
    "no".into()
}

/// Offline backend replaying canned answers.
#[derive(Debug)]
pub struct FixtureLlm {
    relations: HashMap<(String, String, RelationType), Vec<String>>,
    file: FixtureFile,
    calls: AtomicUsize,
}

impl FixtureLlm {
    pub fn new(file: FixtureFile) -> Self {
        let relations = file
            .relations
            .iter()
            .map(|r| ((r.a.clone(), r.b.clone(), r.relation), r.replies.clone()))
            .collect();
        Self {
            relations,
            file,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let file: FixtureFile = serde_json::from_str(text)
            .map_err(|e| Error::parse(source, e.line(), e.to_string()))?;
        if file.relations.iter().any(|r| r.replies.is_empty()) {
            return Err(Error::parse(source, 1, "fixture relation with no replies"));
        }
        Ok(Self::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::error::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl LlmClient for FixtureLlm {
    fn complete(&self, request: &LlmRequest) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match &request.task {
            Task::Relation { a, b, relation } => {
                let key = (a.clone(), b.clone(), *relation);
                Ok(match self.relations.get(&key) {
                    Some(replies) => replies[request.sample as usize % replies.len()].clone(),
                    None => self.file.default_reply.clone(),
                })
            }
            Task::Summary { text, .. } => self
                .file
                .summaries
                .get(text)
                .or(self.file.default_summary.as_ref())
                .cloned()
                .ok_or_else(|| Error::Backend(format!("fixture has no summary for `{text}`"))),
        }
    }

    fn name(&self) -> String {
        "fixture".into()
    }
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    prompt: String,
    sample: u32,
    backend: String,
    reply: String,
}

/// Reply cache keyed by [`LlmRequest::cache_key`]. With a directory, each
/// entry is a JSON file `<key>.json` holding the prompt and reply.
pub struct CachedLlm<'a> {
    inner: &'a dyn LlmClient,
    dir: Option<PathBuf>,
    memory: Mutex<HashMap<String, String>>,
    consulted: Mutex<BTreeMap<String, String>>,
    write_lock: Mutex<()>,
    inner_calls: AtomicUsize,
}

impl<'a> CachedLlm<'a> {
    pub fn new(inner: &'a dyn LlmClient, dir: Option<PathBuf>) -> Self {
        Self {
            inner,
            dir,
            memory: Mutex::new(HashMap::new()),
            consulted: Mutex::new(BTreeMap::new()),
            write_lock: Mutex::new(()),
            inner_calls: AtomicUsize::new(0),
        }
    }

    /// Number of requests forwarded to the wrapped backend.
    pub fn inner_calls(&self) -> usize {
        self.inner_calls.load(Ordering::SeqCst)
    }

    /// Digest over every (key, reply) pair served so far, in key order.
    pub fn digest(&self) -> String {
        let consulted = self.consulted.lock().expect("cache lock");
        let mut h = Sha256::new();
        for (k, v) in consulted.iter() {
            h.update(k.as_bytes());
            h.update([0u8]);
            h.update(v.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }

    fn read_disk(&self, key: &str) -> Result<Option<String>> {
        let Some(dir) = &self.dir else {
            return Ok(None);
        };
        let path = dir.join(format!("{key}.json"));
        if !path.exists() {
            return Ok(None);
        }
        let text = crate::error::read_to_string(&path)?;
        let entry: CacheEntry = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.line(), e.to_string()))?;
        Ok(Some(entry.reply))
    }

    fn write_disk(&self, key: &str, request: &LlmRequest, reply: &str) -> Result<()> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        let entry = CacheEntry {
            prompt: request.prompt.clone(),
            sample: request.sample,
            backend: self.inner.name(),
            reply: reply.to_string(),
        };
        let text = serde_json::to_string_pretty(&entry).expect("cache entry serializes");
        let _guard = self.write_lock.lock().expect("cache lock");
        let tmp = dir.join(format!("{key}.json.tmp"));
        crate::error::write_file(&tmp, text.as_bytes())?;
        let path = dir.join(format!("{key}.json"));
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}

impl LlmClient for CachedLlm<'_> {
    fn complete(&self, request: &LlmRequest) -> Result<String> {
        let key = request.cache_key();
        let cached = self.memory.lock().expect("cache lock").get(&key).cloned();
        let reply = match cached {
            Some(r) => r,
            None => {
                let r = match self.read_disk(&key)? {
                    Some(r) => r,
                    None => {
                        self.inner_calls.fetch_add(1, Ordering::SeqCst);
                        let r = self.inner.complete(request)?;
                        self.write_disk(&key, request, &r)?;
                        r
                    }
                };
                self.memory
                    .lock()
                    .expect("cache lock")
                    .insert(key.clone(), r.clone());
                r
            }
        };
        self.consulted
            .lock()
            .expect("cache lock")
            .insert(key, reply.clone());
        Ok(reply)
    }

    fn name(&self) -> String {
        self.inner.name()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Vote {
    Yes,
    No,
    Unparseable,
}

/// Affirmative first tokens. Everything else is a negative vote.
pub const AFFIRMATIVE: [&str; 3] = ["yes", "true", "y"];
pub const NEGATIVE: [&str; 3] = ["no", "false", "n"];

/// Reads the first word of a reply, case-insensitively, ignoring
/// surrounding punctuation.
pub fn parse_vote(reply: &str) -> Vote {
    let token: String = reply
        .split_whitespace()
        .next()
        .unwrap_or("")
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    if AFFIRMATIVE.contains(&token.as_str()) {
        Vote::Yes
    } else if NEGATIVE.contains(&token.as_str()) {
        Vote::No
    } else {
        Vote::Unparseable
    }
}

/// True iff strictly more than half of the votes are affirmative.
pub fn majority(votes: &[Vote]) -> bool {
    let yes = votes.iter().filter(|v| **v == Vote::Yes).count();
    2 * yes > votes.len()
}
