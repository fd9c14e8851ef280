//! Generation backend contract and the offline implementations.
//!
//! All network I/O in the crate lives behind [`GenerationBackend`]. The
//! scripted backend is a total map over known prompts, the replay backend
//! serves a recorded cache (strict on misses), and the record wrapper
//! captures any backend's responses so a run can later be replayed
//! bit-identically.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Pipeline stage issuing a generation request; part of the replay cache key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageTag {
    Entity,
    Attribute,
    ResponseK,
    ResponsePlain,
    Datagen,
    Judge,
}

impl StageTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            StageTag::Entity => "entity",
            StageTag::Attribute => "attribute",
            StageTag::ResponseK => "response_k",
            StageTag::ResponsePlain => "response_plain",
            StageTag::Datagen => "datagen",
            StageTag::Judge => "judge",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub tag: StageTag,
}

impl GenerationRequest {
    /// Temperature defaults to 0 so the entity/attribute stages, whose
    /// outputs feed exact lookup, are deterministic; response stages may
    /// override via [`with_temperature`](Self::with_temperature).
    pub fn new(tag: StageTag, prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            max_tokens: 512,
            temperature: 0.0,
            tag,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    /// SHA-256 cache key over (tag, prompt, temperature, max_tokens); the
    /// stage tag keeps otherwise-identical prompts from colliding across
    /// stages.
    pub fn cache_key(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.tag.as_str().as_bytes());
        hasher.update([0]);
        hasher.update(self.prompt.as_bytes());
        hasher.update([0]);
        hasher.update(format!("{:?}", self.temperature).as_bytes());
        hasher.update([0]);
        hasher.update(self.max_tokens.to_le_bytes());
        hex::encode(hasher.finalize())
    }
}

/// The model contract: everything downstream sees only this.
pub trait GenerationBackend: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<String>;

    /// Short label recorded in manifests and reports.
    fn kind(&self) -> &'static str;
}

// ---------------------------------------------------------------------------
// Scripted backend
// ---------------------------------------------------------------------------

/// Total map from prompt text to response; unknown prompts are an error.
#[derive(Debug, Default, Clone)]
pub struct ScriptedBackend {
    responses: HashMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScriptEntry {
    prompt: String,
    response: String,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, prompt: impl Into<String>, response: impl Into<String>) -> Self {
        self.responses.insert(prompt.into(), response.into());
        self
    }

    pub fn insert(&mut self, prompt: impl Into<String>, response: impl Into<String>) {
        self.responses.insert(prompt.into(), response.into());
    }

    /// Load a JSONL script of {prompt, response} objects.
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut backend = Self::new();
        for (line0, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptEntry = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: line0 + 1,
                message: e.to_string(),
            })?;
            backend.responses.insert(entry.prompt, entry.response);
        }
        Ok(backend)
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl GenerationBackend for ScriptedBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<String> {
        self.responses
            .get(&request.prompt)
            .cloned()
            .ok_or_else(|| Error::ScriptMiss {
                tag: request.tag.as_str().to_string(),
            })
    }

    fn kind(&self) -> &'static str {
        "scripted"
    }
}

/// Backend driven by a closure; handy for simulation backends in tests and
/// experiments (gold echo, seeded corruption).
pub struct FnBackend<F: Fn(&GenerationRequest) -> Result<String> + Send + Sync> {
    f: F,
}

impl<F: Fn(&GenerationRequest) -> Result<String> + Send + Sync> FnBackend<F> {
    pub fn new(f: F) -> Self {
        Self { f }
    }
}

impl<F: Fn(&GenerationRequest) -> Result<String> + Send + Sync> GenerationBackend for FnBackend<F> {
    fn generate(&self, request: &GenerationRequest) -> Result<String> {
        (self.f)(request)
    }

    fn kind(&self) -> &'static str {
        "scripted"
    }
}

// ---------------------------------------------------------------------------
// Record / replay
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    prompt: String,
    response: String,
    tag: StageTag,
}

/// Serves responses from a recorded cache file. Strict mode errors on any
/// miss; non-strict mode is only useful when chained before a live backend.
#[derive(Debug)]
pub struct ReplayBackend {
    cache: HashMap<String, String>,
}

impl ReplayBackend {
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut cache = HashMap::new();
        for (line0, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: CacheEntry = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: line0 + 1,
                message: e.to_string(),
            })?;
            cache.insert(entry.key, entry.response);
        }
        Ok(Self { cache })
    }

    pub fn len(&self) -> usize {
        self.cache.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cache.is_empty()
    }
}

impl GenerationBackend for ReplayBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<String> {
        let key = request.cache_key();
        self.cache
            .get(&key)
            .cloned()
            .ok_or_else(|| Error::CacheMiss {
                key,
                tag: request.tag.as_str().to_string(),
            })
    }

    fn kind(&self) -> &'static str {
        "replay"
    }
}

/// Wraps any backend and appends every (key, prompt, response, tag) to a
/// JSONL cache file. Writes are serialized; a key is recorded at most once.
pub struct RecordBackend<B: GenerationBackend> {
    inner: B,
    path: PathBuf,
    state: Mutex<RecordState>,
}

struct RecordState {
    file: std::fs::File,
    seen: std::collections::HashSet<String>,
}

impl<B: GenerationBackend> RecordBackend<B> {
    pub fn create(inner: B, path: &Path) -> Result<Self> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        Ok(Self {
            inner,
            path: path.to_path_buf(),
            state: Mutex::new(RecordState {
                file,
                seen: Default::default(),
            }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl<B: GenerationBackend> GenerationBackend for RecordBackend<B> {
    fn generate(&self, request: &GenerationRequest) -> Result<String> {
        let response = self.inner.generate(request)?;
        let key = request.cache_key();
        let mut state = self.state.lock().expect("record cache lock poisoned");
        if state.seen.insert(key.clone()) {
            let entry = CacheEntry {
                key,
                prompt: request.prompt.clone(),
                response: response.clone(),
                tag: request.tag,
            };
            let line = serde_json::to_string(&entry)?;
            state.file.write_all(line.as_bytes())?;
            state.file.write_all(b"\n")?;
        }
        Ok(response)
    }

    fn kind(&self) -> &'static str {
        "record"
    }
}

// ---------------------------------------------------------------------------
// Descriptor
// ---------------------------------------------------------------------------

/// Serializable description of a backend, used by configs and manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendDescriptor {
    Http {
        endpoint: String,
        model: String,
        /// Name of the environment variable holding the API key.
        credential_env: String,
        #[serde(default)]
        max_concurrency: Option<usize>,
        #[serde(default)]
        requests_per_minute: Option<u32>,
    },
    Scripted {
        script: PathBuf,
    },
    Replay {
        cache: PathBuf,
    },
}

impl BackendDescriptor {
    pub fn kind_str(&self) -> &'static str {
        match self {
            BackendDescriptor::Http { .. } => "http",
            BackendDescriptor::Scripted { .. } => "scripted",
            BackendDescriptor::Replay { .. } => "replay",
        }
    }

    /// Instantiate the described backend, optionally wrapping it in a
    /// recorder when `record_to` is given.
    pub fn build(&self, record_to: Option<&Path>) -> Result<Box<dyn GenerationBackend>> {
        let backend: Box<dyn GenerationBackend> = match self {
            BackendDescriptor::Http {
                endpoint,
                model,
                credential_env,
                max_concurrency,
                requests_per_minute,
            } => Box::new(super::http::HttpBackend::new(
                endpoint,
                model,
                credential_env,
                max_concurrency.unwrap_or(4),
                *requests_per_minute,
            )?),
            BackendDescriptor::Scripted { script } => Box::new(ScriptedBackend::load(script)?),
            BackendDescriptor::Replay { cache } => Box::new(ReplayBackend::load(cache)?),
        };
        match record_to {
            Some(path) => Ok(Box::new(RecordBackend::create(BoxedBackend(backend), path)?)),
            None => Ok(backend),
        }
    }
}

/// Adapter so a boxed backend can be wrapped by [`RecordBackend`].
pub struct BoxedBackend(pub Box<dyn GenerationBackend>);

impl GenerationBackend for BoxedBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<String> {
        self.0.generate(request)
    }

    fn kind(&self) -> &'static str {
        self.0.kind()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(prompt: &str) -> GenerationRequest {
        GenerationRequest::new(StageTag::Entity, prompt)
    }

    #[test]
    fn scripted_returns_mapped_response() {
        let backend = ScriptedBackend::new().with("p", "gastric cancer");
        assert_eq!(backend.generate(&req("p")).unwrap(), "gastric cancer");
    }

    #[test]
    fn scripted_miss_is_an_error() {
        let backend = ScriptedBackend::new();
        assert!(matches!(
            backend.generate(&req("unknown")),
            Err(Error::ScriptMiss { .. })
        ));
    }

    #[test]
    fn cache_key_depends_on_stage_tag() {
        let a = GenerationRequest::new(StageTag::Entity, "same prompt");
        let b = GenerationRequest::new(StageTag::Attribute, "same prompt");
        assert_ne!(a.cache_key(), b.cache_key());
    }

    #[test]
    fn cache_key_depends_on_sampling_params() {
        let a = req("p");
        let b = req("p").with_temperature(0.7);
        let c = req("p").with_max_tokens(16);
        assert_ne!(a.cache_key(), b.cache_key());
        assert_ne!(a.cache_key(), c.cache_key());
    }

    #[test]
    fn record_then_replay_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cache = dir.path().join("cache.jsonl");
        let scripted = ScriptedBackend::new()
            .with("p1", "resp one")
            .with("p2", "resp \u{4e8c}");
        let recorder = RecordBackend::create(scripted, &cache).unwrap();
        let r1 = recorder.generate(&req("p1")).unwrap();
        let r2 = recorder.generate(&req("p2")).unwrap();
        // repeat call: recorded once
        recorder.generate(&req("p1")).unwrap();
        drop(recorder);

        let replay = ReplayBackend::load(&cache).unwrap();
        assert_eq!(replay.len(), 2);
        assert_eq!(replay.generate(&req("p1")).unwrap(), r1);
        assert_eq!(replay.generate(&req("p2")).unwrap(), r2);
    }

    #[test]
    fn strict_replay_misses_on_unseen_prompt() {
        let dir = tempfile::tempdir().unwrap();
        let cache = dir.path().join("cache.jsonl");
        std::fs::write(&cache, "").unwrap();
        let replay = ReplayBackend::load(&cache).unwrap();
        assert!(matches!(
            replay.generate(&req("never seen")),
            Err(Error::CacheMiss { .. })
        ));
    }

    #[test]
    fn script_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("script.jsonl");
        std::fs::write(
            &path,
            "{\"prompt\":\"a\",\"response\":\"1\"}\n{\"prompt\":\"b\",\"response\":\"2\"}\n",
        )
        .unwrap();
        let backend = ScriptedBackend::load(&path).unwrap();
        assert_eq!(backend.len(), 2);
        assert_eq!(backend.generate(&req("b")).unwrap(), "2");
    }

    #[test]
    fn descriptor_serde_round_trip() {
        let d = BackendDescriptor::Http {
            endpoint: "http://localhost:9999/v1/chat/completions".into(),
            model: "test".into(),
            credential_env: "API_KEY".into(),
            max_concurrency: Some(2),
            requests_per_minute: None,
        };
        let s = serde_json::to_string(&d).unwrap();
        let back: BackendDescriptor = serde_json::from_str(&s).unwrap();
        assert_eq!(back.kind_str(), "http");
    }
}
