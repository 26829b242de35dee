//! Completion backends behind a common trait, registered by name and
//! selected at runtime: `http` talks to a chat-completion endpoint with
//! retries, `replay` serves recorded fixtures keyed by prompt fingerprint,
//! `stub` returns scripted text for tests.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{GatewayError, PromptDoc};

/// Environment variable holding the API credential by default. Credentials
/// never appear in config files or flags.
pub const DEFAULT_API_KEY_ENV: &str = "TSP_API_KEY";

/// Parameters for constructing a backend. `mode` names the strategy in the
/// registry; the remaining fields parameterize whichever strategy is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub mode: String,
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    pub max_retries: u32,
    /// Required in replay mode; in http mode, responses are recorded here
    /// when set.
    pub fixture_dir: Option<PathBuf>,
    /// Script file for the stub backend: responses separated by `---` lines.
    pub stub_script: Option<PathBuf>,
    pub api_key_env: String,
    /// Minimum spacing between request starts, for rate-limited endpoints.
    pub min_request_interval_ms: u64,
    /// Bound on concurrently in-flight completions.
    pub in_flight: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            mode: "replay".to_string(),
            endpoint: "http://127.0.0.1:8080/v1/chat/completions".to_string(),
            model: "local-model".to_string(),
            temperature: 0.0,
            max_tokens: 1024,
            timeout_secs: 60,
            max_retries: 3,
            fixture_dir: None,
            stub_script: None,
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            min_request_interval_ms: 0,
            in_flight: 4,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.temperature < 0.0 {
            return Err(GatewayError::InvalidConfig(
                "temperature must be >= 0".to_string(),
            ));
        }
        if self.mode == "replay" && self.fixture_dir.is_none() {
            return Err(GatewayError::InvalidConfig(
                "replay mode requires a fixture directory".to_string(),
            ));
        }
        Ok(())
    }
}

/// One completion strategy. Implementations must be usable from several
/// worker threads at once.
pub trait CompletionBackend: Send + Sync {
    fn name(&self) -> &'static str;
    fn complete(&self, prompt: &PromptDoc) -> Result<String, GatewayError>;
}

type BackendFactory =
    Box<dyn Fn(&BackendConfig) -> Result<Box<dyn CompletionBackend>, GatewayError> + Send + Sync>;

/// Name-keyed registry of backend strategies. The built-in set covers
/// `http`, `replay`, and `stub`; callers may register their own.
pub struct BackendRegistry {
    factories: BTreeMap<String, BackendFactory>,
}

impl BackendRegistry {
    pub fn empty() -> Self {
        BackendRegistry {
            factories: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut registry = Self::empty();
        registry.register("http", |cfg| Ok(Box::new(HttpBackend::new(cfg)?)));
        registry.register("replay", |cfg| Ok(Box::new(ReplayBackend::new(cfg)?)));
        registry.register("stub", |cfg| Ok(Box::new(StubBackend::from_config(cfg)?)));
        registry
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&BackendConfig) -> Result<Box<dyn CompletionBackend>, GatewayError>
            + Send
            + Sync
            + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    /// Build the backend named by `config.mode`.
    pub fn create(&self, config: &BackendConfig) -> Result<Box<dyn CompletionBackend>, GatewayError> {
        config.validate()?;
        let factory =
            self.factories
                .get(&config.mode)
                .ok_or_else(|| GatewayError::UnknownBackend {
                    name: config.mode.clone(),
                    known: self.names().join(", "),
                })?;
        factory(config)
    }
}

/// Build a backend from config using the built-in registry.
pub fn create_backend(config: &BackendConfig) -> Result<Box<dyn CompletionBackend>, GatewayError> {
    BackendRegistry::builtin().create(config)
}

// ---------------------------------------------------------------------------
// http
// ---------------------------------------------------------------------------

/// Chat-completion HTTP client with exponential backoff on transient
/// failures and optional fixture recording.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    temperature: f64,
    max_tokens: u32,
    max_retries: u32,
    api_key: Option<String>,
    min_interval: Duration,
    last_start: Mutex<Option<Instant>>,
    record_dir: Option<PathBuf>,
}

impl HttpBackend {
    pub fn new(config: &BackendConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Backend {
                backend: "http".to_string(),
                detail: format!("client build failed: {e}"),
            })?;
        let api_key = std::env::var(&config.api_key_env).ok();
        if api_key.is_none() {
            log::debug!(
                "no credential in ${}; sending unauthenticated requests",
                config.api_key_env
            );
        }
        Ok(HttpBackend {
            client,
            endpoint: config.endpoint.clone(),
            model: config.model.clone(),
            temperature: config.temperature,
            max_tokens: config.max_tokens,
            max_retries: config.max_retries,
            api_key,
            min_interval: Duration::from_millis(config.min_request_interval_ms),
            last_start: Mutex::new(None),
            record_dir: config.fixture_dir.clone(),
        })
    }

    fn pace(&self) {
        if self.min_interval.is_zero() {
            return;
        }
        let mut last = self.last_start.lock().expect("pace lock");
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < self.min_interval {
                std::thread::sleep(self.min_interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }

    fn try_once(&self, prompt: &PromptDoc) -> Result<String, HttpAttemptError> {
        self.pace();
        let body = serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt.rendered}],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        });
        log::debug!(
            "POST {} model={} prompt_fingerprint={}",
            self.endpoint,
            self.model,
            prompt.fingerprint
        );
        let mut request = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| HttpAttemptError {
            detail: format!("transport: {e}"),
            transient: true,
        })?;
        let status = response.status();
        if !status.is_success() {
            let transient =
                status.as_u16() == 429 || status.as_u16() == 408 || status.is_server_error();
            return Err(HttpAttemptError {
                detail: format!("status {status}"),
                transient,
            });
        }
        let value: serde_json::Value = response.json().map_err(|e| HttpAttemptError {
            detail: format!("body decode: {e}"),
            transient: false,
        })?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| HttpAttemptError {
                detail: "response has no choices[0].message.content".to_string(),
                transient: false,
            })
    }

    fn record(&self, prompt: &PromptDoc, text: &str) {
        let Some(dir) = &self.record_dir else { return };
        if let Err(e) = std::fs::create_dir_all(dir) {
            log::warn!("cannot create fixture dir {}: {e}", dir.display());
            return;
        }
        let path = fixture_path(dir, &prompt.fingerprint);
        let ts = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let payload = format!("model={} recorded={ts}\n{text}", self.model);
        if let Err(e) = std::fs::write(&path, payload) {
            log::warn!("cannot record fixture {}: {e}", path.display());
        }
    }
}

struct HttpAttemptError {
    detail: String,
    transient: bool,
}

impl CompletionBackend for HttpBackend {
    fn name(&self) -> &'static str {
        "http"
    }

    fn complete(&self, prompt: &PromptDoc) -> Result<String, GatewayError> {
        let mut attempt = 0u32;
        loop {
            match self.try_once(prompt) {
                Ok(text) => {
                    self.record(prompt, &text);
                    return Ok(text);
                }
                Err(e) if e.transient && attempt < self.max_retries => {
                    let delay = Duration::from_millis(250u64 << attempt.min(6));
                    log::warn!(
                        "attempt {} failed ({}), retrying in {:?}",
                        attempt + 1,
                        e.detail,
                        delay
                    );
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                Err(e) => {
                    return Err(GatewayError::Backend {
                        backend: "http".to_string(),
                        detail: format!("{} (after {} attempts)", e.detail, attempt + 1),
                    })
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// replay
// ---------------------------------------------------------------------------

fn fixture_path(dir: &Path, fingerprint: &str) -> PathBuf {
    dir.join(format!("{fingerprint}.txt"))
}

/// Serves recorded responses from a fixture directory: one file per prompt
/// fingerprint, first line metadata, remainder the raw response text.
/// Structurally incapable of network activity.
pub struct ReplayBackend {
    dir: PathBuf,
}

impl ReplayBackend {
    pub fn new(config: &BackendConfig) -> Result<Self, GatewayError> {
        let dir = config.fixture_dir.clone().ok_or_else(|| {
            GatewayError::InvalidConfig("replay mode requires a fixture directory".to_string())
        })?;
        Ok(ReplayBackend { dir })
    }

    pub fn at(dir: impl Into<PathBuf>) -> Self {
        ReplayBackend { dir: dir.into() }
    }

    /// Write a fixture in the on-disk format the backend reads back.
    pub fn store_fixture(
        dir: &Path,
        fingerprint: &str,
        metadata: &str,
        response: &str,
    ) -> Result<(), GatewayError> {
        std::fs::create_dir_all(dir).map_err(|source| GatewayError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let path = fixture_path(dir, fingerprint);
        std::fs::write(&path, format!("{metadata}\n{response}")).map_err(|source| {
            GatewayError::Io {
                path: path.display().to_string(),
                source,
            }
        })
    }
}

impl CompletionBackend for ReplayBackend {
    fn name(&self) -> &'static str {
        "replay"
    }

    fn complete(&self, prompt: &PromptDoc) -> Result<String, GatewayError> {
        let path = fixture_path(&self.dir, &prompt.fingerprint);
        let raw = std::fs::read_to_string(&path).map_err(|_| GatewayError::FixtureMissing {
            fingerprint: prompt.fingerprint.clone(),
            path: self.dir.display().to_string(),
        })?;
        match raw.split_once('\n') {
            Some((_metadata, response)) => Ok(response.to_string()),
            None => Err(GatewayError::MalformedFixture {
                path: path.display().to_string(),
                detail: "missing metadata line".to_string(),
            }),
        }
    }
}

// ---------------------------------------------------------------------------
// stub
// ---------------------------------------------------------------------------

enum StubState {
    /// Responses consumed in request order; errors when exhausted.
    Sequence(VecDeque<String>),
    /// The same response for every request.
    Constant(String),
    /// Responses keyed by prompt fingerprint; unkeyed prompts error.
    ByFingerprint(HashMap<String, String>),
}

/// Scripted backend for tests and dry runs.
pub struct StubBackend {
    state: Mutex<StubState>,
}

impl StubBackend {
    pub fn sequence(responses: Vec<String>) -> Self {
        StubBackend {
            state: Mutex::new(StubState::Sequence(responses.into())),
        }
    }

    pub fn constant(response: impl Into<String>) -> Self {
        StubBackend {
            state: Mutex::new(StubState::Constant(response.into())),
        }
    }

    pub fn by_fingerprint(map: HashMap<String, String>) -> Self {
        StubBackend {
            state: Mutex::new(StubState::ByFingerprint(map)),
        }
    }

    /// Load a script file: responses separated by lines containing only `---`.
    pub fn from_script(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path).map_err(|source| GatewayError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut responses = Vec::new();
        let mut current = String::new();
        for line in text.lines() {
            if line.trim() == "---" {
                responses.push(std::mem::take(&mut current));
            } else {
                current.push_str(line);
                current.push('\n');
            }
        }
        if !current.trim().is_empty() {
            responses.push(current);
        }
        Ok(Self::sequence(responses))
    }

    fn from_config(config: &BackendConfig) -> Result<Self, GatewayError> {
        match &config.stub_script {
            Some(path) => Self::from_script(path),
            None => Ok(Self::constant(String::new())),
        }
    }
}

impl CompletionBackend for StubBackend {
    fn name(&self) -> &'static str {
        "stub"
    }

    fn complete(&self, prompt: &PromptDoc) -> Result<String, GatewayError> {
        let mut state = self.state.lock().expect("stub lock");
        match &mut *state {
            StubState::Sequence(q) => q.pop_front().ok_or(GatewayError::StubExhausted),
            StubState::Constant(text) => Ok(text.clone()),
            StubState::ByFingerprint(map) => map
                .get(&prompt.fingerprint)
                .cloned()
                .ok_or_else(|| GatewayError::FixtureMissing {
                    fingerprint: prompt.fingerprint.clone(),
                    path: "<stub map>".to_string(),
                }),
        }
    }
}
