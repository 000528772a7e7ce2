//! Chat-completion dispatch: an OpenAI-compatible HTTP endpoint or one of the
//! deterministic mock backends used in tests and offline runs.

use crate::prompting::PromptSpec;
use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Backend {
    Http,
    MockEcho,
    MockThreshold,
    MockFixed(String),
}

impl std::str::FromStr for Backend {
    type Err = GatewayError;

    /// `http`, `mock-echo`, `mock-threshold`, or `mock-fixed:<word>`.
    fn from_str(s: &str) -> Result<Self, GatewayError> {
        match s {
            "http" => Ok(Backend::Http),
            "mock-echo" => Ok(Backend::MockEcho),
            "mock-threshold" => Ok(Backend::MockThreshold),
            other => match other.strip_prefix("mock-fixed:") {
                Some(word) if !word.is_empty() => Ok(Backend::MockFixed(word.to_string())),
                _ => Err(GatewayError::Config(format!("unknown backend {other:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub backend: Backend,
    pub base_url: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env_var: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub max_in_flight: usize,
    pub backoff_base_ms: u64,
    /// Seeds the retry jitter.
    pub seed: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            backend: Backend::MockThreshold,
            base_url: "http://127.0.0.1:8000".into(),
            api_key_env_var: "EKICL_API_KEY".into(),
            model_name: "llama3.1-8b-instruct".into(),
            temperature: 0.0,
            max_tokens: 8,
            timeout_ms: 30_000,
            max_retries: 3,
            max_in_flight: 4,
            backoff_base_ms: 250,
            seed: 0,
        }
    }
}

impl GatewayConfig {
    pub fn mock(backend: Backend) -> Self {
        Self {
            backend,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_in_flight == 0 {
            return Err(GatewayError::Config("max_in_flight must be at least 1".into()));
        }
        if self.timeout_ms == 0 {
            return Err(GatewayError::Config("timeout must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub latency_ms: u64,
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("transport error after {retries} retries: {message}")]
    Transport {
        status: Option<u16>,
        message: String,
        retries: u32,
    },
    #[error("request timed out after {retries} retries")]
    Timeout { retries: u32 },
    #[error("gateway configuration: {0}")]
    Config(String),
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    temperature: f64,
    max_tokens: u32,
    messages: [ChatMessage<'a>; 1],
}

enum Attempt {
    Done(String),
    Retryable(GatewayError),
    Fatal(GatewayError),
}

pub struct Gateway {
    config: GatewayConfig,
    agent: ureq::Agent,
}

const ABSTAIN_TEXT: &str = "unknown";

impl Gateway {
    pub fn new(config: GatewayConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { config, agent })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn endpoint(&self) -> String {
        format!("{}/v1/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    /// JSON body sent for `prompt`; byte-stable for identical inputs.
    pub fn request_body(&self, prompt: &str) -> String {
        let req = ChatRequest {
            model: &self.config.model_name,
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
        };
        serde_json::to_string(&req).expect("request serializes")
    }

    pub fn complete(&self, prompt: &str, spec: &PromptSpec) -> Result<Completion, GatewayError> {
        let pair = &spec.label_pair;
        let mock = |text: &str| Completion {
            text: text.to_string(),
            latency_ms: 0,
            retries: 0,
        };
        match &self.config.backend {
            Backend::MockEcho => Ok(mock(spec.demos.first().map_or(ABSTAIN_TEXT, |d| d.label.as_str()))),
            Backend::MockThreshold => Ok(mock(match spec.conf_hint {
                Some(c) if c >= 0.5 => &pair.ad_word,
                Some(_) => &pair.hc_word,
                None => ABSTAIN_TEXT,
            })),
            Backend::MockFixed(word) => Ok(mock(word)),
            Backend::Http => self.complete_http(prompt),
        }
    }

    fn complete_http(&self, prompt: &str) -> Result<Completion, GatewayError> {
        let body = self.request_body(prompt);
        let url = self.endpoint();
        let token = std::env::var(&self.config.api_key_env_var).ok();
        if token.is_none() {
            debug!("{} not set; sending without authorization", self.config.api_key_env_var);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(self.config.seed, prompt));
        let start = Instant::now();
        let mut retries = 0u32;
        loop {
            match self.attempt(&url, &body, token.as_deref(), retries) {
                Attempt::Done(text) => {
                    return Ok(Completion {
                        text,
                        latency_ms: start.elapsed().as_millis() as u64,
                        retries,
                    })
                }
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retryable(e) if retries >= self.config.max_retries => return Err(e),
                Attempt::Retryable(e) => {
                    let base = self.config.backoff_base_ms.saturating_mul(1 << retries.min(16));
                    let jitter = if base > 0 { rng.random_range(0..=base / 4) } else { 0 };
                    warn!("retrying after {e} (attempt {})", retries + 1);
                    std::thread::sleep(Duration::from_millis(base + jitter));
                    retries += 1;
                }
            }
        }
    }

    fn attempt(&self, url: &str, body: &str, token: Option<&str>, retries: u32) -> Attempt {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(t) = token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = match req.send(body.as_bytes()) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Attempt::Retryable(GatewayError::Timeout { retries }),
            Err(e) => {
                return Attempt::Retryable(GatewayError::Transport {
                    status: None,
                    message: e.to_string(),
                    retries,
                })
            }
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(ureq::Error::Timeout(_)) => return Attempt::Retryable(GatewayError::Timeout { retries }),
            Err(e) => {
                return Attempt::Retryable(GatewayError::Transport {
                    status: Some(status),
                    message: e.to_string(),
                    retries,
                })
            }
        };
        if !(200..300).contains(&status) {
            let err = GatewayError::Transport {
                status: Some(status),
                message: format!("HTTP {status}"),
                retries,
            };
            return if status == 429 || status >= 500 {
                Attempt::Retryable(err)
            } else {
                Attempt::Fatal(err)
            };
        }
        match extract_content(&text) {
            Some(content) => Attempt::Done(content),
            None => Attempt::Fatal(GatewayError::Transport {
                status: Some(status),
                message: "response has no choices[0].message.content".into(),
                retries,
            }),
        }
    }

    /// Complete every request; results keep input order. HTTP requests run
    /// on at most `max_in_flight` worker threads.
    pub fn complete_batch(&self, requests: &[(String, PromptSpec)]) -> Vec<Result<Completion, GatewayError>> {
        if self.config.backend != Backend::Http || requests.len() <= 1 {
            return requests.iter().map(|(p, s)| self.complete(p, s)).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<Completion, GatewayError>>>> =
            Mutex::new((0..requests.len()).map(|_| None).collect());
        let workers = self.config.max_in_flight.min(requests.len());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some((prompt, spec)) = requests.get(i) else { break };
                    let result = self.complete(prompt, spec);
                    slots.lock().expect("result slots")[i] = Some(result);
                });
            }
        });
        slots
            .into_inner()
            .expect("result slots")
            .into_iter()
            .map(|r| r.expect("every request completed"))
            .collect()
    }
}

fn extract_content(body: &str) -> Option<String> {
    let v: serde_json::Value = serde_json::from_str(body).ok()?;
    v.get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?
        .as_str()
        .map(str::to_string)
}
