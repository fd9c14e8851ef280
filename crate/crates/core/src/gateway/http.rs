//! OpenAI-compatible chat-completions backend.
//!
//! Speaks `POST {endpoint}` with `{model, messages, temperature, max_tokens}`
//! and a bearer token read from a named environment variable. Prompts are
//! sent as a single user message. Transient failures are retried with
//! bounded exponential backoff; concurrency and request rate are budgeted.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::backend::{GenerationBackend, GenerationRequest};

const MAX_RETRIES: u32 = 3;
const BASE_BACKOFF: Duration = Duration::from_millis(250);

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: String,
}

pub struct HttpBackend {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    limiter: Limiter,
}

/// Combined concurrency gate and requests-per-minute budget.
struct Limiter {
    max_concurrency: usize,
    rpm: Option<u32>,
    state: Mutex<LimiterState>,
    cv: Condvar,
}

struct LimiterState {
    in_flight: usize,
    window_start: Instant,
    window_count: u32,
}

impl Limiter {
    fn new(max_concurrency: usize, rpm: Option<u32>) -> Self {
        Self {
            max_concurrency: max_concurrency.max(1),
            rpm,
            state: Mutex::new(LimiterState {
                in_flight: 0,
                window_start: Instant::now(),
                window_count: 0,
            }),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) {
        let mut state = self.state.lock().expect("limiter lock poisoned");
        loop {
            if let Some(rpm) = self.rpm {
                if state.window_start.elapsed() >= Duration::from_secs(60) {
                    state.window_start = Instant::now();
                    state.window_count = 0;
                }
                if state.window_count >= rpm {
                    let wait = Duration::from_secs(60).saturating_sub(state.window_start.elapsed());
                    let (s, _) = self
                        .cv
                        .wait_timeout(state, wait.min(Duration::from_millis(200)))
                        .expect("limiter lock poisoned");
                    state = s;
                    continue;
                }
            }
            if state.in_flight < self.max_concurrency {
                state.in_flight += 1;
                state.window_count += 1;
                return;
            }
            state = self.cv.wait(state).expect("limiter lock poisoned");
        }
    }

    fn release(&self) {
        let mut state = self.state.lock().expect("limiter lock poisoned");
        state.in_flight -= 1;
        drop(state);
        self.cv.notify_one();
    }
}

impl HttpBackend {
    pub fn new(
        endpoint: &str,
        model: &str,
        credential_env: &str,
        max_concurrency: usize,
        requests_per_minute: Option<u32>,
    ) -> Result<Self> {
        let api_key = std::env::var(credential_env).ok();
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| Error::Backend {
                stage: "transport".into(),
                message: e.to_string(),
            })?;
        Ok(Self {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            api_key,
            client,
            limiter: Limiter::new(max_concurrency, requests_per_minute),
        })
    }

    fn send_once(&self, request: &GenerationRequest) -> std::result::Result<String, (bool, String)> {
        let body = ChatRequest {
            model: &self.model,
            messages: vec![ChatMessage {
                role: "user",
                content: &request.prompt,
            }],
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| (true, e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err((true, format!("status {status}")));
        }
        if !status.is_success() {
            return Err((false, format!("status {status}")));
        }
        let parsed: ChatResponse = resp.json().map_err(|e| (false, e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or((false, "response contained no choices".to_string()))
    }
}

impl GenerationBackend for HttpBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<String> {
        self.limiter.acquire();
        let result = (|| {
            let mut last_err = String::new();
            for attempt in 0..=MAX_RETRIES {
                match self.send_once(request) {
                    Ok(text) => return Ok(text),
                    Err((transient, msg)) => {
                        last_err = msg;
                        if !transient || attempt == MAX_RETRIES {
                            break;
                        }
                        std::thread::sleep(BASE_BACKOFF * 2u32.pow(attempt));
                    }
                }
            }
            Err(Error::Backend {
                stage: request.tag.as_str().to_string(),
                message: last_err,
            })
        })();
        self.limiter.release();
        result
    }

    fn kind(&self) -> &'static str {
        "http"
    }
}
