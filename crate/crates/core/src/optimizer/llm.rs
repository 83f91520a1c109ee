//! Chat-completions client for the LLM proposer.
//!
//! Speaks the common `POST {url}` JSON shape: a `model` and a list of
//! `messages`, answered by `choices[0].message.content`.

use std::path::Path;
use std::thread;
use std::time::Duration;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::proposer::{AgentError, Proposer, ProposerInput};

pub const DEFAULT_ANALYZER_PROMPT: &str = include_str!("../../prompts/analyzer.md");
pub const DEFAULT_CODER_PROMPT: &str = include_str!("../../prompts/coder.md");

pub const ENV_URL: &str = "OPEFORGE_LLM_URL";
pub const ENV_KEY: &str = "OPEFORGE_LLM_KEY";
pub const ENV_TIMEOUT: &str = "OPEFORGE_LLM_TIMEOUT_SECS";
pub const ENV_MODEL: &str = "OPEFORGE_LLM_MODEL";
pub const ENV_BACKOFF: &str = "OPEFORGE_LLM_BACKOFF_MS";

#[derive(Debug, Clone, PartialEq)]
pub struct LlmConfig {
    pub url: String,
    pub key: String,
    pub model: String,
    pub timeout: Duration,
    /// Extra attempts after the first failure.
    pub retries: u32,
    /// Delay before the first retry; doubled for each further retry.
    pub backoff: Duration,
    pub analyzer_prompt: String,
    pub coder_prompt: String,
}

impl LlmConfig {
    pub const DEFAULT_TIMEOUT_SECS: f64 = 600.0;
    pub const DEFAULT_RETRIES: u32 = 2;
    pub const DEFAULT_BACKOFF_MS: u64 = 1000;

    pub fn new(url: impl Into<String>, key: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            key: key.into(),
            model: "default".into(),
            timeout: Duration::from_secs_f64(Self::DEFAULT_TIMEOUT_SECS),
            retries: Self::DEFAULT_RETRIES,
            backoff: Duration::from_millis(Self::DEFAULT_BACKOFF_MS),
            analyzer_prompt: DEFAULT_ANALYZER_PROMPT.into(),
            coder_prompt: DEFAULT_CODER_PROMPT.into(),
        }
    }

    /// Reads the endpoint from `OPEFORGE_LLM_URL` and `OPEFORGE_LLM_KEY`
    /// (both required) plus the optional timeout, model and backoff variables.
    pub fn from_env() -> Result<Self, AgentError> {
        let var = |name: &str| std::env::var(name).ok().filter(|v| !v.trim().is_empty());
        let url = var(ENV_URL).ok_or_else(|| AgentError::Config(format!("{ENV_URL} is not set")))?;
        let key = var(ENV_KEY).ok_or_else(|| AgentError::Config(format!("{ENV_KEY} is not set")))?;
        let mut config = Self::new(url, key);
        if let Some(t) = var(ENV_TIMEOUT) {
            let secs: f64 = t
                .parse()
                .ok()
                .filter(|s: &f64| *s > 0.0 && s.is_finite())
                .ok_or_else(|| AgentError::Config(format!("{ENV_TIMEOUT} must be a positive number, got '{t}'")))?;
            config.timeout = Duration::from_secs_f64(secs);
        }
        if let Some(m) = var(ENV_MODEL) {
            config.model = m;
        }
        if let Some(b) = var(ENV_BACKOFF) {
            let ms: u64 = b
                .parse()
                .map_err(|_| AgentError::Config(format!("{ENV_BACKOFF} must be an integer, got '{b}'")))?;
            config.backoff = Duration::from_millis(ms);
        }
        Ok(config)
    }

    /// Replaces the prompt templates with files, when given.
    pub fn with_prompt_files(mut self, analyzer: Option<&Path>, coder: Option<&Path>) -> Result<Self, AgentError> {
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|e| AgentError::Config(format!("cannot read prompt {}: {e}", p.display())))
        };
        if let Some(p) = analyzer {
            self.analyzer_prompt = read(p)?;
        }
        if let Some(p) = coder {
            self.coder_prompt = read(p)?;
        }
        Ok(self)
    }
}

/// Substitutes `{SPEC}`, `{BASELINE_REPORT}`, `{MODE}` and `{INSTRUCTIONS}`.
pub fn fill_template(template: &str, input: &ProposerInput, instructions: &str) -> String {
    template
        .replace("{SPEC}", &input.spec_text)
        .replace("{BASELINE_REPORT}", &input.baseline_report)
        .replace("{MODE}", input.mode.as_str())
        .replace("{INSTRUCTIONS}", instructions)
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
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
    content: Option<String>,
}

enum Attempt {
    Retry(String),
    Fatal(String),
}

pub struct LlmProposer {
    config: LlmConfig,
    client: reqwest::blocking::Client,
}

impl LlmProposer {
    pub fn new(config: LlmConfig) -> Result<Self, AgentError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| AgentError::Config(format!("http client: {e}")))?;
        Ok(Self { config, client })
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    fn attempt(&self, prompt: &str) -> Result<String, Attempt> {
        let body = ChatRequest {
            model: &self.config.model,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: 0.0,
        };
        let response = self
            .client
            .post(&self.config.url)
            .bearer_auth(&self.config.key)
            .json(&body)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    Attempt::Retry(format!(
                        "Timeout of {:.1}s exceeded",
                        self.config.timeout.as_secs_f64()
                    ))
                } else {
                    Attempt::Retry(format!("connection failed: {e}"))
                }
            })?;
        let status = response.status();
        if !status.is_success() {
            let msg = format!("endpoint returned HTTP {status}");
            return Err(if status.is_server_error() || status.as_u16() == 429 {
                Attempt::Retry(msg)
            } else {
                Attempt::Fatal(msg)
            });
        }
        let parsed: ChatResponse = response.json().map_err(|e| {
            if e.is_timeout() {
                Attempt::Retry(format!(
                    "Timeout of {:.1}s exceeded",
                    self.config.timeout.as_secs_f64()
                ))
            } else {
                Attempt::Fatal(format!("malformed response: {e}"))
            }
        })?;
        Ok(parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default())
    }

    /// Sends one prompt, retrying transport failures with exponential backoff.
    fn chat(&self, role: &'static str, prompt: &str) -> Result<String, AgentError> {
        let attempts = self.config.retries + 1;
        let mut last = String::new();
        for n in 0..attempts {
            if n > 0 {
                let delay = self.config.backoff * 2u32.saturating_pow(n - 1);
                debug!("{role}: retry {n} in {delay:?}");
                thread::sleep(delay);
            }
            match self.attempt(prompt) {
                Ok(content) if content.trim().is_empty() => return Err(AgentError::Empty(role)),
                Ok(content) => return Ok(content),
                Err(Attempt::Fatal(msg)) => return Err(AgentError::Transport(format!("{role}: {msg}"))),
                Err(Attempt::Retry(msg)) => {
                    warn!("{role} request failed (attempt {}/{attempts}): {msg}", n + 1);
                    last = msg;
                }
            }
        }
        Err(AgentError::Transport(format!(
            "{role}: RetryError: {last} after {attempts} attempts"
        )))
    }
}

impl Proposer for LlmProposer {
    fn name(&self) -> String {
        "llm".into()
    }

    fn analyze(&self, input: &ProposerInput) -> Result<String, AgentError> {
        self.chat("analyzer", &fill_template(&self.config.analyzer_prompt, input, ""))
    }

    fn modify(&self, input: &ProposerInput, instructions: &str) -> Result<String, AgentError> {
        self.chat(
            "coder",
            &fill_template(&self.config.coder_prompt, input, instructions),
        )
    }
}
