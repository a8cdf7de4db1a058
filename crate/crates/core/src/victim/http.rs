//! OpenAI-compatible HTTP victim.
//!
//! Sends the rendered query as a single user message on a chat-completions
//! endpoint at temperature 0. In probability mode the per-token
//! log-probabilities of the first generated token are read and renormalized
//! over the verbalizer label words; in label-only mode the completion text is
//! matched against the label words and treated as a one-hot prediction.
//!
//! The endpoint, model and timeout come from config; the API key is read
//! from an environment variable only and never from config files.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ClassDistribution, ProbabilityMode, VictimBackend};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpVictimConfig {
    pub endpoint: String,
    pub model: String,
    /// Instruction wrapped around every query.
    #[serde(default = "default_instruction")]
    pub instruction: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub mode: ProbabilityMode,
    /// Name of the environment variable holding the bearer token.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_retry_base_ms")]
    pub retry_base_ms: u64,
    /// Label word per class, index-aligned with the task's classes.
    pub verbalizer: Vec<String>,
}

fn default_instruction() -> String {
    "Classify the following text. Answer with exactly one word.".to_string()
}

fn default_timeout() -> u64 {
    30
}

fn default_api_key_env() -> String {
    "VICTIM_API_KEY".to_string()
}

fn default_max_retries() -> u32 {
    3
}

fn default_retry_base_ms() -> u64 {
    250
}

pub struct HttpVictim {
    config: HttpVictimConfig,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
    id: String,
}

impl HttpVictim {
    pub fn new(config: HttpVictimConfig) -> Result<Self> {
        if config.verbalizer.len() < 2 {
            return Err(Error::Config("http victim needs at least 2 label words".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Config(format!("failed to build http client: {e}")))?;
        let api_key = std::env::var(&config.api_key_env).ok();
        let mode = match config.mode {
            ProbabilityMode::Probabilities => "probs",
            ProbabilityMode::LabelOnly => "label",
        };
        let id = format!("http:{}@{}:{mode}", config.model, config.endpoint);
        Ok(HttpVictim { config, client, api_key, id })
    }

    fn request_body(&self, query: &str) -> serde_json::Value {
        let content = format!("{}\n\n{}", self.config.instruction, query);
        let mut body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": content}],
            "temperature": 0,
            "max_tokens": 8,
        });
        if self.config.mode == ProbabilityMode::Probabilities {
            body["logprobs"] = json!(true);
            body["top_logprobs"] = json!(20);
        }
        body
    }

    /// One POST with retries on transport failures and 429/5xx statuses.
    /// A retried query still counts once against the budget because the
    /// client reserves budget before calling in here.
    fn send(&self, query: &str) -> Result<serde_json::Value> {
        let body = self.request_body(query);
        let mut last_error = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                let backoff = self.config.retry_base_ms.saturating_mul(1 << (attempt - 1));
                std::thread::sleep(Duration::from_millis(backoff));
            }
            let mut request = self.client.post(&self.config.endpoint).json(&body);
            if let Some(key) = &self.api_key {
                request = request.bearer_auth(key);
            }
            match request.send() {
                Ok(response) => {
                    let status = response.status();
                    if status.is_success() {
                        return response
                            .json::<serde_json::Value>()
                            .map_err(|e| Error::VictimUnavailable(format!("bad json body: {e}")));
                    }
                    let retryable = status.as_u16() == 429 || status.is_server_error();
                    last_error = format!("http status {status}");
                    if !retryable {
                        return Err(Error::VictimUnavailable(last_error));
                    }
                }
                Err(e) => {
                    last_error = format!("transport error: {e}");
                }
            }
        }
        Err(Error::VictimUnavailable(format!(
            "{last_error} (after {} retries)",
            self.config.max_retries
        )))
    }

    fn word_class(&self, candidate: &str) -> Option<usize> {
        let cleaned = candidate.trim().trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
        self.config
            .verbalizer
            .iter()
            .position(|word| word.to_lowercase() == cleaned)
    }

    /// Probability mode: read the first generated token's top logprobs,
    /// keep entries matching a label word, renormalize over those.
    fn distribution_from_logprobs(&self, response: &serde_json::Value) -> Result<ClassDistribution> {
        let entries = response["choices"][0]["logprobs"]["content"][0]["top_logprobs"]
            .as_array()
            .ok_or_else(|| {
                Error::UnparseableResponse("response carries no top_logprobs".to_string())
            })?;
        let mut weights = vec![0.0f64; self.config.verbalizer.len()];
        let mut any = false;
        for entry in entries {
            let token = entry["token"].as_str().unwrap_or("");
            let logprob = entry["logprob"].as_f64().unwrap_or(f64::NEG_INFINITY);
            if let Some(class) = self.word_class(token) {
                if weights[class] == 0.0 {
                    weights[class] = logprob.exp();
                    any = true;
                }
            }
        }
        if !any {
            return Err(Error::UnparseableResponse(
                "no label word among returned logprobs".to_string(),
            ));
        }
        let total: f64 = weights.iter().sum();
        ClassDistribution::new(weights.iter().map(|w| w / total).collect())
    }

    /// Label-only mode: earliest label word occurring in the completion
    /// text, case-insensitive; ties on position break to the lowest class.
    fn distribution_from_text(&self, response: &serde_json::Value) -> Result<ClassDistribution> {
        let content = response["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| Error::UnparseableResponse("response carries no content".to_string()))?;
        let haystack = content.to_lowercase();
        let mut best: Option<(usize, usize)> = None; // (position, class)
        for (class, word) in self.config.verbalizer.iter().enumerate() {
            if let Some(pos) = haystack.find(&word.to_lowercase()) {
                if best.map_or(true, |(bp, _)| pos < bp) {
                    best = Some((pos, class));
                }
            }
        }
        match best {
            Some((_, class)) => ClassDistribution::one_hot(class, self.config.verbalizer.len()),
            None => Err(Error::UnparseableResponse(content.to_string())),
        }
    }
}

impl VictimBackend for HttpVictim {
    fn id(&self) -> &str {
        &self.id
    }

    fn num_classes(&self) -> usize {
        self.config.verbalizer.len()
    }

    fn classify(&self, query: &str) -> Result<ClassDistribution> {
        let response = self.send(query)?;
        match self.config.mode {
            ProbabilityMode::Probabilities => self.distribution_from_logprobs(&response),
            ProbabilityMode::LabelOnly => self.distribution_from_text(&response),
        }
    }
}
