//! HTTP JSON transports (chat-completion style by default; response fields
//! are located with configurable JSON pointers).

use std::time::Duration;

use serde_json::{json, Value};

use super::{Completer, Completion, CompletionRequest, EmbedTransport, GatewayError, RewardEndpoint};
use crate::trace::{render_trace, ResponseTrace};

#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    pub endpoint: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    /// Pointer to the completion text in the response body.
    pub text_pointer: String,
    /// Pointer to an array of `{token, logprob}` objects.
    pub logprobs_pointer: String,
    pub timeout: Duration,
    /// Extra attempts after the first failure.
    pub retries: u32,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            api_key_env: "STEPPROOF_API_KEY".into(),
            text_pointer: "/choices/0/message/content".into(),
            logprobs_pointer: "/choices/0/logprobs/content".into(),
            timeout: Duration::from_secs(120),
            retries: 2,
        }
    }
}

#[derive(Debug, Clone)]
struct Client {
    agent: ureq::Agent,
    endpoint: String,
    token: String,
    retries: u32,
}

impl Client {
    fn from_env(endpoint: &str, api_key_env: &str, timeout: Duration, retries: u32) -> Result<Self, GatewayError> {
        let token = std::env::var(api_key_env)
            .ok()
            .filter(|t| !t.is_empty())
            .ok_or_else(|| GatewayError::AuthMissing {
                var: api_key_env.to_string(),
            })?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Ok(Self {
            agent,
            endpoint: endpoint.to_string(),
            token,
            retries,
        })
    }

    fn post(&self, body: &Value) -> Result<Value, GatewayError> {
        let attempts = self.retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(250 << attempt.min(5)));
            }
            let sent = self
                .agent
                .post(&self.endpoint)
                .header("Authorization", &format!("Bearer {}", self.token))
                .send_json(body);
            match sent {
                Ok(mut resp) => {
                    return resp
                        .body_mut()
                        .read_json::<Value>()
                        .map_err(|e| GatewayError::BadResponse(e.to_string()))
                }
                Err(e) => {
                    log::warn!("POST {} failed (attempt {}): {e}", self.endpoint, attempt + 1);
                    last = e.to_string();
                }
            }
        }
        Err(GatewayError::Transport {
            message: last,
            attempts,
        })
    }
}

fn pointer<'a>(v: &'a Value, ptr: &str) -> Result<&'a Value, GatewayError> {
    v.pointer(ptr)
        .ok_or_else(|| GatewayError::BadResponse(format!("missing field {ptr}")))
}

/// Chat-completion backend.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    client: Client,
    config: HttpConfig,
}

impl HttpBackend {
    /// Fails with `AuthMissing` when the credential variable is unset.
    pub fn from_env(config: HttpConfig) -> Result<Self, GatewayError> {
        let client = Client::from_env(&config.endpoint, &config.api_key_env, config.timeout, config.retries)?;
        Ok(Self { client, config })
    }
}

/// Extracts text and token probabilities from a provider response.
pub(crate) fn parse_completion(v: &Value, config: &HttpConfig, want_probs: bool) -> Result<Completion, GatewayError> {
    let text = pointer(v, &config.text_pointer)?
        .as_str()
        .ok_or_else(|| GatewayError::BadResponse("completion text is not a string".into()))?
        .to_string();
    let token_probs = match (want_probs, v.pointer(&config.logprobs_pointer)) {
        (true, Some(Value::Array(items))) => {
            let mut out = Vec::with_capacity(items.len());
            for it in items {
                let tok = it.get("token").and_then(Value::as_str);
                let lp = it.get("logprob").and_then(Value::as_f64);
                match (tok, lp) {
                    (Some(t), Some(lp)) => out.push((t.to_string(), lp.exp().clamp(0.0, 1.0))),
                    _ => return Err(GatewayError::BadResponse("malformed logprob entry".into())),
                }
            }
            Some(out)
        }
        _ => None,
    };
    Ok(Completion { text, token_probs })
}

impl Completer for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, GatewayError> {
        let body = json!({
            "model": request.model_tag,
            "messages": [{"role": "user", "content": request.rendered_prompt}],
            "temperature": request.sampling.temperature,
            "max_tokens": request.sampling.max_tokens,
            "logprobs": request.want_token_probs,
        });
        let v = self.client.post(&body)?;
        parse_completion(&v, &self.config, request.want_token_probs)
    }
}

/// `{"model", "input": [..]}` → `data[i].embedding`.
#[derive(Debug, Clone)]
pub struct HttpEmbedTransport {
    client: Client,
    model: String,
}

impl HttpEmbedTransport {
    pub fn from_env(endpoint: &str, model: &str, api_key_env: &str, timeout: Duration) -> Result<Self, GatewayError> {
        Ok(Self {
            client: Client::from_env(endpoint, api_key_env, timeout, 2)?,
            model: model.to_string(),
        })
    }
}

pub(crate) fn parse_embeddings(v: &Value, expected: usize) -> Result<Vec<Vec<f64>>, GatewayError> {
    let data = pointer(v, "/data")?
        .as_array()
        .ok_or_else(|| GatewayError::BadResponse("`data` is not an array".into()))?;
    if data.len() != expected {
        return Err(GatewayError::BadResponse(format!(
            "{} embeddings for {expected} inputs",
            data.len()
        )));
    }
    data.iter()
        .map(|d| {
            d.get("embedding")
                .and_then(Value::as_array)
                .and_then(|xs| xs.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
                .ok_or_else(|| GatewayError::BadResponse("malformed embedding".into()))
        })
        .collect()
}

impl EmbedTransport for HttpEmbedTransport {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let v = self.client.post(&json!({"model": self.model, "input": texts}))?;
        parse_embeddings(&v, texts.len())
    }
}

/// Reward endpoint: posts the rendered trace, reads `/score`.
#[derive(Debug, Clone)]
pub struct HttpRewardEndpoint {
    client: Client,
}

impl HttpRewardEndpoint {
    pub fn from_env(endpoint: &str, api_key_env: &str, timeout: Duration) -> Result<Self, GatewayError> {
        Ok(Self {
            client: Client::from_env(endpoint, api_key_env, timeout, 2)?,
        })
    }
}

impl RewardEndpoint for HttpRewardEndpoint {
    fn score(&self, trace: &ResponseTrace) -> Result<f64, GatewayError> {
        let v = self.client.post(&json!({
            "problem_id": trace.problem_id,
            "response_id": trace.response_id,
            "text": render_trace(trace),
        }))?;
        pointer(&v, "/score")?
            .as_f64()
            .ok_or_else(|| GatewayError::BadResponse("`score` is not a number".into()))
    }
}
