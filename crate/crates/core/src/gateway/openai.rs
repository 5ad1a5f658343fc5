//! OpenAI-compatible chat-completions backend.
//!
//! The instruction goes out as a single user message with two content parts:
//! the text, then the image as a base64 data URL.

use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::header::{CONTENT_TYPE, RETRY_AFTER};
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::{Backend, BackendConfig, BackendResponse, GatewayError, TokenUsage};
use crate::prompting::ClassificationRequest;

pub fn chat_request_body(request: &ClassificationRequest, config: &BackendConfig) -> Value {
    json!({
        "model": config.model_name,
        "messages": [{
            "role": "user",
            "content": [
                { "type": "text", "text": request.instruction_text },
                { "type": "image_url", "image_url": { "url": request.image.data_url() } }
            ]
        }],
        "temperature": config.effective_temperature(),
        "max_tokens": config.max_output_tokens,
    })
}

/// Pulls the first choice's content, usage, and refusal state from a
/// chat-completions response body.
pub fn extract_chat_reply(body: &Value) -> Result<BackendResponse, GatewayError> {
    let choice = body
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| GatewayError::InvalidResponse("response has no choices".into()))?;
    let message = choice.get("message");
    let content = message.and_then(|m| m.get("content")).and_then(Value::as_str);
    let refusal = message.and_then(|m| m.get("refusal")).and_then(Value::as_str);
    let filtered = choice.get("finish_reason").and_then(Value::as_str) == Some("content_filter");

    let usage = body.get("usage").and_then(|u| {
        Some(TokenUsage {
            input: u.get("prompt_tokens")?.as_u64()?,
            output: u.get("completion_tokens")?.as_u64()?,
        })
    });

    let (text, refused) = match (content, refusal) {
        (_, Some(refusal)) => (refusal.to_string(), true),
        (Some(content), None) => (content.to_string(), filtered),
        (None, None) if filtered => (String::new(), true),
        (None, None) => {
            return Err(GatewayError::InvalidResponse(
                "first choice has no message content".into(),
            ));
        }
    };
    Ok(BackendResponse {
        text,
        usage,
        refused,
        reported_latency: None,
    })
}

pub struct OpenAiBackend {
    client: Client,
    api_key: String,
    endpoint: String,
}

impl OpenAiBackend {
    pub fn new(config: &BackendConfig, api_key: impl Into<String>) -> Result<Self, GatewayError> {
        config.validate()?;
        let client = Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| GatewayError::Config(format!("HTTP client: {e}")))?;
        Ok(Self {
            client,
            api_key: api_key.into(),
            endpoint: config.endpoint_url.clone(),
        })
    }

    /// Reads the key from the variable named in `config.api_key_env`.
    pub fn from_env(config: &BackendConfig) -> Result<Self, GatewayError> {
        let key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| GatewayError::MissingApiKey(config.api_key_env.clone()))?;
        Self::new(config, key)
    }
}

fn retry_after(headers: &reqwest::header::HeaderMap) -> Option<Duration> {
    let secs: f64 = headers.get(RETRY_AFTER)?.to_str().ok()?.trim().parse().ok()?;
    (secs.is_finite() && secs >= 0.0).then(|| Duration::from_secs_f64(secs))
}

impl Backend for OpenAiBackend {
    fn id(&self) -> &str {
        "openai-compatible"
    }

    fn complete(
        &self,
        request: &ClassificationRequest,
        config: &BackendConfig,
    ) -> Result<BackendResponse, GatewayError> {
        let body = chat_request_body(request, config);
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .header(CONTENT_TYPE, "application/json")
            .body(body.to_string())
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    GatewayError::Timeout(config.request_timeout)
                } else {
                    GatewayError::Transport(e.to_string())
                }
            })?;

        let status = response.status();
        let wait = retry_after(response.headers());
        let text = response.text().map_err(|e| {
            if e.is_timeout() {
                GatewayError::Timeout(config.request_timeout)
            } else {
                GatewayError::Transport(e.to_string())
            }
        })?;

        match status {
            s if s.is_success() => {
                let value: Value = serde_json::from_str(&text)
                    .map_err(|e| GatewayError::InvalidResponse(format!("body is not JSON: {e}")))?;
                extract_chat_reply(&value)
            }
            StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => Err(GatewayError::Auth(text)),
            StatusCode::TOO_MANY_REQUESTS => Err(GatewayError::RateLimited { retry_after: wait }),
            StatusCode::REQUEST_TIMEOUT => Err(GatewayError::Timeout(config.request_timeout)),
            s if s.is_server_error() => Err(GatewayError::Transport(format!("HTTP {}: {text}", s.as_u16()))),
            s => Err(GatewayError::Http {
                status: s.as_u16(),
                body: text,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extracts_content_and_usage() {
        let body = json!({
            "choices": [{"message": {"role": "assistant", "content": " {\"age\": \"<1700\"} \n"}, "finish_reason": "stop"}],
            "usage": {"prompt_tokens": 1200, "completion_tokens": 80, "total_tokens": 1280}
        });
        let reply = extract_chat_reply(&body).unwrap();
        assert_eq!(reply.text, " {\"age\": \"<1700\"} \n");
        assert_eq!(
            reply.usage,
            Some(TokenUsage {
                input: 1200,
                output: 80
            })
        );
        assert!(!reply.refused);
    }

    #[test]
    fn detects_refusals() {
        let filtered = json!({"choices": [{"message": {"content": null}, "finish_reason": "content_filter"}]});
        assert!(extract_chat_reply(&filtered).unwrap().refused);
        let refusal = json!({"choices": [{"message": {"content": null, "refusal": "I can't help."}}]});
        let r = extract_chat_reply(&refusal).unwrap();
        assert!(r.refused);
        assert_eq!(r.text, "I can't help.");
    }

    #[test]
    fn rejects_empty_responses() {
        assert!(extract_chat_reply(&json!({"choices": []})).is_err());
        assert!(extract_chat_reply(&json!({"choices": [{"message": {}}]})).is_err());
    }

    #[test]
    fn missing_key_variable() {
        let config = BackendConfig {
            api_key_env: "AGESCOPE_TEST_DEFINITELY_UNSET_KEY".into(),
            ..BackendConfig::default()
        };
        assert!(matches!(
            OpenAiBackend::from_env(&config),
            Err(GatewayError::MissingApiKey(var)) if var == "AGESCOPE_TEST_DEFINITELY_UNSET_KEY"
        ));
    }
}
