//! OpenAI-style chat-completion endpoint.
//!
//! Request: `{model, messages: [{role, content}], temperature, logprobs, top_logprobs}`
//! where `content` is a string, or a list of text and `image_url` parts when
//! frames are attached. When `logprobs` is requested the response must carry
//! `choices[0].logprobs.content[0].top_logprobs`.

use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use super::{Attachment, Backend, BackendError, ModelRequest, ModelResponse, TokenDistribution};

#[derive(Clone, Debug)]
pub struct HttpConfig {
    pub endpoint_url: String,
    pub model_id: String,
    /// Bearer token. Read from the environment by the caller, never stored in config.
    pub api_key: Option<String>,
    pub temperature: f64,
    pub top_logprobs: u32,
    pub timeout: Duration,
}

impl HttpConfig {
    pub fn new(endpoint_url: impl Into<String>, model_id: impl Into<String>) -> Self {
        HttpConfig {
            endpoint_url: endpoint_url.into(),
            model_id: model_id.into(),
            api_key: None,
            temperature: 0.0,
            top_logprobs: 5,
            timeout: Duration::from_secs(120),
        }
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        HttpBackend { config, agent }
    }

    pub fn request_body(&self, request: &ModelRequest) -> Result<Value, BackendError> {
        let content = if request.attachments.is_empty() {
            Value::String(request.prompt.clone())
        } else {
            let mut parts = vec![json!({"type": "text", "text": request.prompt})];
            for a in &request.attachments {
                parts.push(json!({
                    "type": "image_url",
                    "image_url": {"url": image_url(a)?},
                }));
            }
            Value::Array(parts)
        };
        let mut body = json!({
            "model": self.config.model_id,
            "messages": [{"role": "user", "content": content}],
            "temperature": self.config.temperature,
            "logprobs": request.logprobs,
        });
        if request.logprobs {
            body["top_logprobs"] = json!(self.config.top_logprobs);
        }
        Ok(body)
    }
}

fn image_url(a: &Attachment) -> Result<String, BackendError> {
    let Some(path) = &a.path else {
        // already a URL the endpoint can fetch
        return Ok(a.uri.clone());
    };
    let bytes = std::fs::read(path)
        .map_err(|e| BackendError::Transport(format!("reading {}: {e}", path.display())))?;
    let mime = match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("png") => "image/png",
        Some("webp") => "image/webp",
        Some("gif") => "image/gif",
        _ => "image/jpeg",
    };
    Ok(format!(
        "data:{mime};base64,{}",
        base64::engine::general_purpose::STANDARD.encode(bytes)
    ))
}

/// Extracts the completion text and first-token distribution.
pub(crate) fn parse_response(body: &Value) -> Result<ModelResponse, BackendError> {
    let choice = body
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| BackendError::Malformed("no choices".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Malformed("no message content".into()))?
        .to_string();
    let distribution = choice
        .pointer("/logprobs/content/0/top_logprobs")
        .and_then(Value::as_array)
        .map(|items| {
            TokenDistribution::from_logprobs(items.iter().filter_map(|it| {
                Some((
                    it.get("token")?.as_str()?.to_string(),
                    it.get("logprob")?.as_f64()?,
                ))
            }))
        })
        .filter(|d| !d.0.is_empty());
    Ok(ModelResponse { text, distribution })
}

impl Backend for HttpBackend {
    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    fn call(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        let body = self.request_body(request)?;
        let mut req = self
            .agent
            .post(&self.config.endpoint_url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let retry_after_ms = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<f64>().ok())
            .map(|s| (s * 1000.0) as u64);
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        match status {
            200..=299 => {
                let value: Value = serde_json::from_str(&text)
                    .map_err(|e| BackendError::Malformed(e.to_string()))?;
                parse_response(&value)
            }
            429 => Err(BackendError::RateLimited { retry_after_ms }),
            500..=599 => Err(BackendError::Transport(format!("status {status}: {text}"))),
            _ => Err(BackendError::Rejected { status, body: text }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{ProviderRole, Attachment};
    use std::collections::BTreeMap;

    fn request(logprobs: bool, attachments: Vec<Attachment>) -> ModelRequest {
        ModelRequest {
            role: ProviderRole::Prover,
            template: "verify".into(),
            prompt: "Is it true?".into(),
            args: BTreeMap::new(),
            attachments,
            logprobs,
        }
    }

    #[test]
    fn body_shape_with_frames() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("f0.png");
        std::fs::write(&img, [1u8, 2, 3]).unwrap();
        let b = HttpBackend::new(HttpConfig::new("http://x/v1/chat/completions", "vlm"));
        let body = b
            .request_body(&request(true, vec![Attachment::file(&img).unwrap()]))
            .unwrap();
        assert_eq!(body["model"], "vlm");
        assert_eq!(body["logprobs"], true);
        assert_eq!(body["top_logprobs"], 5);
        let parts = body["messages"][0]["content"].as_array().unwrap();
        assert_eq!(parts[0]["text"], "Is it true?");
        assert_eq!(parts[1]["image_url"]["url"], "data:image/png;base64,AQID");
    }

    #[test]
    fn body_without_frames_is_plain_text() {
        let b = HttpBackend::new(HttpConfig::new("http://x", "llm"));
        let body = b.request_body(&request(false, vec![])).unwrap();
        assert_eq!(body["messages"][0]["content"], "Is it true?");
        assert!(body.get("top_logprobs").is_none());
    }

    #[test]
    fn parses_top_logprobs() {
        let v = json!({"choices": [{"message": {"content": "True"},
            "logprobs": {"content": [{"token": "True", "logprob": -0.1,
              "top_logprobs": [{"token": "True", "logprob": -0.1}, {"token": "False", "logprob": -2.5}]}]}}]});
        let r = parse_response(&v).unwrap();
        assert_eq!(r.text, "True");
        let d = r.distribution.unwrap();
        assert!((d.mass("True") - (-0.1f64).exp()).abs() < 1e-12);
        assert!((d.mass("False") - (-2.5f64).exp()).abs() < 1e-12);
        assert!(parse_response(&json!({"choices": []})).is_err());
    }
}
