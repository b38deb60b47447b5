//! Chat-completions wire format and gateway implementations.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::prompts::{PromptMessage, PromptPart};

pub const IMAGE_URL_SCHEME: &str = "file://";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: Vec<ContentPart>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    ImageUrl { image_url: ImageUrl },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageUrl {
    pub url: String,
}

impl ChatRequest {
    pub fn from_prompt(prompt: &PromptMessage, config: &VlmGatewayConfig) -> Self {
        let content = prompt
            .parts
            .iter()
            .map(|p| match p {
                PromptPart::Text(text) => ContentPart::Text { text: text.clone() },
                PromptPart::Image(r) => ContentPart::ImageUrl {
                    image_url: ImageUrl {
                        url: format!("{IMAGE_URL_SCHEME}{r}"),
                    },
                },
            })
            .collect();
        ChatRequest {
            model: config.model_id.clone(),
            temperature: config.temperature,
            max_tokens: config.max_output_tokens,
            messages: vec![ChatMessage {
                role: "user".into(),
                content,
            }],
        }
    }

    pub fn image_parts(&self) -> usize {
        self.messages
            .iter()
            .flat_map(|m| &m.content)
            .filter(|c| matches!(c, ContentPart::ImageUrl { .. }))
            .count()
    }

    /// Image references with the `file://` scheme stripped.
    pub fn image_refs(&self) -> Vec<&str> {
        self.messages
            .iter()
            .flat_map(|m| &m.content)
            .filter_map(|c| match c {
                ContentPart::ImageUrl { image_url } => Some(
                    image_url
                        .url
                        .strip_prefix(IMAGE_URL_SCHEME)
                        .unwrap_or(&image_url.url),
                ),
                ContentPart::Text { .. } => None,
            })
            .collect()
    }

    /// Concatenated text parts, images shown as the template marker.
    pub fn text(&self) -> String {
        self.messages
            .iter()
            .flat_map(|m| &m.content)
            .map(|c| match c {
                ContentPart::Text { text } => text.as_str(),
                ContentPart::ImageUrl { .. } => super::prompts::IMAGE_MARKER,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub choices: Vec<Choice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    pub message: ReplyMessage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplyMessage {
    pub role: String,
    pub content: String,
}

impl ChatResponse {
    pub fn from_text(text: impl Into<String>) -> Self {
        ChatResponse {
            choices: vec![Choice {
                message: ReplyMessage {
                    role: "assistant".into(),
                    content: text.into(),
                },
            }],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatewayError {
    /// Worth retrying: timeouts, connection failures, 429 and 5xx.
    #[error("transient: {0}")]
    Transient(String),
    #[error("permanent: {0}")]
    Permanent(String),
}

/// Anything that answers a chat-completions request with reply text.
pub trait VlmGateway: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError>;
}

impl<G: VlmGateway + ?Sized> VlmGateway for &G {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        (**self).complete(request)
    }
}

impl<G: VlmGateway + ?Sized> VlmGateway for Box<G> {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        (**self).complete(request)
    }
}

impl<G: VlmGateway + ?Sized> VlmGateway for std::sync::Arc<G> {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VlmGatewayConfig {
    pub endpoint_url: String,
    pub model_id: String,
    pub max_output_tokens: u32,
    pub temperature: f64,
    #[serde(with = "millis")]
    pub timeout: Duration,
    pub max_retries: u32,
    pub max_in_flight: usize,
    #[serde(with = "millis")]
    pub backoff_base: Duration,
}

impl Default for VlmGatewayConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "http://127.0.0.1:8000/v1".into(),
            model_id: "Qwen/Qwen3-VL-8B-Instruct".into(),
            max_output_tokens: 256,
            temperature: 0.0,
            timeout: Duration::from_secs(60),
            max_retries: 3,
            max_in_flight: 8,
            backoff_base: Duration::from_millis(250),
        }
    }
}

impl VlmGatewayConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.max_in_flight == 0 {
            return Err(crate::Error::Config("max_in_flight must be >= 1".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(crate::Error::Config("temperature must be >= 0".into()));
        }
        Ok(())
    }

    /// Delay before retry number `retry` (0-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        self.backoff_base.saturating_mul(1u32 << retry.min(16))
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// Blocking HTTP client for a chat-completions endpoint.
pub struct HttpGateway {
    client: reqwest::blocking::Client,
    url: String,
    bearer: Option<String>,
}

impl HttpGateway {
    pub fn new(config: &VlmGatewayConfig, bearer: Option<String>) -> crate::Result<Self> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| crate::Error::Gateway(e.to_string()))?;
        Ok(Self {
            client,
            url: format!(
                "{}/chat/completions",
                config.endpoint_url.trim_end_matches('/')
            ),
            bearer,
        })
    }
}

impl VlmGateway for HttpGateway {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let mut builder = self.client.post(&self.url).json(request);
        if let Some(token) = &self.bearer {
            builder = builder.bearer_auth(token);
        }
        let resp = builder
            .send()
            .map_err(|e| GatewayError::Transient(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(GatewayError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(GatewayError::Permanent(format!("HTTP {status}")));
        }
        let body: ChatResponse = resp
            .json()
            .map_err(|e| GatewayError::Permanent(format!("malformed reply: {e}")))?;
        body.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| GatewayError::Permanent("reply has no choices".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enhance::prompts::{build_modification_prompt, build_qa_rewrite_prompt};

    #[test]
    fn wire_shape() {
        let p = build_qa_rewrite_prompt("When was it discovered?", "img/panda.png").unwrap();
        let req = ChatRequest::from_prompt(&p, &VlmGatewayConfig::default());
        let v = serde_json::to_value(&req).unwrap();
        assert_eq!(v["temperature"], 0.0);
        assert_eq!(v["messages"][0]["role"], "user");
        let content = v["messages"][0]["content"].as_array().unwrap();
        assert_eq!(content[0]["type"], "text");
        assert_eq!(content[1]["type"], "image_url");
        assert_eq!(content[1]["image_url"]["url"], "file://img/panda.png");
        assert_eq!(req.image_refs(), ["img/panda.png"]);
        assert_eq!(req.text(), p.rendered_text());
    }

    #[test]
    fn modification_wire_has_no_images() {
        let p = build_modification_prompt("Remove the lemon.").unwrap();
        let req = ChatRequest::from_prompt(&p, &VlmGatewayConfig::default());
        assert_eq!(req.image_parts(), 0);
    }

    #[test]
    fn backoff_doubles() {
        let cfg = VlmGatewayConfig {
            backoff_base: Duration::from_millis(10),
            ..Default::default()
        };
        assert_eq!(cfg.backoff(0), Duration::from_millis(10));
        assert_eq!(cfg.backoff(3), Duration::from_millis(80));
    }

    #[test]
    fn config_validation() {
        let mut cfg = VlmGatewayConfig {
            max_in_flight: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg.max_in_flight = 1;
        cfg.temperature = -0.1;
        assert!(cfg.validate().is_err());
    }
}
