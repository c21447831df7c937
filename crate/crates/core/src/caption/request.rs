//! Generation requests and the chat-completion wire body.

use std::fs;
use std::path::Path;

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::prompt::PromptTemplate;
use crate::error::{Error, Result};

/// Default article budget, in characters.
pub const DEFAULT_ARTICLE_BUDGET: usize = 20_000;
pub const MIN_MAX_TOKENS: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub max_tokens: u32,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for Decoding {
    fn default() -> Self {
        Decoding {
            max_tokens: 512,
            temperature: 0.0,
            seed: None,
        }
    }
}

/// One (query image, retrieved article, prompt) triplet.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub query_id: String,
    pub image_ref: String,
    pub article_text: String,
    pub prompt: PromptTemplate,
    pub decoding: Decoding,
    /// Set when the article was cut to the character budget.
    pub truncated: bool,
}

/// Cuts `text` to at most `budget` characters, preferring the last
/// whitespace boundary inside the budget.
fn truncate_on_whitespace(text: &str, budget: usize) -> Option<&str> {
    let (cut, _) = text.char_indices().nth(budget)?;
    let head = &text[..cut];
    let next_is_space = text[cut..].chars().next().is_some_and(char::is_whitespace);
    let cut_head = if next_is_space {
        head
    } else {
        match head.rfind(char::is_whitespace) {
            Some(i) => &head[..i],
            None => head,
        }
    };
    Some(cut_head.trim_end())
}

pub fn build_request(
    query_id: impl Into<String>,
    image_ref: impl Into<String>,
    article_text: &str,
    template: &PromptTemplate,
    decoding: Decoding,
    article_budget: usize,
) -> Result<GenerationRequest> {
    if article_text.trim().is_empty() {
        return Err(Error::EmptyArticle);
    }
    if decoding.max_tokens < MIN_MAX_TOKENS {
        return Err(Error::InvalidRequest(format!(
            "max_tokens must be at least {MIN_MAX_TOKENS}, got {}",
            decoding.max_tokens
        )));
    }
    if !decoding.temperature.is_finite() || decoding.temperature < 0.0 {
        return Err(Error::InvalidRequest(format!("bad temperature {}", decoding.temperature)));
    }
    if article_budget == 0 {
        return Err(Error::InvalidRequest("article budget must be positive".into()));
    }
    let (article, truncated) = match truncate_on_whitespace(article_text, article_budget) {
        Some(cut) => (cut.to_string(), true),
        None => (article_text.to_string(), false),
    };
    Ok(GenerationRequest {
        query_id: query_id.into(),
        image_ref: image_ref.into(),
        article_text: article,
        prompt: template.clone(),
        decoding,
        truncated,
    })
}

#[derive(Serialize)]
struct ChatBody<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    max_tokens: u32,
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: [ContentPart<'a>; 2],
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ContentPart<'a> {
    ImageUrl { image_url: ImageUrl<'a> },
    Text { text: String },
}

#[derive(Serialize)]
struct ImageUrl<'a> {
    url: &'a str,
}

impl GenerationRequest {
    /// The single text part: prompt, then the article under an `ARTICLE:` label.
    pub fn user_text(&self) -> String {
        format!("{}\n\nARTICLE:\n{}", self.prompt.text(), self.article_text)
    }

    /// Serializes the chat-completion body with `image_url` as the one
    /// image attachment.
    pub fn chat_body(&self, model: &str, image_url: &str) -> Result<Vec<u8>> {
        let body = ChatBody {
            model,
            messages: [ChatMessage {
                role: "user",
                content: [
                    ContentPart::ImageUrl {
                        image_url: ImageUrl { url: image_url },
                    },
                    ContentPart::Text {
                        text: self.user_text(),
                    },
                ],
            }],
            max_tokens: self.decoding.max_tokens,
            temperature: self.decoding.temperature,
            seed: self.decoding.seed,
        };
        Ok(serde_json::to_vec(&body)?)
    }
}

/// URLs and data URLs pass through; anything else is read as a local file
/// and inlined as a base64 data URL.
pub fn resolve_image_url(image_ref: &str) -> Result<String> {
    let lower = image_ref.to_ascii_lowercase();
    if lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("data:") {
        return Ok(image_ref.to_string());
    }
    let path = Path::new(image_ref);
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mime = match path
        .extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg") | Some("jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        Some("gif") => "image/gif",
        _ => "application/octet-stream",
    };
    let encoded = base64::engine::general_purpose::STANDARD.encode(bytes);
    Ok(format!("data:{mime};base64,{encoded}"))
}

fn default_auth_env() -> Option<String> {
    Some("ZSECAP_API_KEY".into())
}

fn default_timeout() -> f64 {
    120.0
}

fn default_retries() -> u32 {
    3
}

fn default_concurrency() -> usize {
    4
}

fn default_backoff() -> u64 {
    500
}

/// Where and how to reach the chat endpoint. The bearer token is read from
/// the environment variable named by `auth_env`, never from the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmEndpointConfig {
    pub base_url: String,
    #[serde(rename = "model")]
    pub model_name: String,
    #[serde(default = "default_auth_env")]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_concurrency")]
    pub max_concurrent: usize,
    /// First retry delay; doubles on every further retry.
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
}

impl LlmEndpointConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        LlmEndpointConfig {
            base_url: base_url.into(),
            model_name: model_name.into(),
            auth_env: default_auth_env(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            max_concurrent: default_concurrency(),
            backoff_ms: default_backoff(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: LlmEndpointConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(Error::InvalidEndpoint(format!("timeout must be > 0, got {}", self.timeout_secs)));
        }
        if self.max_concurrent == 0 {
            return Err(Error::InvalidEndpoint("max_concurrent must be at least 1".into()));
        }
        if self.base_url.trim().is_empty() {
            return Err(Error::InvalidEndpoint("empty base_url".into()));
        }
        Ok(())
    }

    pub fn completions_url(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }

    pub fn auth_token(&self) -> Option<String> {
        self.auth_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|t| !t.is_empty())
    }
}
