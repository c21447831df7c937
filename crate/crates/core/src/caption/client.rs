//! Chat-completion client with retry and exponential backoff.

use std::io::Read;
use std::time::Duration;

use log::{debug, warn};

use super::request::{resolve_image_url, GenerationRequest, LlmEndpointConfig};
use crate::error::{Error, Result};

const MAX_BACKOFF: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

/// Minimal blocking HTTP POST. `Err` means no HTTP response was received
/// (connection refused, timeout, reset).
pub trait HttpTransport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        body: &[u8],
        bearer: Option<&str>,
        timeout: Duration,
    ) -> std::result::Result<HttpReply, String>;
}

/// [`HttpTransport`] backed by `ureq`.
#[derive(Debug, Default)]
pub struct UreqTransport;

impl HttpTransport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        body: &[u8],
        bearer: Option<&str>,
        timeout: Duration,
    ) -> std::result::Result<HttpReply, String> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut req = agent.post(url).header("Content-Type", "application/json");
        if let Some(token) = bearer {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send(body).map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let mut text = String::new();
        resp.body_mut()
            .as_reader()
            .read_to_string(&mut text)
            .map_err(|e| e.to_string())?;
        Ok(HttpReply { status, body: text })
    }
}

/// A completed generation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generation {
    pub text: String,
    /// Attempts beyond the first.
    pub retries: u32,
}

/// Anything that turns a request into raw caption text.
pub trait CaptionGenerator: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<Generation>;
}

pub struct CaptionClient {
    endpoint: LlmEndpointConfig,
    transport: Box<dyn HttpTransport>,
    auth_token: Option<String>,
}

fn retryable(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

/// Pulls `choices[0].message.content` out of a chat-completion response.
/// Content may be a string or a list of `{"type": "text", "text": ...}` parts.
pub fn parse_completion(body: &str) -> Result<String> {
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| Error::Protocol(format!("response is not JSON: {e}")))?;
    let content = value
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .and_then(|m| m.get("content"))
        .ok_or_else(|| Error::Protocol("missing choices[0].message.content".into()))?;
    match content {
        serde_json::Value::String(s) => Ok(s.clone()),
        serde_json::Value::Array(parts) => {
            let texts: Option<Vec<&str>> = parts
                .iter()
                .map(|p| p.get("text").and_then(|t| t.as_str()))
                .collect();
            texts
                .map(|t| t.concat())
                .ok_or_else(|| Error::Protocol("content part without text".into()))
        }
        _ => Err(Error::Protocol("content is neither a string nor a part list".into())),
    }
}

fn snippet(body: &str) -> String {
    let mut s: String = body.chars().take(200).collect();
    if s.len() < body.len() {
        s.push('…');
    }
    s
}

impl CaptionClient {
    pub fn new(endpoint: LlmEndpointConfig) -> Result<Self> {
        Self::with_transport(endpoint, Box::new(UreqTransport))
    }

    pub fn with_transport(endpoint: LlmEndpointConfig, transport: Box<dyn HttpTransport>) -> Result<Self> {
        endpoint.validate()?;
        let auth_token = endpoint.auth_token();
        Ok(CaptionClient {
            endpoint,
            transport,
            auth_token,
        })
    }

    pub fn endpoint(&self) -> &LlmEndpointConfig {
        &self.endpoint
    }

    fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry).unwrap_or(u64::MAX);
        Duration::from_millis(self.endpoint.backoff_ms.saturating_mul(factor)).min(MAX_BACKOFF)
    }

    /// Posts an already serialized body, retrying network failures, 5xx and
    /// 429 up to `max_retries` times. Other statuses fail immediately.
    pub fn post_with_retry(&self, body: &[u8]) -> Result<Generation> {
        let url = self.endpoint.completions_url();
        let timeout = Duration::from_secs_f64(self.endpoint.timeout_secs);
        let mut attempt = 0u32;
        loop {
            let outcome = self
                .transport
                .post_json(&url, body, self.auth_token.as_deref(), timeout);
            let (status, message) = match outcome {
                Ok(reply) if (200..300).contains(&reply.status) => {
                    let text = parse_completion(&reply.body)?;
                    return Ok(Generation {
                        text,
                        retries: attempt,
                    });
                }
                Ok(reply) if !retryable(reply.status) => {
                    return Err(Error::Transport {
                        attempts: attempt + 1,
                        status: Some(reply.status),
                        message: format!("HTTP {}: {}", reply.status, snippet(&reply.body)),
                    });
                }
                Ok(reply) => (Some(reply.status), format!("HTTP {}: {}", reply.status, snippet(&reply.body))),
                Err(e) => (None, e),
            };
            if attempt >= self.endpoint.max_retries {
                return Err(Error::Transport {
                    attempts: attempt + 1,
                    status,
                    message,
                });
            }
            let delay = self.backoff(attempt);
            warn!("attempt {} failed ({message}); retrying in {delay:?}", attempt + 1);
            std::thread::sleep(delay);
            attempt += 1;
        }
    }
}

impl CaptionGenerator for CaptionClient {
    fn generate(&self, request: &GenerationRequest) -> Result<Generation> {
        let image_url = resolve_image_url(&request.image_ref)?;
        let body = request.chat_body(&self.endpoint.model_name, &image_url)?;
        debug!("query {}: posting {} bytes", request.query_id, body.len());
        self.post_with_retry(&body)
    }
}

/// Sends one request to `endpoint` over HTTP and returns the raw completion.
pub fn generate_caption(request: &GenerationRequest, endpoint: &LlmEndpointConfig) -> Result<Generation> {
    CaptionClient::new(endpoint.clone())?.generate(request)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caption::{build_request, Decoding, PromptTemplate};
    use std::sync::Mutex;

    /// Replays a fixed sequence of replies and counts calls.
    struct Scripted {
        replies: Mutex<Vec<std::result::Result<HttpReply, String>>>,
        calls: Mutex<u32>,
    }

    impl Scripted {
        fn new(mut replies: Vec<std::result::Result<HttpReply, String>>) -> Self {
            replies.reverse();
            Scripted {
                replies: Mutex::new(replies),
                calls: Mutex::new(0),
            }
        }
    }

    impl HttpTransport for Scripted {
        fn post_json(&self, _: &str, _: &[u8], _: Option<&str>, _: Duration) -> std::result::Result<HttpReply, String> {
            *self.calls.lock().unwrap() += 1;
            self.replies.lock().unwrap().pop().expect("script exhausted")
        }
    }

    fn ok(text: &str) -> std::result::Result<HttpReply, String> {
        Ok(HttpReply {
            status: 200,
            body: serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string(),
        })
    }

    fn status(code: u16) -> std::result::Result<HttpReply, String> {
        Ok(HttpReply {
            status: code,
            body: "nope".into(),
        })
    }

    fn endpoint() -> LlmEndpointConfig {
        let mut e = LlmEndpointConfig::new("http://stub/v1", "gemma");
        e.backoff_ms = 1;
        e.auth_env = None;
        e
    }

    fn request() -> GenerationRequest {
        build_request("q", "https://img/1.jpg", "Article.", &PromptTemplate::builtin(), Decoding::default(), 100)
            .unwrap()
    }

    #[test]
    fn pass_through() {
        let client = CaptionClient::with_transport(endpoint(), Box::new(Scripted::new(vec![ok("X")]))).unwrap();
        assert_eq!(client.generate(&request()).unwrap(), Generation { text: "X".into(), retries: 0 });
    }

    #[test]
    fn retries_transient_failures() {
        let script = vec![status(503), Err("connection reset".into()), ok("done")];
        let client = CaptionClient::with_transport(endpoint(), Box::new(Scripted::new(script))).unwrap();
        let generation = client.generate(&request()).unwrap();
        assert_eq!(generation.retries, 2);
        assert_eq!(generation.text, "done");
    }

    #[test]
    fn unauthorized_is_not_retried() {
        let scripted = Scripted::new(vec![status(401), ok("unreachable")]);
        let client = CaptionClient::with_transport(endpoint(), Box::new(scripted)).unwrap();
        match client.generate(&request()) {
            Err(Error::Transport { attempts, status, .. }) => {
                assert_eq!(attempts, 1);
                assert_eq!(status, Some(401));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rate_limit_is_retried_and_exhaustion_reports_last_status() {
        let mut e = endpoint();
        e.max_retries = 2;
        let client =
            CaptionClient::with_transport(e, Box::new(Scripted::new(vec![status(429), status(500), status(502)]))).unwrap();
        match client.generate(&request()) {
            Err(Error::Transport { attempts, status, .. }) => {
                assert_eq!(attempts, 3);
                assert_eq!(status, Some(502));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_body_is_protocol_error() {
        let bad = Ok(HttpReply { status: 200, body: "{\"choices\":[]}".into() });
        let client = CaptionClient::with_transport(endpoint(), Box::new(Scripted::new(vec![bad]))).unwrap();
        assert!(matches!(client.generate(&request()), Err(Error::Protocol(_))));
    }

    #[test]
    fn content_parts_are_joined() {
        let body = r#"{"choices":[{"message":{"content":[{"type":"text","text":"a "},{"type":"text","text":"b"}]}}]}"#;
        assert_eq!(parse_completion(body).unwrap(), "a b");
        assert!(parse_completion("not json").is_err());
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let mut e = endpoint();
        e.backoff_ms = 100;
        let client = CaptionClient::with_transport(e, Box::new(Scripted::new(vec![]))).unwrap();
        assert_eq!(client.backoff(0), Duration::from_millis(100));
        assert_eq!(client.backoff(3), Duration::from_millis(800));
        assert_eq!(client.backoff(40), MAX_BACKOFF);
    }
}
