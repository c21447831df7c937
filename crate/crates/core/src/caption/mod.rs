//! Prompt-guided caption generation through a multimodal chat endpoint.

pub mod client;
pub mod postprocess;
pub mod prompt;
pub mod request;
pub mod stage;

pub use client::{CaptionClient, CaptionGenerator, Generation, HttpReply, HttpTransport, UreqTransport};
pub use postprocess::{postprocess, postprocess_with, DEFAULT_PREAMBLES};
pub use prompt::{PromptTemplate, PROMPT_V1, PROMPT_V1_SHA256};
pub use request::{build_request, Decoding, GenerationRequest, LlmEndpointConfig, DEFAULT_ARTICLE_BUDGET};
pub use stage::{run_caption_stage, CaptionFailure, CaptionStageOutput, GeneratedCaption, QueryImage, StageOptions};
