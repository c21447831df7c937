//! The engineered captioning prompt.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Version 1 of the captioning prompt, stored as a byte-exact asset.
pub const PROMPT_V1: &str = include_str!("../../assets/prompt_v1.txt");

/// SHA-256 of [`PROMPT_V1`]. Any edit to the asset must bump the version.
pub const PROMPT_V1_SHA256: &str = "d8e8a81f45325acd54bfcfe626d15337e4f9d52f29c48f6b95f29c405259d374";

const SECTION_MARKERS: [&str; 4] = ["\n1. ", "\n2. ", "\n3. ", "\n4. "];
const NO_PREAMBLE_MARKER: &str = "Crucial Requirement:";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    template_id: String,
    text: String,
    version: u32,
}

impl PromptTemplate {
    /// Validates that `text` keeps the four numbered instruction sections
    /// followed by the no-preamble requirement.
    pub fn new(template_id: impl Into<String>, text: impl Into<String>, version: u32) -> Result<Self> {
        let text = text.into();
        let mut from = 0;
        for marker in SECTION_MARKERS.iter().chain(std::iter::once(&NO_PREAMBLE_MARKER)) {
            match text[from..].find(marker) {
                Some(i) => from += i + marker.len(),
                None => {
                    return Err(Error::InvalidTemplate(format!(
                        "missing {:?} after byte {from}",
                        marker.trim()
                    )))
                }
            }
        }
        Ok(PromptTemplate {
            template_id: template_id.into(),
            text,
            version,
        })
    }

    /// The built-in engineered prompt.
    pub fn builtin() -> Self {
        Self::new("journalistic-caption", PROMPT_V1, 1).expect("bundled prompt is well-formed")
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "custom".into());
        Self::new(id, text, 0)
    }

    pub fn template_id(&self) -> &str {
        &self.template_id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    /// Lowercase hex SHA-256 of the prompt text.
    pub fn digest(&self) -> String {
        sha256_hex(self.text.as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_digest_is_pinned() {
        assert_eq!(PromptTemplate::builtin().digest(), PROMPT_V1_SHA256);
    }

    #[test]
    fn builtin_forbids_preambles() {
        let text = PromptTemplate::builtin().text().to_string();
        assert!(text.starts_with("You are a seasoned expert in journalistic photo caption writing."));
        assert!(text.contains("'Here is the caption:', 'The caption is:'"));
    }

    #[test]
    fn structure_is_enforced() {
        assert!(PromptTemplate::new("t", "just write a caption", 1).is_err());
        let missing_requirement = PROMPT_V1.replace(NO_PREAMBLE_MARKER, "Note:");
        assert!(PromptTemplate::new("t", missing_requirement, 1).is_err());
        let reordered = PROMPT_V1.replace("\n4. ", "\n9. ");
        assert!(PromptTemplate::new("t", reordered, 1).is_err());
    }
}
