//! Cleanup of raw model output into a bare caption.

use crate::error::{Error, Result};

/// Preambles the prompt forbids, matched case-insensitively at the start.
pub const DEFAULT_PREAMBLES: [&str; 3] = ["here is the caption:", "the caption is:", "caption:"];

const QUOTE_PAIRS: [(char, char); 4] = [('"', '"'), ('\'', '\''), ('“', '”'), ('‘', '’')];

pub fn postprocess(raw: &str) -> Result<String> {
    postprocess_with(raw, &DEFAULT_PREAMBLES)
}

fn strip_prefix_ignore_case<'a>(text: &'a str, prefix: &str) -> Option<&'a str> {
    let mut rest = text.char_indices();
    for p in prefix.chars() {
        let (_, c) = rest.next()?;
        if !c.to_lowercase().eq(p.to_lowercase()) {
            return None;
        }
    }
    Some(match rest.next() {
        Some((i, _)) => &text[i..],
        None => "",
    })
}

fn unquote(text: &str) -> Option<&str> {
    QUOTE_PAIRS.iter().find_map(|&(open, close)| {
        let inner = text.strip_prefix(open)?.strip_suffix(close)?;
        // A lone quote character is not a quoted caption.
        (text.chars().count() >= 2).then_some(inner)
    })
}

/// Collapses newlines, then strips whitespace, leading preambles and an
/// enclosing quote pair until nothing changes. The result is a fixed point,
/// so applying this twice gives the same caption.
pub fn postprocess_with(raw: &str, preambles: &[&str]) -> Result<String> {
    let mut collapsed = String::with_capacity(raw.len());
    for (i, line) in raw.split(['\n', '\r']).enumerate() {
        if i > 0 {
            let trimmed_end = collapsed.trim_end().len();
            collapsed.truncate(trimmed_end);
            collapsed.push(' ');
            collapsed.push_str(line.trim_start());
        } else {
            collapsed.push_str(line);
        }
    }

    let mut text = collapsed.trim();
    loop {
        let before = text;
        for preamble in preambles {
            if let Some(rest) = strip_prefix_ignore_case(text, preamble) {
                text = rest.trim();
            }
        }
        if let Some(inner) = unquote(text) {
            text = inner.trim();
        }
        if text == before {
            break;
        }
    }

    if text.is_empty() {
        return Err(Error::EmptyCaption);
    }
    Ok(text.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(postprocess("Here is the caption: Jockey wins.").unwrap(), "Jockey wins.");
        assert_eq!(postprocess("  Plain caption.  ").unwrap(), "Plain caption.");
        assert_eq!(postprocess("\"Quoted caption.\"").unwrap(), "Quoted caption.");
    }

    #[test]
    fn forbidden_preambles_any_case() {
        assert_eq!(postprocess("THE CAPTION IS: A crowd gathers.").unwrap(), "A crowd gathers.");
        assert_eq!(postprocess("Caption: \"Rain in Paris.\"").unwrap(), "Rain in Paris.");
        assert_eq!(postprocess("Here is the caption:\n\n“Fans cheer.”").unwrap(), "Fans cheer.");
    }

    #[test]
    fn newlines_collapse() {
        assert_eq!(postprocess("Line one.\n\nLine two.\r\nEnd.").unwrap(), "Line one. Line two. End.");
    }

    #[test]
    fn only_a_leading_preamble_is_removed() {
        assert_eq!(
            postprocess("The official said caption: none.").unwrap(),
            "The official said caption: none."
        );
    }

    #[test]
    fn empty_results_are_errors() {
        assert!(postprocess("   ").is_err());
        assert!(postprocess("Here is the caption:").is_err());
        assert!(postprocess("\"\"").is_err());
    }

    #[test]
    fn lone_quote_survives() {
        assert_eq!(postprocess("\"").unwrap(), "\"");
    }

    proptest! {
        #[test]
        fn idempotent(raw in "(?s)[ \n\"'a-zA-Z:“”]{0,40}(Here is the caption:|caption:)?[ a-z\n\".]{0,20}") {
            if let Ok(once) = postprocess(&raw) {
                prop_assert_eq!(postprocess(&once).unwrap(), once);
            }
        }
    }
}
