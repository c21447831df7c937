//! Ranked candidate lists and the JSON Lines run format.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Model id carried by fused lists.
pub const FUSED_MODEL_ID: &str = "fused";

/// Which end of the score range is better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// Lower scores are better (distances).
    #[serde(rename = "asc")]
    AscendingBetter,
    /// Higher scores are better (similarities, RRF).
    #[serde(rename = "desc")]
    DescendingBetter,
}

impl Direction {
    /// Orders two scores best-first.
    pub fn compare(self, a: f64, b: f64) -> Ordering {
        match self {
            Direction::AscendingBetter => a.total_cmp(&b),
            Direction::DescendingBetter => b.total_cmp(&a),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::AscendingBetter => "asc",
            Direction::DescendingBetter => "desc",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub doc_id: String,
    pub score: f64,
    pub rank: usize,
}

/// An ordered candidate list for one query.
///
/// Ranks are `1..=len` in order, scores are monotone in the list's
/// direction and doc ids are unique. [`RankedList::new`] enforces this.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedList {
    query_id: String,
    model_id: String,
    direction: Direction,
    entries: Vec<RankedEntry>,
}

#[derive(Deserialize)]
struct RawRankedList {
    query_id: String,
    model_id: String,
    direction: Direction,
    entries: Vec<RankedEntry>,
}

impl<'de> Deserialize<'de> for RankedList {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawRankedList::deserialize(deserializer)?;
        RankedList::new(raw.query_id, raw.model_id, raw.direction, raw.entries)
            .map_err(serde::de::Error::custom)
    }
}

impl RankedList {
    pub fn new(
        query_id: impl Into<String>,
        model_id: impl Into<String>,
        direction: Direction,
        entries: Vec<RankedEntry>,
    ) -> Result<Self> {
        let list = RankedList {
            query_id: query_id.into(),
            model_id: model_id.into(),
            direction,
            entries,
        };
        list.validate()?;
        Ok(list)
    }

    /// Sorts `(doc_id, score)` pairs best-first, breaking exact score ties by
    /// ascending doc id, and assigns ranks `1..=n`.
    pub fn from_scores(
        query_id: impl Into<String>,
        model_id: impl Into<String>,
        direction: Direction,
        mut scored: Vec<(String, f64)>,
    ) -> Result<Self> {
        scored.sort_by(|a, b| direction.compare(a.1, b.1).then_with(|| a.0.cmp(&b.0)));
        let entries = scored
            .into_iter()
            .enumerate()
            .map(|(i, (doc_id, score))| RankedEntry {
                doc_id,
                score,
                rank: i + 1,
            })
            .collect();
        Self::new(query_id, model_id, direction, entries)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.entries.len());
        for (i, entry) in self.entries.iter().enumerate() {
            if entry.rank != i + 1 {
                return Err(Error::InvalidRankedList(format!(
                    "query {}: entry {} has rank {}, expected {}",
                    self.query_id,
                    i,
                    entry.rank,
                    i + 1
                )));
            }
            if !entry.score.is_finite() {
                return Err(Error::InvalidRankedList(format!(
                    "query {}: non-finite score for {}",
                    self.query_id, entry.doc_id
                )));
            }
            if !seen.insert(entry.doc_id.as_str()) {
                return Err(Error::InvalidRankedList(format!(
                    "query {}: duplicate doc_id {}",
                    self.query_id, entry.doc_id
                )));
            }
            if i > 0 {
                let prev = self.entries[i - 1].score;
                if self.direction.compare(prev, entry.score) == Ordering::Greater {
                    return Err(Error::InvalidRankedList(format!(
                        "query {}: scores not monotone ({}) at rank {}",
                        self.query_id, self.direction, entry.rank
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn query_id(&self) -> &str {
        &self.query_id
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn entries(&self) -> &[RankedEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn top(&self) -> Option<&RankedEntry> {
        self.entries.first()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    /// The first `depth` entries; ranks are unchanged.
    pub fn truncated(&self, depth: usize) -> RankedList {
        RankedList {
            query_id: self.query_id.clone(),
            model_id: self.model_id.clone(),
            direction: self.direction,
            entries: self.entries.iter().take(depth).cloned().collect(),
        }
    }

    pub fn with_model_id(mut self, model_id: impl Into<String>) -> RankedList {
        self.model_id = model_id.into();
        self
    }

    /// Replaces every score through `f`, which must preserve order.
    pub(crate) fn map_scores(&self, f: impl Fn(f64) -> f64) -> Result<RankedList> {
        let entries = self
            .entries
            .iter()
            .map(|e| RankedEntry {
                doc_id: e.doc_id.clone(),
                score: f(e.score),
                rank: e.rank,
            })
            .collect();
        RankedList::new(self.query_id.clone(), self.model_id.clone(), self.direction, entries)
    }
}

/// Serializes lists as JSON Lines, one list per line, in the given order.
pub fn write_run(lists: &[RankedList]) -> Result<String> {
    let mut out = String::new();
    for list in lists {
        out.push_str(&serde_json::to_string(list)?);
        out.push('\n');
    }
    Ok(out)
}

/// Parses a JSON Lines run. Blank lines are skipped.
pub fn parse_run(text: &str) -> Result<Vec<RankedList>> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str::<RankedList>(line).map_err(|e| Error::parse("run", i + 1, e))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(doc: &str, score: f64, rank: usize) -> RankedEntry {
        RankedEntry {
            doc_id: doc.into(),
            score,
            rank,
        }
    }

    #[test]
    fn rejects_bad_ranks() {
        let err = RankedList::new("q", "m", Direction::AscendingBetter, vec![entry("a", 0.0, 2)]);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_non_monotone_scores() {
        let entries = vec![entry("a", 2.0, 1), entry("b", 1.0, 2)];
        assert!(RankedList::new("q", "m", Direction::AscendingBetter, entries.clone()).is_err());
        assert!(RankedList::new("q", "m", Direction::DescendingBetter, entries).is_ok());
    }

    #[test]
    fn rejects_duplicate_docs() {
        let entries = vec![entry("a", 1.0, 1), entry("a", 1.0, 2)];
        assert!(RankedList::new("q", "m", Direction::AscendingBetter, entries).is_err());
    }

    #[test]
    fn from_scores_breaks_ties_by_doc_id() {
        let list = RankedList::from_scores(
            "q",
            "m",
            Direction::DescendingBetter,
            vec![("b".into(), 1.0), ("c".into(), 2.0), ("a".into(), 1.0)],
        )
        .unwrap();
        assert_eq!(list.doc_ids().collect::<Vec<_>>(), ["c", "a", "b"]);
    }

    #[test]
    fn jsonl_round_trip() {
        let list = RankedList::from_scores(
            "q1",
            "clip",
            Direction::AscendingBetter,
            vec![("x".into(), 0.1 + 0.2), ("y".into(), 1.0 / 3.0)],
        )
        .unwrap();
        let text = write_run(std::slice::from_ref(&list)).unwrap();
        assert!(text.starts_with(r#"{"query_id":"q1","model_id":"clip","direction":"asc","entries":[{"doc_id":"x","score":0.30000000000000004,"rank":1}"#));
        assert_eq!(parse_run(&text).unwrap(), vec![list]);
    }

    #[test]
    fn parse_reports_line_numbers() {
        let text = "\n{\"query_id\":\"q\",\"model_id\":\"m\",\"direction\":\"up\",\"entries\":[]}\n";
        let err = parse_run(text).unwrap_err().to_string();
        assert!(err.starts_with("run: line 2:"), "{err}");
    }

    #[test]
    fn parse_validates_invariants() {
        let text = r#"{"query_id":"q","model_id":"m","direction":"asc","entries":[{"doc_id":"a","score":1,"rank":1},{"doc_id":"b","score":0.5,"rank":2}]}"#;
        assert!(parse_run(text).is_err());
    }
}
