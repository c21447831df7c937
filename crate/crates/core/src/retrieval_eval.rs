//! mAP and Recall@k of a run against binary relevance judgments.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ranked::RankedList;

/// Query id to the set of relevant doc ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    relevance: BTreeMap<String, BTreeSet<String>>,
}

#[derive(Deserialize)]
struct GroundTruthLine {
    query_id: String,
    relevant: Vec<String>,
}

impl GroundTruth {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert<I, S>(&mut self, query_id: impl Into<String>, relevant: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let query_id = query_id.into();
        let set: BTreeSet<String> = relevant.into_iter().map(Into::into).collect();
        if set.is_empty() {
            return Err(Error::EmptyRelevant(query_id));
        }
        if self.relevance.contains_key(&query_id) {
            return Err(Error::DuplicateQuery(query_id));
        }
        self.relevance.insert(query_id, set);
        Ok(())
    }

    /// Parses `{"query_id": str, "relevant": [str, ...]}` lines.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut gt = GroundTruth::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: GroundTruthLine =
                serde_json::from_str(line).map_err(|e| Error::parse("ground truth", i + 1, e))?;
            gt.insert(parsed.query_id, parsed.relevant)
                .map_err(|e| Error::parse("ground truth", i + 1, e))?;
        }
        Ok(gt)
    }

    pub fn get(&self, query_id: &str) -> Option<&BTreeSet<String>> {
        self.relevance.get(query_id)
    }

    pub fn len(&self) -> usize {
        self.relevance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relevance.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BTreeSet<String>)> + '_ {
        self.relevance.iter().map(|(q, r)| (q.as_str(), r))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResult {
    pub average_precision: f64,
    pub first_relevant_rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalReport {
    pub map_score: f64,
    pub recall_at: BTreeMap<usize, f64>,
    pub per_query: BTreeMap<String, QueryResult>,
    pub num_queries: usize,
}

impl RetrievalReport {
    /// `{"map", "recall@K"..., "num_queries", "per_query"}`.
    pub fn to_json(&self) -> serde_json::Value {
        let mut obj = serde_json::Map::new();
        obj.insert("map".into(), self.map_score.into());
        for (k, r) in &self.recall_at {
            obj.insert(format!("recall@{k}"), (*r).into());
        }
        obj.insert("num_queries".into(), self.num_queries.into());
        obj.insert(
            "per_query".into(),
            serde_json::to_value(&self.per_query).expect("per-query results serialize"),
        );
        serde_json::Value::Object(obj)
    }
}

fn check_relevant(ranked: &RankedList, relevant: &BTreeSet<String>) -> Result<()> {
    if relevant.is_empty() {
        return Err(Error::EmptyRelevant(ranked.query_id().to_string()));
    }
    Ok(())
}

/// Non-interpolated average precision. Relevant documents that were never
/// retrieved add zero to the sum.
pub fn average_precision(ranked: &RankedList, relevant: &BTreeSet<String>) -> Result<f64> {
    check_relevant(ranked, relevant)?;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, doc) in ranked.doc_ids().enumerate() {
        if relevant.contains(doc) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / relevant.len() as f64)
}

/// `|relevant ∩ top-k| / |relevant|`.
pub fn recall_at_k(ranked: &RankedList, relevant: &BTreeSet<String>, k: usize) -> Result<f64> {
    check_relevant(ranked, relevant)?;
    let found = ranked.doc_ids().take(k).filter(|d| relevant.contains(*d)).count();
    Ok(found as f64 / relevant.len() as f64)
}

/// Evaluates a run against every ground-truth query. Queries the run does
/// not answer score zero; run queries unknown to the ground truth are an
/// error.
pub fn evaluate_run(run: &[RankedList], gt: &GroundTruth, ks: &BTreeSet<usize>) -> Result<RetrievalReport> {
    if let Some(&0) = ks.iter().next() {
        return Err(Error::InvalidConfig("recall cutoff must be at least 1".into()));
    }
    let mut by_query: BTreeMap<&str, &RankedList> = BTreeMap::new();
    for list in run {
        if gt.get(list.query_id()).is_none() {
            return Err(Error::UnknownQuery(list.query_id().to_string()));
        }
        if by_query.insert(list.query_id(), list).is_some() {
            return Err(Error::DuplicateQuery(list.query_id().to_string()));
        }
    }

    let mut per_query = BTreeMap::new();
    let mut ap_sum = 0.0;
    let mut recall_sums: BTreeMap<usize, f64> = ks.iter().map(|&k| (k, 0.0)).collect();
    // BTreeMap iteration fixes the summation order by query id.
    for (query_id, relevant) in gt.iter() {
        let result = match by_query.get(query_id) {
            Some(list) => {
                for (k, sum) in recall_sums.iter_mut() {
                    *sum += recall_at_k(list, relevant, *k)?;
                }
                QueryResult {
                    average_precision: average_precision(list, relevant)?,
                    first_relevant_rank: list
                        .entries()
                        .iter()
                        .find(|e| relevant.contains(&e.doc_id))
                        .map(|e| e.rank),
                }
            }
            None => QueryResult {
                average_precision: 0.0,
                first_relevant_rank: None,
            },
        };
        ap_sum += result.average_precision;
        per_query.insert(query_id.to_string(), result);
    }

    let n = gt.len();
    let mean = |s: f64| if n == 0 { 0.0 } else { s / n as f64 };
    Ok(RetrievalReport {
        map_score: mean(ap_sum),
        recall_at: recall_sums.into_iter().map(|(k, s)| (k, mean(s))).collect(),
        per_query,
        num_queries: n,
    })
}

/// Convenience for parsing `1,10` style cutoff lists.
pub fn parse_ks(text: &str) -> Result<BTreeSet<usize>> {
    let mut out = BTreeSet::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let k: usize = part
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad cutoff {part:?}")))?;
        if k == 0 {
            return Err(Error::InvalidConfig("recall cutoff must be at least 1".into()));
        }
        out.insert(k);
    }
    Ok(out)
}
