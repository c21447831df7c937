//! Late fusion of per-model ranked lists.
//!
//! Two methods are provided. The weighted ensemble sums per-model L2
//! distances, `S(c) = sum_m w_m * d_m(q, c)`, lowest wins. Reciprocal rank
//! fusion sums `1 / (k + rank)` over every list that contains a document,
//! highest wins. Both break exact score ties by ascending doc id.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ranked::{Direction, RankedList, FUSED_MODEL_ID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FusionMethod {
    #[serde(rename = "we")]
    WeightedEnsemble,
    #[serde(rename = "rrf")]
    Rrf,
}

/// Fusion parameters, as read from the fusion config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    pub method: FusionMethod,
    #[serde(default)]
    pub weights: BTreeMap<String, f64>,
    #[serde(default)]
    pub rrf_k: f64,
    /// Entries consumed per model; `None` consumes whole lists.
    #[serde(default)]
    pub depth: Option<usize>,
    #[serde(default)]
    pub per_model_minmax: bool,
}

impl FusionConfig {
    pub fn weighted(weights: BTreeMap<String, f64>) -> Self {
        FusionConfig {
            method: FusionMethod::WeightedEnsemble,
            weights,
            rrf_k: 0.0,
            depth: None,
            per_model_minmax: false,
        }
    }

    pub fn rrf(k: f64) -> Self {
        FusionConfig {
            method: FusionMethod::Rrf,
            weights: BTreeMap::new(),
            rrf_k: k,
            depth: None,
            per_model_minmax: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: FusionConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.rrf_k.is_finite() || self.rrf_k < 0.0 {
            return Err(Error::InvalidConfig(format!("rrf_k must be finite and >= 0, got {}", self.rrf_k)));
        }
        if self.depth == Some(0) {
            return Err(Error::InvalidConfig("depth must be at least 1".into()));
        }
        // RRF is unweighted; the weight map only matters for the ensemble.
        if self.method == FusionMethod::WeightedEnsemble {
            check_weights(&self.weights)?;
        }
        Ok(())
    }

    fn effective_depth(&self) -> usize {
        self.depth.unwrap_or(usize::MAX)
    }
}

fn check_weights(weights: &BTreeMap<String, f64>) -> Result<f64> {
    let mut sum = 0.0;
    for (model, &w) in weights {
        if !w.is_finite() {
            return Err(Error::InvalidWeights(format!("non-finite weight for {model}")));
        }
        if w < 0.0 {
            return Err(Error::InvalidWeights(format!("negative weight for {model}: {w}")));
        }
        sum += w;
    }
    if sum <= 0.0 {
        return Err(Error::InvalidWeights("all-zero weights".into()));
    }
    Ok(sum)
}

/// Scales weights so they sum to one.
pub fn normalize_weights(raw: &BTreeMap<String, f64>) -> Result<BTreeMap<String, f64>> {
    let sum = check_weights(raw)?;
    Ok(raw.iter().map(|(m, &w)| (m.clone(), w / sum)).collect())
}

fn shared_query_id<'a>(lists: impl IntoIterator<Item = &'a RankedList>) -> Result<String> {
    let mut query: Option<&str> = None;
    for list in lists {
        match query {
            None => query = Some(list.query_id()),
            Some(q) if q != list.query_id() => {
                return Err(Error::MismatchedQuery(q.to_string(), list.query_id().to_string()))
            }
            Some(_) => {}
        }
    }
    query
        .map(str::to_string)
        .ok_or_else(|| Error::EmptyList("<none>".into()))
}

/// Weighted sum of per-model distances over the union of each model's
/// top-`depth` candidates.
///
/// A candidate missing from a model's truncated list is scored with that
/// model's distance at the truncation boundary, a lower bound on its true
/// distance. Models with zero weight neither contribute candidates nor
/// score.
pub fn weighted_ensemble(
    lists: &BTreeMap<String, RankedList>,
    weights: &BTreeMap<String, f64>,
    depth: usize,
) -> Result<RankedList> {
    if depth == 0 {
        return Err(Error::InvalidConfig("depth must be at least 1".into()));
    }
    let query_id = shared_query_id(lists.values())?;
    for (model, list) in lists {
        if list.is_empty() {
            return Err(Error::EmptyList(model.clone()));
        }
        if list.direction() != Direction::AscendingBetter {
            return Err(Error::InvalidRankedList(format!(
                "weighted ensemble needs distance lists, {model} is {}",
                list.direction()
            )));
        }
        if !weights.contains_key(model) {
            return Err(Error::UnknownModel(model.clone()));
        }
    }
    if let Some(model) = weights.keys().find(|m| !lists.contains_key(*m)) {
        return Err(Error::UnknownModel(model.clone()));
    }
    check_weights(weights)?;

    struct Truncated<'a> {
        weight: f64,
        distances: HashMap<&'a str, f64>,
        boundary: f64,
    }

    let active: Vec<Truncated<'_>> = lists
        .iter()
        .filter(|(model, _)| weights[*model] > 0.0)
        .map(|(model, list)| {
            let top = &list.entries()[..depth.min(list.len())];
            Truncated {
                weight: weights[model],
                distances: top.iter().map(|e| (e.doc_id.as_str(), e.score)).collect(),
                boundary: top[top.len() - 1].score,
            }
        })
        .collect();

    let mut candidates: Vec<&str> = active
        .iter()
        .flat_map(|t| t.distances.keys().copied())
        .collect();
    candidates.sort_unstable();
    candidates.dedup();

    let scored = candidates
        .into_iter()
        .map(|doc| {
            let score = active
                .iter()
                .map(|t| t.weight * t.distances.get(doc).copied().unwrap_or(t.boundary))
                .sum();
            (doc.to_string(), score)
        })
        .collect();
    RankedList::from_scores(query_id, FUSED_MODEL_ID, Direction::AscendingBetter, scored)
}

/// Reciprocal rank fusion with constant `k`; absent documents contribute 0.
///
/// Each document's contributions are summed best rank first, so the result
/// does not depend on the order of `lists`.
pub fn rrf(lists: &[RankedList], k: f64) -> Result<RankedList> {
    if lists.is_empty() {
        return Err(Error::EmptyList("<none>".into()));
    }
    if !k.is_finite() || k < 0.0 {
        return Err(Error::InvalidConfig(format!("rrf k must be finite and >= 0, got {k}")));
    }
    let query_id = shared_query_id(lists)?;

    let mut ranks: HashMap<&str, Vec<usize>> = HashMap::new();
    for list in lists {
        for entry in list.entries() {
            ranks.entry(entry.doc_id.as_str()).or_default().push(entry.rank);
        }
    }
    let scored = ranks
        .into_iter()
        .map(|(doc, mut r)| {
            r.sort_unstable();
            let score = r.iter().map(|&rank| 1.0 / (k + rank as f64)).sum();
            (doc.to_string(), score)
        })
        .collect();
    RankedList::from_scores(query_id, FUSED_MODEL_ID, Direction::DescendingBetter, scored)
}

/// Affinely maps a list's scores onto `[0, 1]`; a constant list maps to 0.
pub fn minmax_normalize(list: &RankedList) -> Result<RankedList> {
    let (lo, hi) = list
        .entries()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| (lo.min(e.score), hi.max(e.score)));
    let span = hi - lo;
    list.map_scores(|s| if span > 0.0 { (s - lo) / span } else { 0.0 })
}

/// Fuses one query's per-model lists according to `config`.
pub fn fuse(config: &FusionConfig, lists: &BTreeMap<String, RankedList>) -> Result<RankedList> {
    config.validate()?;
    let depth = config.effective_depth();
    match config.method {
        FusionMethod::WeightedEnsemble => {
            let weights = normalize_weights(&config.weights)?;
            if config.per_model_minmax {
                let scaled = lists
                    .iter()
                    .map(|(m, l)| Ok((m.clone(), minmax_normalize(&l.truncated(depth))?)))
                    .collect::<Result<BTreeMap<_, _>>>()?;
                weighted_ensemble(&scaled, &weights, depth)
            } else {
                weighted_ensemble(lists, &weights, depth)
            }
        }
        FusionMethod::Rrf => {
            let truncated: Vec<RankedList> = lists.values().map(|l| l.truncated(depth)).collect();
            rrf(&truncated, config.rrf_k)
        }
    }
}

/// Groups a mixed run (any number of models and queries) by query, then
/// model, and fuses each query. Output is ordered by query id.
pub fn fuse_run(config: &FusionConfig, run: Vec<RankedList>) -> Result<Vec<RankedList>> {
    let mut by_query: BTreeMap<String, BTreeMap<String, RankedList>> = BTreeMap::new();
    for list in run {
        let models = by_query.entry(list.query_id().to_string()).or_default();
        let model = list.model_id().to_string();
        if models.contains_key(&model) {
            return Err(Error::DuplicateQuery(format!("{} (model {model})", list.query_id())));
        }
        models.insert(model, list);
    }
    by_query.values().map(|lists| fuse(config, lists)).collect()
}
