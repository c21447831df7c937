//! Batch caption stage: resolve context, build request, generate, clean up.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::client::CaptionGenerator;
use super::postprocess::postprocess;
use super::prompt::PromptTemplate;
use super::request::{build_request, Decoding, DEFAULT_ARTICLE_BUDGET};
use crate::catalog::{resolve_context, ArticleCatalog};
use crate::error::{Error, Result};
use crate::ranked::RankedList;

/// A query id and the location of its image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryImage {
    pub query_id: String,
    pub image_ref: String,
}

/// One line of the captions output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedCaption {
    pub query_id: String,
    pub caption: String,
    pub article_id: String,
    pub retrieved_image_id: String,
    pub truncated: bool,
}

/// One line of the failure log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionFailure {
    pub query_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CaptionStageOutput {
    /// Successful captions, in input order.
    pub captions: Vec<GeneratedCaption>,
    /// Per-query failures, in input order.
    pub failures: Vec<CaptionFailure>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageOptions {
    pub decoding: Decoding,
    pub article_budget: usize,
    pub max_concurrent: usize,
}

impl Default for StageOptions {
    fn default() -> Self {
        StageOptions {
            decoding: Decoding::default(),
            article_budget: DEFAULT_ARTICLE_BUDGET,
            max_concurrent: 1,
        }
    }
}

fn caption_one(
    query: &QueryImage,
    run: &HashMap<&str, &RankedList>,
    catalog: &ArticleCatalog,
    template: &PromptTemplate,
    generator: &dyn CaptionGenerator,
    options: &StageOptions,
) -> Result<GeneratedCaption> {
    let ranked = run
        .get(query.query_id.as_str())
        .ok_or_else(|| Error::UnknownQuery(format!("{} has no ranked list", query.query_id)))?;
    let context = resolve_context(ranked, catalog)?;
    let request = build_request(
        query.query_id.clone(),
        query.image_ref.clone(),
        &context.article_text,
        template,
        options.decoding,
        options.article_budget,
    )?;
    let generation = generator.generate(&request)?;
    Ok(GeneratedCaption {
        query_id: query.query_id.clone(),
        caption: postprocess(&generation.text)?,
        article_id: context.article_id,
        retrieved_image_id: context.retrieved_image_id,
        truncated: request.truncated,
    })
}

/// Captions every query with up to `max_concurrent` generations in flight.
/// A failing query is logged and skipped; it never aborts the batch.
pub fn run_caption_stage(
    queries: &[QueryImage],
    run: &[RankedList],
    catalog: &ArticleCatalog,
    template: &PromptTemplate,
    generator: &dyn CaptionGenerator,
    options: &StageOptions,
) -> CaptionStageOutput {
    let by_query: HashMap<&str, &RankedList> = run.iter().map(|l| (l.query_id(), l)).collect();
    let next = AtomicUsize::new(0);
    let failures: Mutex<Vec<(usize, CaptionFailure)>> = Mutex::new(Vec::new());
    let workers = options.max_concurrent.clamp(1, queries.len().max(1));

    let mut done: Vec<(usize, GeneratedCaption)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut local = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some(query) = queries.get(i) else { break };
                        match caption_one(query, &by_query, catalog, template, generator, options) {
                            Ok(caption) => local.push((i, caption)),
                            Err(e) => {
                                log::warn!("query {}: {e}", query.query_id);
                                failures.lock().expect("failure log poisoned").push((
                                    i,
                                    CaptionFailure {
                                        query_id: query.query_id.clone(),
                                        error: e.to_string(),
                                    },
                                ));
                            }
                        }
                    }
                    local
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("caption worker panicked"))
            .collect()
    });

    done.sort_by_key(|(i, _)| *i);
    let mut failures = failures.into_inner().expect("failure log poisoned");
    failures.sort_by_key(|(i, _)| *i);
    CaptionStageOutput {
        captions: done.into_iter().map(|(_, c)| c).collect(),
        failures: failures.into_iter().map(|(_, f)| f).collect(),
    }
}
