//! Article catalog and image-to-article context resolution.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::ranked::RankedList;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Article {
    pub title: String,
    pub body: String,
}

/// Articles plus the mapping from every database image to its article.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ArticleCatalog {
    articles: BTreeMap<String, Article>,
    image_to_article: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct ArticleLine {
    article_id: String,
    #[serde(default)]
    title: String,
    body: String,
}

#[derive(Deserialize)]
struct MappingLine {
    image_id: String,
    article_id: String,
}

/// Context handed to the caption stage for one query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedContext {
    pub article_id: String,
    pub article_text: String,
    pub retrieved_image_id: String,
}

impl ArticleCatalog {
    pub fn new(
        articles: BTreeMap<String, Article>,
        image_to_article: BTreeMap<String, String>,
    ) -> Result<Self> {
        if let Some(missing) = image_to_article.values().find(|a| !articles.contains_key(*a)) {
            return Err(Error::DanglingArticle(missing.clone()));
        }
        Ok(ArticleCatalog {
            articles,
            image_to_article,
        })
    }

    /// Parses the articles file (`{"article_id", "title", "body"}`) and the
    /// mapping file (`{"image_id", "article_id"}`).
    pub fn from_jsonl(articles_text: &str, mapping_text: &str) -> Result<Self> {
        let mut articles = BTreeMap::new();
        for (i, line) in articles_text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let a: ArticleLine =
                serde_json::from_str(line).map_err(|e| Error::parse("articles", i + 1, e))?;
            if articles.contains_key(&a.article_id) {
                return Err(Error::parse("articles", i + 1, Error::DuplicateArticle(a.article_id)));
            }
            articles.insert(
                a.article_id,
                Article {
                    title: a.title,
                    body: a.body,
                },
            );
        }

        let mut mapping = BTreeMap::new();
        for (i, line) in mapping_text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let m: MappingLine =
                serde_json::from_str(line).map_err(|e| Error::parse("mapping", i + 1, e))?;
            if !articles.contains_key(&m.article_id) {
                return Err(Error::DanglingArticle(m.article_id));
            }
            if mapping.contains_key(&m.image_id) {
                return Err(Error::parse("mapping", i + 1, Error::DuplicateImage(m.image_id)));
            }
            mapping.insert(m.image_id, m.article_id);
        }
        Self::new(articles, mapping)
    }

    pub fn article(&self, article_id: &str) -> Option<&Article> {
        self.articles.get(article_id)
    }

    pub fn article_for_image(&self, image_id: &str) -> Option<&str> {
        self.image_to_article.get(image_id).map(String::as_str)
    }

    pub fn num_articles(&self) -> usize {
        self.articles.len()
    }

    pub fn num_images(&self) -> usize {
        self.image_to_article.len()
    }

    pub fn images(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.image_to_article.iter().map(|(i, a)| (i.as_str(), a.as_str()))
    }
}

pub fn load_catalog(articles_path: impl AsRef<Path>, mapping_path: impl AsRef<Path>) -> Result<ArticleCatalog> {
    let (ap, mp) = (articles_path.as_ref(), mapping_path.as_ref());
    let articles = fs::read_to_string(ap).map_err(|e| Error::io(ap, e))?;
    let mapping = fs::read_to_string(mp).map_err(|e| Error::io(mp, e))?;
    ArticleCatalog::from_jsonl(&articles, &mapping)
}

/// Resolves the article of the rank-1 image. Only the top entry is read.
pub fn resolve_context(ranked: &RankedList, catalog: &ArticleCatalog) -> Result<ResolvedContext> {
    let top = ranked
        .top()
        .ok_or_else(|| Error::EmptyList(ranked.query_id().to_string()))?;
    let article_id = catalog
        .article_for_image(&top.doc_id)
        .ok_or_else(|| Error::UnmappedImage(top.doc_id.clone()))?;
    let article = catalog
        .article(article_id)
        .ok_or_else(|| Error::DanglingArticle(article_id.to_string()))?;
    Ok(ResolvedContext {
        article_id: article_id.to_string(),
        article_text: article.body.clone(),
        retrieved_image_id: top.doc_id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranked::Direction;

    const ARTICLES: &str = r#"{"article_id":"art3","title":"Cup day","body":"The favourite won."}"#;

    #[test]
    fn minimal_catalog() {
        let mapping = "{\"image_id\":\"img1\",\"article_id\":\"art3\"}\n{\"image_id\":\"img2\",\"article_id\":\"art3\"}\n";
        let c = ArticleCatalog::from_jsonl(ARTICLES, mapping).unwrap();
        assert_eq!(c.num_articles(), 1);
        assert_eq!(c.num_images(), 2);
    }

    #[test]
    fn dangling_reference() {
        let err = ArticleCatalog::from_jsonl(ARTICLES, r#"{"image_id":"i","article_id":"z"}"#).unwrap_err();
        assert_eq!(err.to_string(), "dangling article_id: z");
    }

    #[test]
    fn duplicate_image() {
        let mapping = "{\"image_id\":\"i\",\"article_id\":\"art3\"}\n{\"image_id\":\"i\",\"article_id\":\"art3\"}";
        let err = ArticleCatalog::from_jsonl(ARTICLES, mapping).unwrap_err().to_string();
        assert!(err.contains("duplicate image_id: i"), "{err}");
    }

    #[test]
    fn duplicate_article() {
        let articles = format!("{ARTICLES}\n{ARTICLES}");
        assert!(ArticleCatalog::from_jsonl(&articles, "").is_err());
    }

    #[test]
    fn resolve_rank_one() {
        let c = ArticleCatalog::from_jsonl(ARTICLES, r#"{"image_id":"img7","article_id":"art3"}"#).unwrap();
        let ranked = RankedList::from_scores("q", "fused", Direction::AscendingBetter, vec![("img7".into(), 0.1)]).unwrap();
        let ctx = resolve_context(&ranked, &c).unwrap();
        assert_eq!(ctx.article_id, "art3");
        assert_eq!(ctx.article_text, "The favourite won.");
        assert_eq!(ctx.retrieved_image_id, "img7");

        let unmapped = RankedList::from_scores("q", "fused", Direction::AscendingBetter, vec![("img8".into(), 0.1)]).unwrap();
        assert!(matches!(resolve_context(&unmapped, &c), Err(Error::UnmappedImage(_))));
        let empty = RankedList::new("q", "fused", Direction::AscendingBetter, vec![]).unwrap();
        assert!(resolve_context(&empty, &c).is_err());
    }
}
