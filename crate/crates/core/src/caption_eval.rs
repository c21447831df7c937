//! Caption quality metrics: CIDEr-D against references and CLIPScore
//! against image embeddings.

use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

pub const CIDER_MAX_N: usize = 4;
pub const CIDER_SIGMA: f64 = 6.0;
const CIDER_SCALE: f64 = 10.0;
const CLIPSCORE_SCALE: f64 = 2.5;

/// Lowercases, drops everything that is not a letter, digit or whitespace,
/// and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub query_id: String,
    #[serde(alias = "caption")]
    pub candidate: String,
    #[serde(default)]
    pub references: Vec<String>,
}

#[derive(Deserialize)]
struct ReferenceLine {
    query_id: String,
    references: Vec<String>,
}

impl CaptionRecord {
    pub fn new(query_id: impl Into<String>, candidate: impl Into<String>, references: Vec<String>) -> Self {
        CaptionRecord {
            query_id: query_id.into(),
            candidate: candidate.into(),
            references,
        }
    }
}

/// Parses caption lines. Each line carries `query_id` and `candidate` (or
/// `caption`, as written by the caption stage); references come either from
/// the line itself or from a separate `{"query_id", "references"}` file.
pub fn parse_caption_records(captions: &str, references: Option<&str>) -> Result<Vec<CaptionRecord>> {
    let mut records = Vec::new();
    for (i, line) in captions.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: CaptionRecord =
            serde_json::from_str(line).map_err(|e| Error::parse("captions", i + 1, e))?;
        records.push(record);
    }

    if let Some(text) = references {
        let mut refs: HashMap<String, Vec<String>> = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ReferenceLine =
                serde_json::from_str(line).map_err(|e| Error::parse("references", i + 1, e))?;
            if refs.insert(parsed.query_id.clone(), parsed.references).is_some() {
                return Err(Error::parse("references", i + 1, Error::DuplicateQuery(parsed.query_id)));
            }
        }
        for record in &mut records {
            if let Some(r) = refs.get(&record.query_id) {
                record.references = r.clone();
            }
        }
    }
    Ok(records)
}

/// Per-n term-frequency maps; n-grams are tokens joined by a space.
type NgramCounts = Vec<BTreeMap<String, f64>>;

fn ngram_counts(tokens: &[String], max_n: usize) -> NgramCounts {
    (1..=max_n)
        .map(|n| {
            let mut counts = BTreeMap::new();
            for window in tokens.windows(n) {
                *counts.entry(window.join(" ")).or_insert(0.0) += 1.0;
            }
            counts
        })
        .collect()
}

struct TfIdf {
    vectors: Vec<BTreeMap<String, f64>>,
    norms: Vec<f64>,
    length: f64,
}

struct CiderCorpus {
    document_frequency: HashMap<String, f64>,
    log_corpus_size: f64,
}

impl CiderCorpus {
    fn tfidf(&self, counts: NgramCounts, length: usize) -> TfIdf {
        let mut norms = Vec::with_capacity(counts.len());
        let vectors = counts
            .into_iter()
            .map(|per_n| {
                let v: BTreeMap<String, f64> = per_n
                    .into_iter()
                    .map(|(gram, tf)| {
                        let df = self.document_frequency.get(&gram).copied().unwrap_or(0.0);
                        let idf = self.log_corpus_size - df.max(1.0).ln();
                        (gram, tf * idf)
                    })
                    .collect();
                norms.push(v.values().map(|x| x * x).sum::<f64>().sqrt());
                v
            })
            .collect();
        TfIdf {
            vectors,
            norms,
            length: length as f64,
        }
    }
}

fn clipped_similarity(cand: &TfIdf, reference: &TfIdf, sigma: f64) -> f64 {
    let delta = cand.length - reference.length;
    let penalty = (-(delta * delta) / (2.0 * sigma * sigma)).exp();
    let per_n: Vec<f64> = cand
        .vectors
        .iter()
        .zip(&reference.vectors)
        .zip(cand.norms.iter().zip(&reference.norms))
        .map(|((c, r), (&nc, &nr))| {
            if nc == 0.0 || nr == 0.0 {
                return 0.0;
            }
            let dot: f64 = c
                .iter()
                .filter_map(|(gram, &cv)| r.get(gram).map(|&rv| cv.min(rv) * rv))
                .sum();
            (dot / (nc * nr)).clamp(0.0, 1.0) * penalty
        })
        .collect();
    per_n.iter().sum::<f64>() / per_n.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct CiderScores {
    pub per_query: BTreeMap<String, f64>,
    pub corpus: f64,
}

/// CIDEr-D over a record collection.
///
/// Document frequencies are counted over each record's reference set
/// (an n-gram counts once per record), with
/// `idf = ln(N) - ln(max(1, df))` for `N` records. Candidate n-gram weights
/// are clipped at the reference weight, the similarity carries a gaussian
/// length penalty with width `sigma`, and scores are scaled by 10.
pub fn cider_d(records: &[CaptionRecord], max_n: usize, sigma: f64) -> Result<CiderScores> {
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if max_n == 0 || sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::InvalidConfig(format!("bad CIDEr-D parameters n={max_n} sigma={sigma}")));
    }

    let mut seen = HashSet::new();
    let mut tokenized = Vec::with_capacity(records.len());
    for record in records {
        if !seen.insert(record.query_id.as_str()) {
            return Err(Error::DuplicateQuery(record.query_id.clone()));
        }
        if record.references.is_empty() {
            return Err(Error::NoReferences(record.query_id.clone()));
        }
        let cand = tokenize(&record.candidate);
        if cand.is_empty() {
            return Err(Error::EmptyCandidate(record.query_id.clone()));
        }
        let refs: Vec<Vec<String>> = record.references.iter().map(|r| tokenize(r)).collect();
        tokenized.push((cand, refs));
    }

    // Sequential corpus pass.
    let mut document_frequency: HashMap<String, f64> = HashMap::new();
    for (_, refs) in &tokenized {
        let mut grams: HashSet<String> = HashSet::new();
        for r in refs {
            for per_n in ngram_counts(r, max_n) {
                grams.extend(per_n.into_keys());
            }
        }
        for gram in grams {
            *document_frequency.entry(gram).or_insert(0.0) += 1.0;
        }
    }
    let corpus = CiderCorpus {
        document_frequency,
        log_corpus_size: (records.len() as f64).ln(),
    };

    let scores: Vec<f64> = tokenized
        .par_iter()
        .map(|(cand, refs)| {
            let c = corpus.tfidf(ngram_counts(cand, max_n), cand.len());
            let total: f64 = refs
                .iter()
                .map(|r| clipped_similarity(&c, &corpus.tfidf(ngram_counts(r, max_n), r.len()), sigma))
                .sum();
            (CIDER_SCALE * total / refs.len() as f64).clamp(0.0, CIDER_SCALE)
        })
        .collect();

    let per_query: BTreeMap<String, f64> = records
        .iter()
        .zip(scores)
        .map(|(r, s)| (r.query_id.clone(), s))
        .collect();
    let corpus_score = per_query.values().sum::<f64>() / per_query.len() as f64;
    Ok(CiderScores {
        per_query,
        corpus: corpus_score,
    })
}

/// `2.5 * max(cos(caption, image), 0)`.
pub fn clipscore(caption_embedding: &[f32], image_embedding: &[f32]) -> Result<f64> {
    if caption_embedding.len() != image_embedding.len() {
        return Err(Error::DimensionMismatch {
            expected: caption_embedding.len(),
            actual: image_embedding.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in caption_embedding.iter().zip(image_embedding) {
        let (a, b) = (f64::from(a), f64::from(b));
        dot += a * b;
        na += a * a;
        nb += b * b;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let cos = dot / (na.sqrt() * nb.sqrt());
    Ok(CLIPSCORE_SCALE * cos.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CaptionScores {
    pub cider: f64,
    pub clipscore: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaptionReport {
    pub cider: f64,
    pub clipscore: Option<f64>,
    pub num_captions: usize,
    pub per_query: BTreeMap<String, CaptionScores>,
}

/// Caption-text and image embeddings, rows keyed by query id.
pub struct ClipInputs<'a> {
    pub captions: &'a EmbeddingMatrix,
    pub images: &'a EmbeddingMatrix,
}

fn row_index(m: &EmbeddingMatrix) -> HashMap<&str, usize> {
    m.ids().iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
}

pub fn evaluate_captions(records: &[CaptionRecord], clip: Option<ClipInputs<'_>>) -> Result<CaptionReport> {
    let cider = cider_d(records, CIDER_MAX_N, CIDER_SIGMA)?;

    let clip_scores: Option<BTreeMap<String, f64>> = match clip {
        None => None,
        Some(inputs) => {
            let caption_rows = row_index(inputs.captions);
            let image_rows = row_index(inputs.images);
            let mut out = BTreeMap::new();
            for record in records {
                let q = &record.query_id;
                let c = caption_rows
                    .get(q.as_str())
                    .ok_or_else(|| Error::UnknownQuery(format!("{q} (caption embeddings)")))?;
                let i = image_rows
                    .get(q.as_str())
                    .ok_or_else(|| Error::UnknownQuery(format!("{q} (image embeddings)")))?;
                out.insert(q.clone(), clipscore(inputs.captions.row(*c), inputs.images.row(*i))?);
            }
            Some(out)
        }
    };

    let per_query = cider
        .per_query
        .iter()
        .map(|(q, &c)| {
            (
                q.clone(),
                CaptionScores {
                    cider: c,
                    clipscore: clip_scores.as_ref().map(|m| m[q]),
                },
            )
        })
        .collect();
    let clipscore = clip_scores.map(|m| m.values().sum::<f64>() / m.len() as f64);
    Ok(CaptionReport {
        cider: cider.corpus,
        clipscore,
        num_captions: records.len(),
        per_query,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(q: &str, cand: &str, refs: &[&str]) -> CaptionRecord {
        CaptionRecord::new(q, cand, refs.iter().map(|r| r.to_string()).collect())
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("Hello, World!"), ["hello", "world"]);
        assert_eq!(tokenize("a  b\tc"), ["a", "b", "c"]);
        assert_eq!(tokenize("Melbourne Cup 2015."), ["melbourne", "cup", "2015"]);
        assert!(tokenize(" ?! ").is_empty());
    }

    #[test]
    fn verbatim_candidate_in_two_record_corpus() {
        // Every n-gram of record 1 has df = 1, idf = ln 2, so the clipped
        // cosine is 1 for each n that has n-grams.
        let records = [
            record("q1", "A dog runs on the grass.", &["a dog runs on the grass"]),
            record("q2", "City skyline, night", &["Tall buildings glow at dusk"]),
        ];
        let scores = cider_d(&records, 4, 6.0).unwrap();
        assert!((scores.per_query["q1"] - 10.0).abs() < 1e-9);
        assert_eq!(scores.per_query["q2"], 0.0);

        // Three tokens: n = 4 has no n-grams and contributes 0 to the mean.
        let records = [
            record("q1", "Dog runs fast", &["dog runs fast"]),
            record("q2", "City skyline, night", &["Tall buildings glow at dusk"]),
        ];
        assert!((cider_d(&records, 4, 6.0).unwrap().per_query["q1"] - 7.5).abs() < 1e-9);
    }

    #[test]
    fn matches_independent_oracle() {
        // Values from an independent dictionary-based implementation of the
        // same formula.
        let records = [
            record("a", "A brown dog runs fast", &["a dog runs on the grass", "The brown dog is running"]),
            record("b", "People walk in the city", &["Crowds walk through the city", "people in a busy city street"]),
            record(
                "c",
                "A jockey celebrates winning the Melbourne Cup 2015",
                &["Jockey Michelle Payne celebrates after winning the 2015 Melbourne Cup", "Payne wins the Melbourne Cup"],
            ),
        ];
        let scores = cider_d(&records, 4, 6.0).unwrap();
        assert!((scores.per_query["a"] - 1.8394538566454488).abs() < 1e-9);
        assert!((scores.per_query["b"] - 1.7534205994909264).abs() < 1e-9);
        assert!((scores.per_query["c"] - 2.3749086844555083).abs() < 1e-9);
    }

    #[test]
    fn zero_overlap_scores_zero() {
        let records = [
            record("q1", "completely unrelated words", &["a dog runs"]),
            record("q2", "something", &["another thing"]),
        ];
        assert_eq!(cider_d(&records, 4, 6.0).unwrap().per_query["q1"], 0.0);
    }

    #[test]
    fn order_independent() {
        let mut records = vec![
            record("a", "A brown dog runs fast", &["a dog runs on the grass"]),
            record("b", "People walk in the city", &["Crowds walk through the city"]),
            record("c", "the dog in the city", &["a dog in a city"]),
        ];
        let forward = cider_d(&records, 4, 6.0).unwrap();
        records.reverse();
        assert_eq!(cider_d(&records, 4, 6.0).unwrap(), forward);
    }

    #[test]
    fn cider_errors() {
        assert!(matches!(cider_d(&[], 4, 6.0), Err(Error::EmptyCorpus)));
        assert!(matches!(cider_d(&[record("q", "!!", &["x"])], 4, 6.0), Err(Error::EmptyCandidate(_))));
        assert!(matches!(cider_d(&[record("q", "x", &[])], 4, 6.0), Err(Error::NoReferences(_))));
        let dup = [record("q", "x", &["x"]), record("q", "y", &["y"])];
        assert!(matches!(cider_d(&dup, 4, 6.0), Err(Error::DuplicateQuery(_))));
    }

    #[test]
    fn clipscore_cases() {
        assert!((clipscore(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 2.5).abs() < 1e-12);
        assert_eq!(clipscore(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(clipscore(&[1.0, 1.0], &[-1.0, -1.0]).unwrap(), 0.0);
        assert!(matches!(clipscore(&[0.0, 0.0], &[1.0, 1.0]), Err(Error::ZeroNorm)));
        assert!(clipscore(&[1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn caption_file_with_separate_references() {
        let captions = "{\"query_id\":\"q1\",\"caption\":\"a dog\",\"article_id\":\"x\"}\n";
        let refs = "{\"query_id\":\"q1\",\"references\":[\"the dog\"]}\n";
        let records = parse_caption_records(captions, Some(refs)).unwrap();
        assert_eq!(records, vec![record("q1", "a dog", &["the dog"])]);
        let inline = "{\"query_id\":\"q1\",\"candidate\":\"a dog\",\"references\":[\"r\"]}";
        assert_eq!(parse_caption_records(inline, None).unwrap()[0].references, ["r"]);
    }

    #[test]
    fn report_with_clip_inputs() {
        let records = [record("q1", "a dog", &["a dog"]), record("q2", "a cat", &["the cat"])];
        let caps = EmbeddingMatrix::new("text", 2, vec!["q2".into(), "q1".into()], vec![1.0, 0.0, 1.0, 1.0], false).unwrap();
        let imgs = EmbeddingMatrix::new("img", 2, vec!["q1".into(), "q2".into()], vec![1.0, 1.0, 0.0, 1.0], false).unwrap();
        let report = evaluate_captions(&records, Some(ClipInputs { captions: &caps, images: &imgs })).unwrap();
        assert!((report.per_query["q1"].clipscore.unwrap() - 2.5).abs() < 1e-12);
        assert_eq!(report.per_query["q2"].clipscore.unwrap(), 0.0);
        assert!((report.clipscore.unwrap() - 1.25).abs() < 1e-12);
        assert_eq!(report.num_captions, 2);

        let missing = EmbeddingMatrix::new("img", 2, vec!["q1".into()], vec![1.0, 1.0], false).unwrap();
        assert!(evaluate_captions(&records, Some(ClipInputs { captions: &caps, images: &missing })).is_err());
        assert_eq!(evaluate_captions(&records, None).unwrap().clipscore, None);
    }
}
