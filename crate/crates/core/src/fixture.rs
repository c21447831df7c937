//! Seeded synthetic fixture: ten database images, ten queries, three
//! encoders, five articles, and every config file the pipeline reads.
//!
//! Each query embedding is its ground-truth image's embedding plus small
//! noise, so exact search ranks the ground-truth image first for every
//! encoder and fused retrieval scores mAP = 1.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::embedding::{write_embeddings, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::knn::top_k;

pub const NUM_IMAGES: usize = 10;
pub const MODELS: [(&str, usize); 3] = [("clip", 16), ("siglip", 12), ("dinov2", 24)];
const QUERY_NOISE: f32 = 0.01;
const CLIP_DIM: usize = 8;

/// 1x1 grey PNG used as every query image.
pub const PLACEHOLDER_PNG: [u8; 69] = [
    0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48, 0x44, 0x52,
    0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x02, 0x00, 0x00, 0x00, 0x90, 0x77, 0x53,
    0xde, 0x00, 0x00, 0x00, 0x0c, 0x49, 0x44, 0x41, 0x54, 0x78, 0x9c, 0x63, 0x68, 0x68, 0x68, 0x00,
    0x00, 0x03, 0x04, 0x01, 0x81, 0x4b, 0xd3, 0xd2, 0x10, 0x00, 0x00, 0x00, 0x00, 0x49, 0x45, 0x4e,
    0x44, 0xae, 0x42, 0x60, 0x82,
];

const STORIES: [(&str, &str); 5] = [
    (
        "Melbourne Cup won by outsider",
        "Jockey Michelle Payne rode Prince of Penzance to victory in the Melbourne Cup at Flemington, becoming the first woman to win the race.",
    ),
    (
        "Floods close river crossings",
        "Heavy rain swelled the river overnight and emergency crews closed three bridges while residents moved sandbags along the flooded streets.",
    ),
    (
        "City marathon draws record field",
        "More than forty thousand runners crossed the harbour bridge during the city marathon as crowds lined the route to cheer them on.",
    ),
    (
        "Orchestra opens new concert hall",
        "The national orchestra performed the opening concert in the new hall, with the conductor praising the acoustics before a sold out audience.",
    ),
    (
        "Wildfire crews hold the ridge line",
        "Firefighters held the ridge line through the night as water bombing helicopters slowed the wildfire burning in the national park.",
    ),
];

fn jsonl<I: IntoIterator<Item = serde_json::Value>>(values: I) -> String {
    values.into_iter().map(|v| format!("{v}\n")).collect()
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn image_id(i: usize) -> String {
    format!("img{i:02}")
}

fn query_id(i: usize) -> String {
    format!("q{i:02}")
}

fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<f32> {
    (0..n * dim)
        .map(|_| {
            // Box-Muller keeps the fixture independent of rand_distr.
            let u1: f32 = rng.gen_range(f32::EPSILON..1.0);
            let u2: f32 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (std::f32::consts::TAU * u2).cos()
        })
        .collect()
}

/// Writes the fixture into `dir`, which must exist.
pub fn make_fixture(dir: &Path, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images: Vec<String> = (0..NUM_IMAGES).map(image_id).collect();
    let queries: Vec<String> = (0..NUM_IMAGES).map(query_id).collect();

    for (model, dim) in MODELS {
        let db_rows = gaussian_rows(&mut rng, NUM_IMAGES, dim);
        let query_rows: Vec<f32> = db_rows
            .iter()
            .map(|&v| v + rng.gen_range(-QUERY_NOISE..QUERY_NOISE))
            .collect();
        let db = EmbeddingMatrix::new(model, dim, images.clone(), db_rows, false)?;
        let q = EmbeddingMatrix::new(model, dim, queries.clone(), query_rows, false)?;
        for i in 0..NUM_IMAGES {
            let hit = top_k(q.row(i), &db, 1)?;
            if hit.entries()[0].doc_id != images[i] {
                return Err(Error::InvalidConfig(format!(
                    "seed {seed}: {model} query {} does not retrieve its own image",
                    queries[i]
                )));
            }
        }
        write_embeddings(&db, dir.join(format!("db_{model}.zse")))?;
        write_embeddings(&q, dir.join(format!("queries_{model}.zse")))?;
    }

    // Two images per article.
    let article_of = |i: usize| format!("art{}", i / 2);
    write(
        &dir.join("articles.jsonl"),
        jsonl(STORIES.iter().enumerate().map(|(a, (title, body))| {
            json!({"article_id": format!("art{a}"), "title": title, "body": body})
        })),
    )?;
    write(
        &dir.join("mapping.jsonl"),
        jsonl((0..NUM_IMAGES).map(|i| json!({"image_id": image_id(i), "article_id": article_of(i)}))),
    )?;
    write(
        &dir.join("ground_truth.jsonl"),
        jsonl((0..NUM_IMAGES).map(|i| json!({"query_id": query_id(i), "relevant": [image_id(i)]}))),
    )?;

    let image_dir = dir.join("images");
    fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;
    for q in &queries {
        write(&image_dir.join(format!("{q}.png")), PLACEHOLDER_PNG)?;
    }
    write(
        &dir.join("queries.jsonl"),
        jsonl(queries.iter().map(|q| json!({"query_id": q, "image_ref": format!("images/{q}.png")}))),
    )?;
    write(
        &dir.join("references.jsonl"),
        jsonl((0..NUM_IMAGES).map(|i| {
            let (title, body) = STORIES[i / 2];
            let first_sentence = body.split(',').next().unwrap_or(body);
            json!({"query_id": query_id(i), "references": [title, first_sentence]})
        })),
    )?;

    // Caption-text and image embeddings for CLIPScore; caption rows are
    // perturbed copies of the image rows.
    let image_rows = gaussian_rows(&mut rng, NUM_IMAGES, CLIP_DIM);
    let caption_rows: Vec<f32> = image_rows
        .iter()
        .map(|&v| v + rng.gen_range(-0.5f32..0.5))
        .collect();
    write_embeddings(
        &EmbeddingMatrix::new("clip-image", CLIP_DIM, queries.clone(), image_rows, false)?,
        dir.join("clip_images.zse"),
    )?;
    write_embeddings(
        &EmbeddingMatrix::new("clip-text", CLIP_DIM, queries.clone(), caption_rows, false)?,
        dir.join("clip_captions.zse"),
    )?;

    let pretty = |v: serde_json::Value| format!("{}\n", serde_json::to_string_pretty(&v).expect("json"));
    write(
        &dir.join("fusion.json"),
        pretty(json!({
            "method": "we",
            "weights": {"dinov2": 0.5, "siglip": 0.3, "clip": 0.3},
            "rrf_k": 0,
            "per_model_minmax": false
        })),
    )?;
    write(
        &dir.join("endpoint.json"),
        pretty(json!({
            "base_url": "http://127.0.0.1:8080/v1",
            "model": "gemma-3-4b-it",
            "timeout_secs": 30,
            "max_retries": 2,
            "max_concurrent": 2,
            "backoff_ms": 10
        })),
    )?;
    let models: Vec<&str> = MODELS.iter().map(|(m, _)| *m).collect();
    write(
        &dir.join("pipeline.json"),
        pretty(json!({
            "queries": models.iter().map(|m| (m.to_string(), json!(format!("queries_{m}.zse")))).collect::<serde_json::Map<_, _>>(),
            "database": models.iter().map(|m| (m.to_string(), json!(format!("db_{m}.zse")))).collect::<serde_json::Map<_, _>>(),
            "articles": "articles.jsonl",
            "mapping": "mapping.jsonl",
            "ground_truth": "ground_truth.jsonl",
            "fusion": "fusion.json",
            "endpoint": "endpoint.json",
            "query_images": "queries.jsonl",
            "references": "references.jsonl",
            "caption_embeddings": "clip_captions.zse",
            "image_embeddings": "clip_images.zse",
            "ks": [1, 10],
            "out_dir": "out"
        })),
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::load_embeddings;

    #[test]
    fn fixture_is_seed_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        make_fixture(a.path(), 42).unwrap();
        make_fixture(b.path(), 42).unwrap();
        for name in ["db_clip.zse", "queries_dinov2.zse", "mapping.jsonl", "pipeline.json", "clip_captions.zse"] {
            assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
        }
        let db = load_embeddings(a.path().join("db_siglip.zse")).unwrap();
        assert_eq!(db.count(), NUM_IMAGES);
        assert_eq!(db.dim(), 12);
    }
}
