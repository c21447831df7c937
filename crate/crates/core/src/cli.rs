//! Command-line front end. Every subcommand delegates to a library module;
//! this file only moves bytes between files and those modules.
//!
//! Exit codes: 0 success, 1 data or validation failure, 2 usage error.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::caption::{
    run_caption_stage, CaptionClient, CaptionStageOutput, Decoding, LlmEndpointConfig, PromptTemplate, QueryImage,
    StageOptions, DEFAULT_ARTICLE_BUDGET,
};
use crate::caption_eval::{evaluate_captions, parse_caption_records, CaptionReport, ClipInputs};
use crate::catalog::{load_catalog, ArticleCatalog};
use crate::embedding::{load_embeddings, EmbeddingMatrix};
use crate::error::Error;
use crate::fixture::make_fixture;
use crate::fusion::{fuse_run, FusionConfig};
use crate::knn::batch_search;
use crate::ranked::{parse_run, write_run, RankedList};
use crate::retrieval_eval::{evaluate_run, parse_ks, GroundTruth, RetrievalReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "zsecap", version, about = "Ensemble image retrieval and article-grounded captioning")]
pub struct Cli {
    /// Worker threads for search and concurrent caption requests.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for synthetic fixture generation.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check embedding files and print their shape.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Exact L2 search of every query row against a database.
    Search {
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        db: PathBuf,
        #[arg(long, default_value_t = 100)]
        k: usize,
        /// Model id written into the run; defaults to the database's.
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse per-model runs into one ranking per query.
    Fuse {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// mAP and Recall@K of a run.
    EvalRetrieval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
        #[arg(long, default_value = "1,10")]
        ks: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Caption each query image from its retrieved article.
    Caption(CaptionArgs),
    /// CIDEr-D and, when embeddings are given, CLIPScore.
    EvalCaption {
        #[arg(long)]
        captions: PathBuf,
        #[arg(long)]
        references: Option<PathBuf>,
        #[arg(long, requires = "image_embeddings")]
        caption_embeddings: Option<PathBuf>,
        #[arg(long, requires = "caption_embeddings")]
        image_embeddings: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run search, fusion, captioning and both evaluations from one config.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        endpoint: EndpointOverrides,
    },
    /// Write the synthetic 10-image fixture.
    MakeFixture {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct CaptionArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// JSONL of {"query_id", "image_ref"}; relative paths resolve against
    /// this file's directory.
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub articles: PathBuf,
    #[arg(long)]
    pub mapping: PathBuf,
    /// Prompt template file; the built-in prompt when omitted.
    #[arg(long)]
    pub template: Option<PathBuf>,
    #[arg(long)]
    pub endpoint: PathBuf,
    #[command(flatten)]
    pub overrides: EndpointOverrides,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub failures: PathBuf,
}

#[derive(Debug, Default, Clone, Args)]
pub struct EndpointOverrides {
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub timeout_secs: Option<f64>,
    #[arg(long)]
    pub max_retries: Option<u32>,
    #[arg(long)]
    pub max_concurrent: Option<usize>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub article_budget: Option<usize>,
}

impl EndpointOverrides {
    fn apply(&self, endpoint: &mut LlmEndpointConfig) {
        if let Some(v) = &self.base_url {
            endpoint.base_url = v.clone();
        }
        if let Some(v) = &self.model {
            endpoint.model_name = v.clone();
        }
        if let Some(v) = self.timeout_secs {
            endpoint.timeout_secs = v;
        }
        if let Some(v) = self.max_retries {
            endpoint.max_retries = v;
        }
        if let Some(v) = self.max_concurrent {
            endpoint.max_concurrent = v;
        }
    }
}

/// The pipeline config file. Relative paths resolve against its directory.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Query embeddings per model.
    pub queries: BTreeMap<String, PathBuf>,
    /// Database embeddings per model.
    pub database: BTreeMap<String, PathBuf>,
    pub articles: PathBuf,
    pub mapping: PathBuf,
    pub ground_truth: PathBuf,
    pub fusion: Option<PathBuf>,
    pub endpoint: PathBuf,
    pub query_images: PathBuf,
    pub references: PathBuf,
    #[serde(default)]
    pub caption_embeddings: Option<PathBuf>,
    #[serde(default)]
    pub image_embeddings: Option<PathBuf>,
    #[serde(default)]
    pub template: Option<PathBuf>,
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
    /// Search depth per model; whole database when absent.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub decoding: Option<Decoding>,
    #[serde(default)]
    pub article_budget: Option<usize>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_ks() -> Vec<usize> {
    vec![1, 10]
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Output names written by `pipeline` inside its output directory.
pub const PIPELINE_OUTPUTS: [&str; 6] = [
    "run.jsonl",
    "fused.jsonl",
    "captions.jsonl",
    "caption_failures.jsonl",
    "retrieval_report.json",
    "caption_report.json",
];

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type CmdResult<T = i32> = std::result::Result<T, Failure>;

struct Ctx<'a> {
    force: bool,
    seed: u64,
    threads: Option<usize>,
    out: &'a mut dyn Write,
}

fn say(out: &mut dyn Write, line: impl std::fmt::Display) {
    // Status lines are best effort; a closed stdout must not fail the command.
    let _ = writeln!(out, "{line}");
}

fn require_file(path: &Path, what: &str) -> CmdResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} not found: {}", path.display())))
    }
}

fn read_text(path: &Path, what: &str) -> CmdResult<String> {
    require_file(path, what)?;
    fs::read_to_string(path).map_err(|e| Error::io(path, e).into())
}

fn load_matrix(path: &Path, what: &str) -> CmdResult<EmbeddingMatrix> {
    require_file(path, what)?;
    load_embeddings(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn guard_outputs(paths: &[&Path], force: bool) -> CmdResult<()> {
    if force {
        return Ok(());
    }
    match paths.iter().find(|p| p.exists()) {
        Some(p) => Err(Failure::Data(format!(
            "refusing to overwrite {} (pass --force)",
            p.display()
        ))),
        None => Ok(()),
    }
}

/// Writes via a temp file in the target directory, then renames into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> CmdResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CmdResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn jsonl<T: serde::Serialize>(items: &[T]) -> CmdResult<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).map_err(Error::from)?);
        out.push('\n');
    }
    Ok(out)
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> CmdResult<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(Failure::Usage("--threads must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Failure::Data(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

fn is_url(image_ref: &str) -> bool {
    let lower = image_ref.to_ascii_lowercase();
    ["http://", "https://", "data:"].iter().any(|p| lower.starts_with(p))
}

fn load_query_images(path: &Path) -> CmdResult<Vec<QueryImage>> {
    let text = read_text(path, "query image manifest")?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut q: QueryImage = serde_json::from_str(line).map_err(|e| Error::parse("queries", i + 1, e))?;
        if !is_url(&q.image_ref) && Path::new(&q.image_ref).is_relative() {
            q.image_ref = base.join(&q.image_ref).to_string_lossy().into_owned();
        }
        out.push(q);
    }
    Ok(out)
}

fn load_endpoint(path: &Path, overrides: &EndpointOverrides) -> CmdResult<LlmEndpointConfig> {
    let text = read_text(path, "endpoint config")?;
    let mut endpoint: LlmEndpointConfig = serde_json::from_str(&text).map_err(Error::from)?;
    overrides.apply(&mut endpoint);
    endpoint.validate()?;
    Ok(endpoint)
}

fn load_template(path: Option<&Path>) -> CmdResult<PromptTemplate> {
    match path {
        None => Ok(PromptTemplate::builtin()),
        Some(p) => {
            require_file(p, "prompt template")?;
            Ok(PromptTemplate::from_file(p)?)
        }
    }
}

struct CaptionInputs<'a> {
    queries: &'a [QueryImage],
    run: &'a [RankedList],
    catalog: &'a ArticleCatalog,
    template: &'a PromptTemplate,
    endpoint: LlmEndpointConfig,
    decoding: Decoding,
    article_budget: usize,
}

fn caption_stage(inputs: CaptionInputs<'_>, threads: Option<usize>) -> CmdResult<CaptionStageOutput> {
    let mut max_concurrent = inputs.endpoint.max_concurrent;
    if let Some(t) = threads {
        max_concurrent = max_concurrent.min(t.max(1));
    }
    let client = CaptionClient::new(inputs.endpoint)?;
    let options = StageOptions {
        decoding: inputs.decoding,
        article_budget: inputs.article_budget,
        max_concurrent,
    };
    Ok(run_caption_stage(
        inputs.queries,
        inputs.run,
        inputs.catalog,
        inputs.template,
        &client,
        &options,
    ))
}

fn decoding_with(base: Decoding, overrides: &EndpointOverrides) -> Decoding {
    Decoding {
        max_tokens: overrides.max_tokens.unwrap_or(base.max_tokens),
        temperature: overrides.temperature.unwrap_or(base.temperature),
        seed: base.seed,
    }
}

fn cmd_validate(ctx: &mut Ctx, files: &[PathBuf]) -> CmdResult {
    let mut failed = false;
    for f in files {
        match load_embeddings(f) {
            Ok(m) => say(
                ctx.out,
                format!(
                    "OK {} model={} dim={} count={} normalized={}",
                    f.display(),
                    m.model_id(),
                    m.dim(),
                    m.count(),
                    m.is_normalized()
                ),
            ),
            Err(e) => {
                failed = true;
                say(ctx.out, format!("FAIL {}: {e}", f.display()));
            }
        }
    }
    Ok(if failed { EXIT_DATA } else { EXIT_OK })
}

fn cmd_search(ctx: &mut Ctx, queries: &Path, db: &Path, k: usize, model: Option<&str>, out: &Path) -> CmdResult {
    guard_outputs(&[out], ctx.force)?;
    if k == 0 {
        return Err(Failure::Usage("--k must be at least 1".into()));
    }
    let q = load_matrix(queries, "query embeddings")?;
    let d = load_matrix(db, "database embeddings")?;
    let mut run = with_pool(ctx.threads, || batch_search(&q, &d, k))??;
    if let Some(m) = model {
        run = run.into_iter().map(|l| l.with_model_id(m)).collect();
    }
    write_atomic(out, write_run(&run)?.as_bytes())?;
    say(ctx.out, format!("wrote {} ranked lists to {}", run.len(), out.display()));
    Ok(EXIT_OK)
}

fn load_fusion(path: &Path) -> CmdResult<FusionConfig> {
    let text = read_text(path, "fusion config")?;
    FusionConfig::from_json(&text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn cmd_fuse(ctx: &mut Ctx, runs: &[PathBuf], config: &Path, out: &Path) -> CmdResult {
    guard_outputs(&[out], ctx.force)?;
    let config = load_fusion(config)?;
    let mut all = Vec::new();
    for r in runs {
        let text = read_text(r, "run file")?;
        all.extend(parse_run(&text).map_err(|e| Failure::Data(format!("{}: {e}", r.display())))?);
    }
    let fused = fuse_run(&config, all)?;
    write_atomic(out, write_run(&fused)?.as_bytes())?;
    say(ctx.out, format!("fused {} queries into {}", fused.len(), out.display()));
    Ok(EXIT_OK)
}

fn retrieval_summary(report: &RetrievalReport) -> String {
    let mut line = format!("mAP={:.6}", report.map_score);
    for (k, r) in &report.recall_at {
        line.push_str(&format!(" R@{k}={r:.6}"));
    }
    line
}

fn cmd_eval_retrieval(ctx: &mut Ctx, run: &Path, gt: &Path, ks: &str, out: &Path) -> CmdResult {
    guard_outputs(&[out], ctx.force)?;
    let ks = parse_ks(ks).map_err(|e| Failure::Usage(e.to_string()))?;
    let run_text = read_text(run, "run file")?;
    let lists = parse_run(&run_text).map_err(|e| Failure::Data(format!("{}: {e}", run.display())))?;
    let gt_text = read_text(gt, "ground truth")?;
    let gt = GroundTruth::from_jsonl(&gt_text).map_err(|e| Failure::Data(format!("{}: {e}", gt.display())))?;
    let report = evaluate_run(&lists, &gt, &ks)?;
    write_json(out, &report.to_json())?;
    say(ctx.out, retrieval_summary(&report));
    Ok(EXIT_OK)
}

fn write_caption_outputs(output: &CaptionStageOutput, captions: &Path, failures: &Path) -> CmdResult<()> {
    write_atomic(captions, jsonl(&output.captions)?.as_bytes())?;
    write_atomic(failures, jsonl(&output.failures)?.as_bytes())
}

fn cmd_caption(ctx: &mut Ctx, args: &CaptionArgs) -> CmdResult {
    guard_outputs(&[&args.out, &args.failures], ctx.force)?;
    let endpoint = load_endpoint(&args.endpoint, &args.overrides)?;
    let template = load_template(args.template.as_deref())?;
    require_file(&args.articles, "articles")?;
    require_file(&args.mapping, "mapping")?;
    let catalog = load_catalog(&args.articles, &args.mapping)?;
    let queries = load_query_images(&args.queries)?;
    let run_text = read_text(&args.run, "run file")?;
    let run = parse_run(&run_text).map_err(|e| Failure::Data(format!("{}: {e}", args.run.display())))?;

    let output = caption_stage(
        CaptionInputs {
            queries: &queries,
            run: &run,
            catalog: &catalog,
            template: &template,
            endpoint,
            decoding: decoding_with(Decoding::default(), &args.overrides),
            article_budget: args.overrides.article_budget.unwrap_or(DEFAULT_ARTICLE_BUDGET),
        },
        ctx.threads,
    )?;
    write_caption_outputs(&output, &args.out, &args.failures)?;
    say(
        ctx.out,
        format!("{} captions, {} failures", output.captions.len(), output.failures.len()),
    );
    Ok(if output.failures.is_empty() { EXIT_OK } else { EXIT_DATA })
}

fn caption_report(
    captions_text: &str,
    references: Option<&str>,
    clip: Option<(&EmbeddingMatrix, &EmbeddingMatrix)>,
) -> CmdResult<CaptionReport> {
    let records = parse_caption_records(captions_text, references)?;
    let clip = clip.map(|(captions, images)| ClipInputs { captions, images });
    Ok(evaluate_captions(&records, clip)?)
}

fn caption_summary(report: &CaptionReport) -> String {
    match report.clipscore {
        Some(c) => format!("CIDEr-D={:.6} CLIPScore={c:.6} n={}", report.cider, report.num_captions),
        None => format!("CIDEr-D={:.6} n={}", report.cider, report.num_captions),
    }
}

fn load_clip_pair(captions: Option<&Path>, images: Option<&Path>) -> CmdResult<Option<(EmbeddingMatrix, EmbeddingMatrix)>> {
    match (captions, images) {
        (Some(c), Some(i)) => Ok(Some((
            load_matrix(c, "caption embeddings")?,
            load_matrix(i, "image embeddings")?,
        ))),
        (None, None) => Ok(None),
        _ => Err(Failure::Usage(
            "caption and image embeddings must be given together".into(),
        )),
    }
}

fn cmd_eval_caption(
    ctx: &mut Ctx,
    captions: &Path,
    references: Option<&Path>,
    caption_embeddings: Option<&Path>,
    image_embeddings: Option<&Path>,
    out: &Path,
) -> CmdResult {
    guard_outputs(&[out], ctx.force)?;
    let text = read_text(captions, "captions")?;
    let refs = references.map(|r| read_text(r, "references")).transpose()?;
    let clip = load_clip_pair(caption_embeddings, image_embeddings)?;
    let report = caption_report(&text, refs.as_deref(), clip.as_ref().map(|(c, i)| (c, i)))?;
    write_json(out, &report)?;
    say(ctx.out, caption_summary(&report));
    Ok(EXIT_OK)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn cmd_pipeline(ctx: &mut Ctx, config_path: &Path, out_dir: Option<&Path>, overrides: &EndpointOverrides) -> CmdResult {
    let text = read_text(config_path, "pipeline config")?;
    let config: PipelineConfig = serde_json::from_str(&text)
        .map_err(|e| Failure::Usage(format!("{}: {e}", config_path.display())))?;
    let base = config_path.parent().unwrap_or(Path::new(""));
    let at = |p: &Path| resolve(base, p);

    let fusion_path = config
        .fusion
        .as_deref()
        .map(at)
        .ok_or_else(|| Failure::Usage("pipeline config has no fusion config".into()))?;
    let fusion = load_fusion(&fusion_path)?;
    let ks: BTreeSet<usize> = config.ks.iter().copied().collect();
    if ks.is_empty() || ks.contains(&0) {
        return Err(Failure::Usage("ks must be non-empty positive integers".into()));
    }
    if config.queries.keys().ne(config.database.keys()) {
        return Err(Failure::Usage("queries and database must name the same models".into()));
    }
    let out_dir = out_dir.map(Path::to_path_buf).unwrap_or_else(|| at(&config.out_dir));
    let outputs: Vec<PathBuf> = PIPELINE_OUTPUTS.iter().map(|n| out_dir.join(n)).collect();
    let output_refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    guard_outputs(&output_refs, ctx.force)?;

    // Read and validate every input before doing any work.
    let mut models = Vec::new();
    for (model, qpath) in &config.queries {
        let q = load_matrix(&at(qpath), "query embeddings")?;
        let d = load_matrix(&at(&config.database[model]), "database embeddings")?;
        models.push((model.clone(), q, d));
    }
    let gt_path = at(&config.ground_truth);
    let gt = GroundTruth::from_jsonl(&read_text(&gt_path, "ground truth")?)
        .map_err(|e| Failure::Data(format!("{}: {e}", gt_path.display())))?;
    let (articles, mapping) = (at(&config.articles), at(&config.mapping));
    require_file(&articles, "articles")?;
    require_file(&mapping, "mapping")?;
    let catalog = load_catalog(&articles, &mapping)?;
    let endpoint = load_endpoint(&at(&config.endpoint), overrides)?;
    let template = load_template(config.template.as_deref().map(at).as_deref())?;
    let queries = load_query_images(&at(&config.query_images))?;
    let references = read_text(&at(&config.references), "references")?;
    let clip = load_clip_pair(
        config.caption_embeddings.as_deref().map(at).as_deref(),
        config.image_embeddings.as_deref().map(at).as_deref(),
    )?;

    let mut run = Vec::new();
    for (model, q, d) in &models {
        let k = config.k.unwrap_or(d.count());
        let lists = with_pool(ctx.threads, || batch_search(q, d, k))??;
        run.extend(lists.into_iter().map(|l| l.with_model_id(model.as_str())));
    }
    write_atomic(&outputs[0], write_run(&run)?.as_bytes())?;

    let fused = fuse_run(&fusion, run)?;
    write_atomic(&outputs[1], write_run(&fused)?.as_bytes())?;

    let retrieval = evaluate_run(&fused, &gt, &ks)?;
    write_json(&outputs[4], &retrieval.to_json())?;
    say(ctx.out, format!("retrieval: {}", retrieval_summary(&retrieval)));

    let stage = caption_stage(
        CaptionInputs {
            queries: &queries,
            run: &fused,
            catalog: &catalog,
            template: &template,
            endpoint,
            decoding: decoding_with(config.decoding.unwrap_or_default(), overrides),
            article_budget: overrides
                .article_budget
                .or(config.article_budget)
                .unwrap_or(DEFAULT_ARTICLE_BUDGET),
        },
        ctx.threads,
    )?;
    write_caption_outputs(&stage, &outputs[2], &outputs[3])?;
    say(
        ctx.out,
        format!("captions: {} written, {} failed", stage.captions.len(), stage.failures.len()),
    );

    if stage.captions.is_empty() {
        return Err(Failure::Data("no captions were generated; caption report skipped".into()));
    }
    let report = caption_report(
        &jsonl(&stage.captions)?,
        Some(&references),
        clip.as_ref().map(|(c, i)| (c, i)),
    )?;
    write_json(&outputs[5], &report)?;
    say(ctx.out, format!("captions: {}", caption_summary(&report)));
    Ok(if stage.failures.is_empty() { EXIT_OK } else { EXIT_DATA })
}

fn cmd_make_fixture(ctx: &mut Ctx, out: &Path) -> CmdResult {
    if out.exists() && fs::read_dir(out).map_err(|e| Error::io(out, e))?.next().is_some() {
        guard_outputs(&[out], ctx.force)?;
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    make_fixture(out, ctx.seed)?;
    say(ctx.out, format!("fixture written to {} (seed {})", out.display(), ctx.seed));
    Ok(EXIT_OK)
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> CmdResult {
    let mut ctx = Ctx {
        force: cli.force,
        seed: cli.seed,
        threads: cli.threads,
        out,
    };
    if ctx.threads == Some(0) {
        return Err(Failure::Usage("--threads must be at least 1".into()));
    }
    match &cli.command {
        Command::Validate { files } => cmd_validate(&mut ctx, files),
        Command::Search {
            queries,
            db,
            k,
            model,
            out,
        } => cmd_search(&mut ctx, queries, db, *k, model.as_deref(), out),
        Command::Fuse { runs, config, out } => cmd_fuse(&mut ctx, runs, config, out),
        Command::EvalRetrieval {
            run,
            ground_truth,
            ks,
            out,
        } => cmd_eval_retrieval(&mut ctx, run, ground_truth, ks, out),
        Command::Caption(args) => cmd_caption(&mut ctx, args),
        Command::EvalCaption {
            captions,
            references,
            caption_embeddings,
            image_embeddings,
            out,
        } => cmd_eval_caption(
            &mut ctx,
            captions,
            references.as_deref(),
            caption_embeddings.as_deref(),
            image_embeddings.as_deref(),
            out,
        ),
        Command::Pipeline {
            config,
            out_dir,
            endpoint,
        } => cmd_pipeline(&mut ctx, config, out_dir.as_deref(), endpoint),
        Command::MakeFixture { out } => cmd_make_fixture(&mut ctx, out),
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Status lines go to `out`, errors to `err`. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let sink: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(sink, "{}", e.render());
            return code;
        }
    };
    let level = if cli.verbose { "debug" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();

    match dispatch(cli, out) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "usage error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Data(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_DATA
        }
    }
}
