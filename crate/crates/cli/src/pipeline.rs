use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Serialize;
use trag_core::bm25::{Bm25Index, Bm25Params};
use trag_core::corpus::{check_gold_tables, load_corpus, load_qa, table_from_csv, Corpus, QaExample};
use trag_core::dense::{
    build_dense, DenseConfig, EmbeddingProvider, HnswParams, LocalProvider, RemoteProvider, RemoteProviderConfig,
    SearchMode,
};
use trag_core::eval::{evaluate, load_predictions, EvalError, EvalOptions, Metric, MetricReport, Prediction};
use trag_core::linearize::segment_corpus;
use trag_core::miner::{mine, MinerConfig};
use trag_core::rag::{
    self, answer_with_candidates, oracle_candidate, prediction_ranking, Bm25Retriever, DecodeConfig, DenseRetriever,
    Generator, RagConfig, RagError, Retriever,
};
use trag_core::store::{DenseMeta, IndexDir, IndexMeta, ProviderSpec, STORE_VERSION};
use trag_core::tokenize::SimpleTokenizer;
use trag_service::{load_generator, provider_for, GeneratorSpec};

use crate::config::RunConfig;
use crate::UsageError;

pub const FIXTURE_TABLES: &str = include_str!("../fixtures/synthetic/tables.jsonl");
pub const FIXTURE_QA: &str = include_str!("../fixtures/synthetic/qa.jsonl");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexKind {
    Bm25,
    Dense,
}

fn usage_err(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

fn to_jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> anyhow::Result<Vec<u8>> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        out.push(b'\n');
    }
    Ok(out)
}

fn load_inputs(cfg: &RunConfig, csv: &[PathBuf]) -> anyhow::Result<Option<Corpus>> {
    if cfg.corpus.is_none() && csv.is_empty() {
        return Ok(None);
    }
    let mut tables = match &cfg.corpus {
        Some(p) => load_corpus(p)
            .with_context(|| format!("loading corpus {}", p.display()))?
            .tables()
            .to_vec(),
        None => Vec::new(),
    };
    for path in csv {
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .with_context(|| format!("{}: no usable file stem for a table id", path.display()))?;
        let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        tables
            .push(table_from_csv(id, None, BufReader::new(f)).with_context(|| format!("reading {}", path.display()))?);
    }
    Ok(Some(Corpus::new(tables)?))
}

fn ingested(cfg: &RunConfig, corpus: Corpus) -> anyhow::Result<IndexDir> {
    let segments = segment_corpus(&corpus, cfg.segment_budget, &SimpleTokenizer)?;
    tracing::info!(tables = corpus.len(), segments = segments.len(), "segmented corpus");
    Ok(IndexDir {
        meta: IndexMeta {
            version: STORE_VERSION,
            segment_budget: cfg.segment_budget,
            tokenizer: "simple".into(),
            n_tables: corpus.len(),
            n_segments: segments.len(),
            bm25: None,
            dense: None,
        },
        corpus,
        segments,
        bm25: None,
        dense: None,
    })
}

pub fn ingest(cfg: &RunConfig, csv: &[PathBuf]) -> anyhow::Result<IndexDir> {
    let corpus = load_inputs(cfg, csv)?.ok_or_else(|| usage_err("missing --corpus"))?;
    let dir = ingested(cfg, corpus)?;
    dir.save(&cfg.index)?;
    Ok(dir)
}

fn embedder(cfg: &RunConfig) -> anyhow::Result<(ProviderSpec, Box<dyn EmbeddingProvider>)> {
    match cfg.embedder.as_str() {
        "local" => Ok((
            ProviderSpec::Local { dim: cfg.dim },
            Box::new(LocalProvider::new(cfg.dim).map_err(|e| usage_err(e.to_string()))?),
        )),
        "remote" => {
            let base_url = cfg
                .embed_url
                .clone()
                .ok_or_else(|| usage_err("--embedder remote needs --embed-url"))?;
            let provider = RemoteProvider::new(RemoteProviderConfig::new(base_url.clone(), cfg.dim))
                .map_err(|e| usage_err(e.to_string()))?;
            Ok((ProviderSpec::Remote { base_url, dim: cfg.dim }, Box::new(provider)))
        }
        other => Err(usage_err(format!("unknown embedder {other:?}"))),
    }
}

/// Builds one index kind. With a corpus given, the corpus is (re)ingested
/// first; an index of the other kind survives only if the segments did not
/// change.
pub fn build_index(cfg: &RunConfig, kind: IndexKind, csv: &[PathBuf]) -> anyhow::Result<IndexDir> {
    let mut dir = match load_inputs(cfg, csv)? {
        Some(corpus) => {
            let fresh = ingested(cfg, corpus)?;
            match IndexDir::load(&cfg.index) {
                Ok(old)
                    if old.segments == fresh.segments
                        && old.corpus.tables() == fresh.corpus.tables()
                        && old.meta.segment_budget == fresh.meta.segment_budget =>
                {
                    old
                }
                _ => fresh,
            }
        }
        None => IndexDir::load(&cfg.index)
            .with_context(|| format!("loading ingested corpus from {}", cfg.index.display()))?,
    };
    match kind {
        IndexKind::Bm25 => {
            let params = Bm25Params {
                k1: cfg.bm25_k1,
                b: cfg.bm25_b,
            };
            params.validate().map_err(|e| usage_err(e.to_string()))?;
            dir.bm25 = Some(Bm25Index::build(&dir.segments, params)?);
            dir.meta.bm25 = Some(params);
        }
        IndexKind::Dense => {
            let (spec, provider) = embedder(cfg)?;
            let config = DenseConfig {
                ann_threshold: cfg.ann_threshold,
                hnsw: HnswParams {
                    m: cfg.hnsw_m,
                    ef_construction: cfg.ef_construction,
                    ef_search: cfg.ef_search,
                    seed: cfg.seed,
                },
            };
            dir.dense = Some(build_dense(&dir.segments, provider.as_ref(), &config)?);
            dir.meta.dense = Some(DenseMeta { provider: spec, config });
        }
    }
    dir.save(&cfg.index)?;
    tracing::info!(dir = %cfg.index.display(), ?kind, "index written");
    Ok(dir)
}

fn load_examples(cfg: &RunConfig, dir: Option<&IndexDir>) -> anyhow::Result<Vec<QaExample>> {
    let path = cfg.qa.as_ref().ok_or_else(|| usage_err("missing --qa"))?;
    let examples = load_qa(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(d) = dir {
        check_gold_tables(&examples, &d.corpus)?;
    }
    Ok(examples)
}

fn load_dir(cfg: &RunConfig) -> anyhow::Result<IndexDir> {
    IndexDir::load(&cfg.index).with_context(|| format!("loading index {}", cfg.index.display()))
}

pub fn mine_negatives(cfg: &RunConfig) -> anyhow::Result<Vec<u8>> {
    let dir = load_dir(cfg)?;
    let examples = load_examples(cfg, Some(&dir))?;
    let config = MinerConfig {
        pool_size: cfg.pool,
        k: cfg.k,
        negatives_per_question: cfg.negatives,
        rng_seed: cfg.seed,
    };
    config.validate().map_err(|e| usage_err(e.to_string()))?;
    let outcome = mine(&examples, dir.bm25(&cfg.index)?, &config)?;
    if !outcome.empty_pool.is_empty() {
        tracing::warn!(count = outcome.empty_pool.len(), "questions without negatives");
    }
    to_jsonl(&outcome.negatives)
}

/// The retriever named in the configuration, with its embedding provider
/// kept alive alongside.
struct RetrieverHandle<'a> {
    dir: &'a IndexDir,
    kind: String,
    provider: Option<Box<dyn EmbeddingProvider>>,
    mode: SearchMode,
}

impl<'a> RetrieverHandle<'a> {
    fn new(cfg: &RunConfig, dir: &'a IndexDir, exact: bool) -> anyhow::Result<Self> {
        let provider = match cfg.retriever.as_str() {
            "bm25" => {
                dir.bm25(&cfg.index)?;
                None
            }
            "dense" => {
                dir.dense(&cfg.index)?;
                let spec = &dir.meta.dense.as_ref().expect("validated with the index").provider;
                Some(provider_for(spec)?)
            }
            other => return Err(usage_err(format!("unknown retriever {other:?}"))),
        };
        Ok(Self {
            dir,
            kind: cfg.retriever.clone(),
            provider,
            mode: if exact { SearchMode::Exact } else { SearchMode::Ann },
        })
    }

    fn with<R>(&self, f: impl FnOnce(&dyn Retriever) -> R) -> R {
        match (self.kind.as_str(), &self.provider) {
            ("dense", Some(p)) => f(&DenseRetriever {
                index: self.dir.dense.as_ref().expect("checked in new"),
                provider: p.as_ref(),
                mode: self.mode,
            }),
            _ => f(&Bm25Retriever {
                index: self.dir.bm25.as_ref().expect("checked in new"),
            }),
        }
    }
}

fn load_dir_for_query(cfg: &RunConfig) -> anyhow::Result<IndexDir> {
    let mut dir = load_dir(cfg)?;
    if let Some(d) = dir.dense.as_mut() {
        d.set_ef_search(cfg.ef_search);
    }
    Ok(dir)
}

#[derive(Serialize)]
struct RetrievedLine<'a> {
    rank: usize,
    table_id: &'a str,
    score: f64,
    segment: u32,
}

pub fn retrieve(cfg: &RunConfig, query: &str, top: usize, exact: bool) -> anyhow::Result<Vec<u8>> {
    if top == 0 {
        return Err(usage_err("--top must be positive"));
    }
    let dir = load_dir_for_query(cfg)?;
    let handle = RetrieverHandle::new(cfg, &dir, exact)?;
    let hits = handle.with(|r| r.retrieve(query, top))?;
    to_jsonl(hits.iter().enumerate().map(|(i, h)| RetrievedLine {
        rank: i + 1,
        table_id: &h.table_id,
        score: h.score,
        segment: h.segment.0,
    }))
}

fn rag_config(cfg: &RunConfig) -> RagConfig {
    RagConfig {
        n_docs: cfg.n_docs,
        temperature: cfg.temperature,
        decode: DecodeConfig {
            beam_width: cfg.beam,
            max_len: cfg.max_len,
            min_len: 1,
        },
    }
}

fn generator(cfg: &RunConfig) -> anyhow::Result<Box<dyn Generator + Send + Sync>> {
    let spec = match cfg.generator.as_str() {
        "toy" => {
            if cfg.memory.is_none() {
                tracing::warn!("toy generator without --memory produces uniform noise");
            }
            GeneratorSpec::Toy {
                memory: cfg.memory.clone(),
            }
        }
        "remote" => GeneratorSpec::Remote {
            base_url: cfg
                .generator_url
                .clone()
                .ok_or_else(|| usage_err("--generator remote needs --generator-url"))?,
        },
        other => return Err(usage_err(format!("unknown generator {other:?}"))),
    };
    Ok(load_generator(&spec)?)
}

#[derive(Serialize)]
struct AnswerLine<'a> {
    rank: usize,
    text: &'a str,
    log_prob: f64,
    table_id: &'a str,
    provenance_score: f64,
}

pub fn answer_one(cfg: &RunConfig, question: &str) -> anyhow::Result<Vec<u8>> {
    let dir = load_dir_for_query(cfg)?;
    let handle = RetrieverHandle::new(cfg, &dir, false)?;
    let generator = generator(cfg)?;
    let config = rag_config(cfg);
    let answered = match handle.with(|r| rag::answer(question, &dir.segments, r, generator.as_ref(), &config)) {
        Ok(a) => a.answers,
        Err(RagError::NoCandidates) => {
            tracing::warn!("no table matched the question");
            Vec::new()
        }
        Err(e) => return Err(e.into()),
    };
    to_jsonl(answered.iter().enumerate().map(|(i, a)| AnswerLine {
        rank: i + 1,
        text: &a.text,
        log_prob: a.log_prob,
        table_id: &a.provenance_table_id,
        provenance_score: a.provenance_score,
    }))
}

fn predict(
    cfg: &RunConfig,
    dir: &IndexDir,
    handle: &RetrieverHandle<'_>,
    generator: &(dyn Generator + Send + Sync),
    ex: &QaExample,
) -> anyhow::Result<Prediction> {
    let config = rag_config(cfg);
    let result = if cfg.oracle {
        let cand = oracle_candidate(&ex.gold_table_id, &ex.question, &dir.segments, dir.bm25(&cfg.index)?)?;
        answer_with_candidates(&ex.question, &dir.segments, vec![cand], generator, &config)
    } else {
        handle.with(|r| rag::answer(&ex.question, &dir.segments, r, generator, &config))
    };
    Ok(match result {
        Ok(a) => Prediction {
            qid: ex.qid.clone(),
            answer: a.answers.first().map(|x| x.text.clone()).unwrap_or_default(),
            ranking: prediction_ranking(&a),
            answers: a.answers.iter().map(|x| x.text.clone()).collect(),
        },
        Err(RagError::NoCandidates) => {
            tracing::warn!(qid = %ex.qid, "no table matched the question");
            Prediction {
                qid: ex.qid.clone(),
                answer: String::new(),
                ranking: Vec::new(),
                answers: Vec::new(),
            }
        }
        Err(e) => return Err(anyhow::Error::new(e).context(format!("question {}", ex.qid))),
    })
}

pub fn answer_batch(cfg: &RunConfig) -> anyhow::Result<Vec<u8>> {
    let dir = load_dir_for_query(cfg)?;
    let examples = load_examples(cfg, Some(&dir))?;
    let handle = RetrieverHandle::new(cfg, &dir, false)?;
    let generator = generator(cfg)?;
    let mut predictions = Vec::with_capacity(examples.len());
    for ex in &examples {
        predictions.push(predict(cfg, &dir, &handle, generator.as_ref(), ex)?);
    }
    to_jsonl(&predictions)
}

pub fn eval_predictions(cfg: &RunConfig, predictions: &Path) -> anyhow::Result<Vec<u8>> {
    let examples = load_examples(cfg, None)?;
    let preds = load_predictions(predictions).with_context(|| format!("loading {}", predictions.display()))?;
    let metrics = Metric::parse_list(&cfg.metrics).map_err(|e| match e {
        EvalError::UnknownMetric(_) => usage_err(e.to_string()),
        other => other.into(),
    })?;
    let report = evaluate(&examples, &preds, &metrics, EvalOptions { oracle: cfg.oracle })?;
    let mut out = serde_json::to_vec_pretty(&report)?;
    out.push(b'\n');
    Ok(out)
}

#[derive(Debug)]
pub struct SmokeOutcome {
    pub report: MetricReport,
    pub report_json: Vec<u8>,
    pub failures: Vec<String>,
}

impl SmokeOutcome {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn write(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// ingest → index (bm25 and dense) → mine → answer → eval on the bundled
/// fixture, with every artifact written under `workdir`.
pub fn pipeline_smoke(cfg: &RunConfig, workdir: &Path) -> anyhow::Result<SmokeOutcome> {
    std::fs::create_dir_all(workdir).with_context(|| format!("creating {}", workdir.display()))?;
    let tables = workdir.join("tables.jsonl");
    let qa = workdir.join("qa.jsonl");
    write(&tables, FIXTURE_TABLES.as_bytes())?;
    write(&qa, FIXTURE_QA.as_bytes())?;

    let mut c = cfg.clone();
    c.corpus = Some(tables);
    c.qa = Some(qa.clone());
    c.memory = Some(qa);
    c.index = workdir.join("idx");
    c.generator = "toy".into();
    c.retriever = "bm25".into();
    c.embedder = "local".into();
    c.oracle = false;

    build_index(&c, IndexKind::Bm25, &[])?;
    let dir = build_index(&c, IndexKind::Dense, &[])?;
    let negatives = mine_negatives(&c)?;
    write(&workdir.join("negatives.jsonl"), &negatives)?;
    let predictions = answer_batch(&c)?;
    let pred_path = workdir.join("predictions.jsonl");
    write(&pred_path, &predictions)?;
    let report_json = eval_predictions(&c, &pred_path)?;
    write(&workdir.join("report.json"), &report_json)?;

    let report: MetricReport = serde_json::from_slice(&report_json)?;
    let examples = load_examples(&c, Some(&dir))?;
    let gold: HashMap<&str, &str> = examples
        .iter()
        .map(|e| (e.qid.as_str(), e.gold_table_id.as_str()))
        .collect();
    let mut failures = Vec::new();
    for metric in ["hit1", "em"] {
        match report.get(metric) {
            Some(1.0) => {}
            v => failures.push(format!("{metric} = {v:?}, expected 1.0")),
        }
    }
    let preds = load_predictions(&pred_path)?;
    for p in &preds {
        if p.ranking.first().map(String::as_str) != gold.get(p.qid.as_str()).copied() {
            failures.push(format!("{}: provenance is not the gold table", p.qid));
        }
    }
    for line in negatives.split(|&b| b == b'\n').filter(|l| !l.is_empty()) {
        let n: trag_core::miner::MinedNegative = serde_json::from_slice(line)?;
        if gold.get(n.qid.as_str()) == Some(&n.negative_table_id.as_str()) {
            failures.push(format!("{}: gold table mined as a negative", n.qid));
        }
    }
    if report.n_questions != examples.len() {
        bail!("report covers {} of {} questions", report.n_questions, examples.len());
    }
    Ok(SmokeOutcome {
        report,
        report_json,
        failures,
    })
}
