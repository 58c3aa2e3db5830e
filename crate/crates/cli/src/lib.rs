//! `trag` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

pub mod config;
mod pipeline;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

pub use config::RunConfig;
pub use pipeline::{
    answer_batch, build_index, eval_predictions, mine_negatives, pipeline_smoke, retrieve, IndexKind, SmokeOutcome,
    FIXTURE_QA, FIXTURE_TABLES,
};

/// Marks an error as a usage problem (exit code 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(path: &[&str], msg: &str) -> anyhow::Error {
    let mut cmd = Cli::command();
    cmd.build();
    let mut cur = &mut cmd;
    for name in path {
        cur = cur
            .find_subcommand_mut(name)
            .expect("usage path names a real subcommand");
    }
    let text = cur.render_usage();
    anyhow::Error::new(UsageError(format!("{msg}\n\n{text}")))
}

#[derive(Parser, Debug)]
#[command(name = "trag", version, about = "End-to-end question answering over table corpora")]
pub struct Cli {
    /// TOML file whose keys mirror the flags; flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Load, validate and segment a corpus into an index directory.
    Ingest(IngestArgs),
    /// Build a sparse or dense index.
    Index {
        #[command(subcommand)]
        kind: IndexCommand,
    },
    /// Mine soft hard negatives with BM25.
    Mine(MineArgs),
    /// Retrieve tables for a query.
    Retrieve(RetrieveArgs),
    /// Answer one question or a QA file.
    Answer(AnswerArgs),
    /// Score predictions.
    Eval(EvalArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Run ingest, index, mine, answer and eval on the bundled fixture.
    Smoke(SmokeArgs),
    /// Print the fully resolved configuration as TOML.
    PrintConfig,
}

#[derive(Subcommand, Debug)]
pub enum IndexCommand {
    /// Sparse BM25 index over segments
    Bm25(IndexArgs),
    /// Embedding index, with an HNSW graph above --ann-threshold segments
    Dense(IndexArgs),
}

#[derive(Args, Debug, Default)]
pub struct CorpusArgs {
    /// Corpus JSONL, one table per line.
    #[arg(long, value_name = "FILE")]
    pub corpus: Option<PathBuf>,
    /// Extra tables as CSV files (first record is the header; id = file stem).
    #[arg(long, value_name = "FILE")]
    pub csv: Vec<PathBuf>,
    #[arg(long)]
    pub segment_budget: Option<usize>,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Index directory to write.
    #[arg(long, alias = "index", value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct IndexArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Index directory; reuses its ingested corpus when --corpus is absent.
    #[arg(long, alias = "index", value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub bm25_k1: Option<f64>,
    #[arg(long)]
    pub bm25_b: Option<f64>,
    /// Embedding provider for dense indexes.
    #[arg(long, value_enum)]
    pub embedder: Option<Embedder>,
    #[arg(long)]
    pub embed_url: Option<String>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub ann_threshold: Option<usize>,
    #[arg(long)]
    pub hnsw_m: Option<usize>,
    #[arg(long)]
    pub ef_construction: Option<usize>,
    #[arg(long)]
    pub ef_search: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct MineArgs {
    #[arg(long, value_name = "FILE")]
    pub qa: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub index: Option<PathBuf>,
    /// Soft window: draw from the top k non-gold tables.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub pool: Option<usize>,
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output JSONL; stdout when absent.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RetrieverArg {
    Bm25,
    Dense,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Embedder {
    Local,
    Remote,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GeneratorArg {
    Toy,
    Remote,
}

#[derive(Args, Debug)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub query: String,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    #[arg(long, value_name = "DIR")]
    pub index: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub retriever: Option<RetrieverArg>,
    /// Dense only: scan every vector instead of walking the graph.
    #[arg(long)]
    pub exact: bool,
    #[arg(long)]
    pub ef_search: Option<usize>,
}

#[derive(Args, Debug)]
pub struct AnswerArgs {
    /// A single question; answers go to stdout.
    #[arg(long, conflicts_with = "qa")]
    pub question: Option<String>,
    /// QA file; one prediction per question is written to --out.
    #[arg(long, value_name = "FILE")]
    pub qa: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub n_docs: Option<usize>,
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long, value_enum)]
    pub retriever: Option<RetrieverArg>,
    #[arg(long, value_enum)]
    pub generator: Option<GeneratorArg>,
    #[arg(long)]
    pub generator_url: Option<String>,
    /// QA JSONL memorized by the toy generator.
    #[arg(long, value_name = "FILE")]
    pub memory: Option<PathBuf>,
    /// Use the gold table as the only candidate (needs --qa).
    #[arg(long)]
    pub oracle: bool,
    #[arg(long)]
    pub ef_search: Option<usize>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub qa: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub predictions: PathBuf,
    /// Comma-separated, e.g. em,f1,mrr,hit1,r@10,p@5,ndcg@10,map.
    #[arg(long)]
    pub metrics: Option<String>,
    /// Report answer metrics as oracle_em / oracle_f1.
    #[arg(long)]
    pub oracle: bool,
    /// Report JSON; stdout when absent.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub addr: Option<String>,
    #[arg(long, value_name = "DIR")]
    pub index: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub retriever: Option<RetrieverArg>,
    #[arg(long, value_enum)]
    pub generator: Option<GeneratorArg>,
    #[arg(long)]
    pub generator_url: Option<String>,
    #[arg(long, value_name = "FILE")]
    pub memory: Option<PathBuf>,
    #[arg(long)]
    pub n_docs: Option<usize>,
    #[arg(long)]
    pub cors_origin: Option<String>,
}

#[derive(Args, Debug)]
pub struct SmokeArgs {
    /// Where artifacts are written; a fresh temporary directory by default.
    #[arg(long, value_name = "DIR")]
    pub workdir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

fn retriever_name(r: RetrieverArg) -> String {
    match r {
        RetrieverArg::Bm25 => "bm25".into(),
        RetrieverArg::Dense => "dense".into(),
    }
}

fn generator_name(g: GeneratorArg) -> String {
    match g {
        GeneratorArg::Toy => "toy".into(),
        GeneratorArg::Remote => "remote".into(),
    }
}

fn apply_corpus(c: &mut RunConfig, a: &CorpusArgs) {
    set_opt(&mut c.corpus, a.corpus.clone());
    set(&mut c.segment_budget, a.segment_budget);
}

/// Folds command-line flags into the configuration.
pub fn resolve(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut c = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| anyhow::Error::new(UsageError(e.to_string())))?,
        None => RunConfig::default(),
    };
    match &cli.command {
        Command::Ingest(a) => {
            apply_corpus(&mut c, &a.corpus);
            set(&mut c.index, a.out.clone());
        }
        Command::Index { kind } => {
            let a = match kind {
                IndexCommand::Bm25(a) | IndexCommand::Dense(a) => a,
            };
            apply_corpus(&mut c, &a.corpus);
            set(&mut c.index, a.out.clone());
            set(&mut c.bm25_k1, a.bm25_k1);
            set(&mut c.bm25_b, a.bm25_b);
            set(
                &mut c.embedder,
                a.embedder.map(|e| match e {
                    Embedder::Local => "local".into(),
                    Embedder::Remote => "remote".into(),
                }),
            );
            set_opt(&mut c.embed_url, a.embed_url.clone());
            set(&mut c.dim, a.dim);
            set(&mut c.ann_threshold, a.ann_threshold);
            set(&mut c.hnsw_m, a.hnsw_m);
            set(&mut c.ef_construction, a.ef_construction);
            set(&mut c.ef_search, a.ef_search);
            set(&mut c.seed, a.seed);
        }
        Command::Mine(a) => {
            set_opt(&mut c.qa, a.qa.clone());
            set(&mut c.index, a.index.clone());
            set(&mut c.k, a.k);
            set(&mut c.pool, a.pool);
            set(&mut c.negatives, a.negatives);
            set(&mut c.seed, a.seed);
            set_opt(&mut c.out, a.out.clone());
        }
        Command::Retrieve(a) => {
            set(&mut c.index, a.index.clone());
            set(&mut c.retriever, a.retriever.map(retriever_name));
            set(&mut c.ef_search, a.ef_search);
        }
        Command::Answer(a) => {
            set_opt(&mut c.qa, a.qa.clone());
            set(&mut c.index, a.index.clone());
            set(&mut c.n_docs, a.n_docs);
            set(&mut c.beam, a.beam);
            set(&mut c.max_len, a.max_len);
            set(&mut c.temperature, a.temperature);
            set(&mut c.retriever, a.retriever.map(retriever_name));
            set(&mut c.generator, a.generator.map(generator_name));
            set_opt(&mut c.generator_url, a.generator_url.clone());
            set_opt(&mut c.memory, a.memory.clone());
            c.oracle |= a.oracle;
            set(&mut c.ef_search, a.ef_search);
            set_opt(&mut c.out, a.out.clone());
        }
        Command::Eval(a) => {
            set_opt(&mut c.qa, a.qa.clone());
            set(&mut c.metrics, a.metrics.clone());
            c.oracle |= a.oracle;
            set_opt(&mut c.out, a.out.clone());
        }
        Command::Serve(a) => {
            set(&mut c.index, a.index.clone());
            set(&mut c.retriever, a.retriever.map(retriever_name));
            set(&mut c.generator, a.generator.map(generator_name));
            set_opt(&mut c.generator_url, a.generator_url.clone());
            set_opt(&mut c.memory, a.memory.clone());
            set(&mut c.n_docs, a.n_docs);
        }
        Command::Smoke(a) => set(&mut c.seed, a.seed),
        Command::PrintConfig => {}
    }
    Ok(c)
}

fn require<'a, T>(v: &'a Option<T>, path: &[&str], flag: &str) -> anyhow::Result<&'a T> {
    v.as_ref().ok_or_else(|| usage(path, &format!("missing {flag}")))
}

fn write_or_stdout(out: Option<&Path>, bytes: &[u8]) -> anyhow::Result<()> {
    match out {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
            std::fs::write(p, bytes).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    let cfg = resolve(&cli)?;
    tracing::info!(config = %serde_json::to_string(&cfg)?, "resolved configuration");
    match cli.command {
        Command::PrintConfig => write_or_stdout(None, cfg.to_toml().as_bytes()),
        Command::Ingest(a) => {
            if cfg.corpus.is_none() && a.corpus.csv.is_empty() {
                return Err(usage(&["ingest"], "missing --corpus"));
            }
            pipeline::ingest(&cfg, &a.corpus.csv)?;
            Ok(())
        }
        Command::Index { kind } => {
            let (which, a, name) = match &kind {
                IndexCommand::Bm25(a) => (IndexKind::Bm25, a, "bm25"),
                IndexCommand::Dense(a) => (IndexKind::Dense, a, "dense"),
            };
            let have_ingested = cfg.index.join(trag_core::store::META_FILE).exists();
            if cfg.corpus.is_none() && a.corpus.csv.is_empty() && !have_ingested {
                return Err(usage(&["index", name], "missing --corpus"));
            }
            build_index(&cfg, which, &a.corpus.csv)?;
            Ok(())
        }
        Command::Mine(_) => {
            require(&cfg.qa, &["mine"], "--qa")?;
            let lines = mine_negatives(&cfg)?;
            write_or_stdout(cfg.out.as_deref(), &lines)
        }
        Command::Retrieve(a) => {
            let lines = retrieve(&cfg, &a.query, a.top, a.exact)?;
            write_or_stdout(None, &lines)
        }
        Command::Answer(a) => match (&a.question, &cfg.qa) {
            (Some(q), _) => {
                if cfg.oracle {
                    return Err(usage(&["answer"], "--oracle needs --qa"));
                }
                let lines = pipeline::answer_one(&cfg, q)?;
                write_or_stdout(cfg.out.as_deref(), &lines)
            }
            (None, Some(_)) => {
                let lines = answer_batch(&cfg)?;
                write_or_stdout(cfg.out.as_deref(), &lines)
            }
            (None, None) => Err(usage(&["answer"], "missing --question or --qa")),
        },
        Command::Eval(a) => {
            require(&cfg.qa, &["eval"], "--qa")?;
            let report = eval_predictions(&cfg, &a.predictions)?;
            write_or_stdout(cfg.out.as_deref(), &report)
        }
        Command::Serve(a) => serve(&cfg, &a),
        Command::Smoke(a) => {
            let workdir = match a.workdir {
                Some(d) => d,
                None => std::env::temp_dir().join(format!("trag-smoke-{}", std::process::id())),
            };
            let outcome = pipeline_smoke(&cfg, &workdir)?;
            write_or_stdout(None, &outcome.report_json)?;
            if !outcome.passed() {
                bail!("smoke thresholds not met: {}", outcome.failures.join("; "));
            }
            Ok(())
        }
    }
}

fn serve(cfg: &RunConfig, a: &ServeArgs) -> anyhow::Result<()> {
    use trag_service::{GeneratorSpec, RetrieverKind, ServiceConfig};
    // defaults < config file < environment < flags
    let mut sc = ServiceConfig::from_lookup(|k| {
        std::env::var(k).ok().or_else(|| match k {
            "TRAG_INDEX_DIR" => Some(cfg.index.display().to_string()),
            "TRAG_GENERATOR" => Some(cfg.generator.clone()),
            "TRAG_GENERATOR_URL" => cfg.generator_url.clone(),
            "TRAG_TOY_MEMORY" => cfg.memory.as_ref().map(|p| p.display().to_string()),
            "TRAG_RETRIEVER" => Some(cfg.retriever.clone()),
            "TRAG_N_DOCS" => Some(cfg.n_docs.to_string()),
            _ => None,
        })
    })
    .map_err(|e| anyhow::Error::new(UsageError(e)))?;
    if let Some(addr) = &a.addr {
        sc.addr = addr
            .parse()
            .map_err(|e| usage(&["serve"], &format!("--addr {addr:?}: {e}")))?;
    }
    set(&mut sc.index_dir, a.index.clone());
    if let Some(r) = a.retriever {
        sc.retriever = match r {
            RetrieverArg::Bm25 => RetrieverKind::Bm25,
            RetrieverArg::Dense => RetrieverKind::Dense,
        };
    }
    match a.generator {
        Some(GeneratorArg::Toy) => {
            if !matches!(sc.generator, GeneratorSpec::Toy { .. }) {
                sc.generator = GeneratorSpec::Toy {
                    memory: cfg.memory.clone(),
                };
            }
        }
        Some(GeneratorArg::Remote) => {
            let base_url = a
                .generator_url
                .clone()
                .or_else(|| cfg.generator_url.clone())
                .ok_or_else(|| usage(&["serve"], "--generator remote needs --generator-url"))?;
            sc.generator = GeneratorSpec::Remote { base_url };
        }
        None => {}
    }
    if let (GeneratorSpec::Toy { memory }, Some(m)) = (&mut sc.generator, &a.memory) {
        *memory = Some(m.clone());
    }
    set(&mut sc.rag.n_docs, a.n_docs);
    set_opt(&mut sc.cors_origin, a.cors_origin.clone());
    sc.rag.decode.max_len = cfg.max_len;
    sc.rag.temperature = cfg.temperature;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting runtime")?;
    rt.block_on(trag_service::serve(sc)).context("serving")
}

fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_env("TRAG_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_target(false)
        .try_init();
}

/// Parses `argv`, runs the command and returns the process exit code.
/// `{:#}` without the repetition that appears when an error both prints
/// and exposes its source.
fn error_chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if out.contains(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            if let Some(u) = e.downcast_ref::<UsageError>() {
                eprintln!("error: {u}");
                1
            } else {
                eprintln!("error: {}", error_chain(&e));
                2
            }
        }
    }
}
