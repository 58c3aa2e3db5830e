//! Run configuration. A TOML file whose keys mirror the command-line flags
//! one to one; flags given on the command line win over the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub qa: Option<PathBuf>,
    pub index: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: u64,

    pub segment_budget: usize,
    pub bm25_k1: f64,
    pub bm25_b: f64,

    pub embedder: String,
    pub embed_url: Option<String>,
    pub dim: usize,
    pub ann_threshold: usize,
    pub hnsw_m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,

    pub pool: usize,
    pub k: usize,
    pub negatives: usize,

    pub retriever: String,
    pub generator: String,
    pub generator_url: Option<String>,
    pub memory: Option<PathBuf>,
    pub n_docs: usize,
    pub beam: usize,
    pub max_len: usize,
    pub temperature: f64,

    pub metrics: String,
    pub oracle: bool,

    /// Hyperparameters for users who fine-tune the encoder and generator
    /// elsewhere. Nothing in this tool reads them.
    pub training: TrainingConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub gradient_accumulation_steps: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            epochs: 2,
            learning_rate: 3e-5,
            gradient_accumulation_steps: 64,
        }
    }
}

pub const DEFAULT_METRICS: &str = "em,f1,mrr,hit1,r@1,r@10,r@50,p@5,p@10,ndcg@5,ndcg@10,map";

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            qa: None,
            index: PathBuf::from("idx"),
            out: None,
            seed: 17,
            segment_budget: trag_core::linearize::DEFAULT_BUDGET,
            bm25_k1: 0.9,
            bm25_b: 0.4,
            embedder: "local".into(),
            embed_url: None,
            dim: 128,
            ann_threshold: 1000,
            hnsw_m: 64,
            ef_construction: 200,
            ef_search: 100,
            pool: 100,
            k: 3,
            negatives: 1,
            retriever: "bm25".into(),
            generator: "toy".into(),
            generator_url: None,
            memory: None,
            n_docs: 5,
            beam: 4,
            max_len: 32,
            temperature: 1.0,
            metrics: DEFAULT_METRICS.into(),
            oracle: false,
            training: TrainingConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("reading config {}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| anyhow::anyhow!("config {}: {e}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
