//! Soft hard-negative mining.
//!
//! For every question a BM25 pool is retrieved, all hits on the gold table
//! are discarded, and negatives are drawn uniformly without replacement
//! from the top `k` remaining tables. Each question gets its own RNG stream
//! derived from the run seed and the qid, so output does not depend on how
//! the work is scheduled.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bm25::{Bm25Error, Bm25Index, ScoredHit};
use crate::corpus::QaExample;
use crate::tokenize::fnv1a64;

#[derive(Debug, Error)]
pub enum MinerError {
    #[error("invalid miner config: {0}")]
    Config(String),
    #[error("question {qid:?}: {source}")]
    Search { qid: String, source: Bm25Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinerConfig {
    pub pool_size: usize,
    pub k: usize,
    pub negatives_per_question: usize,
    pub rng_seed: u64,
}

impl Default for MinerConfig {
    fn default() -> Self {
        Self {
            pool_size: 100,
            k: 3,
            negatives_per_question: 1,
            rng_seed: 17,
        }
    }
}

impl MinerConfig {
    pub fn validate(&self) -> Result<(), MinerError> {
        if self.pool_size == 0 || self.k == 0 || self.negatives_per_question == 0 {
            return Err(MinerError::Config("sizes must be positive".into()));
        }
        if self.k > self.pool_size {
            return Err(MinerError::Config(format!(
                "k={} exceeds pool size {}",
                self.k, self.pool_size
            )));
        }
        if self.negatives_per_question > self.k {
            return Err(MinerError::Config(format!(
                "{} negatives per question exceeds k={}",
                self.negatives_per_question, self.k
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinedNegative {
    pub qid: String,
    pub negative_table_id: String,
    /// 1-based rank within the pool after the gold table was removed.
    pub bm25_rank: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MiningOutcome {
    pub negatives: Vec<MinedNegative>,
    /// Questions whose pool held no non-gold table.
    pub empty_pool: Vec<String>,
}

/// RNG stream for one question.
pub fn question_rng(seed: u64, qid: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(qid.as_bytes()))
}

/// Draws negatives for one question from an already retrieved pool.
pub fn mine_from_pool(qid: &str, gold_table_id: &str, pool: &[ScoredHit], config: &MinerConfig) -> Vec<MinedNegative> {
    let non_gold: Vec<&ScoredHit> = pool.iter().filter(|h| h.table_id != gold_table_id).collect();
    let window = config.k.min(non_gold.len());
    if window == 0 {
        return Vec::new();
    }
    let amount = config.negatives_per_question.min(window);
    let mut rng = question_rng(config.rng_seed, qid);
    index::sample(&mut rng, window, amount)
        .into_iter()
        .map(|i| MinedNegative {
            qid: qid.to_owned(),
            negative_table_id: non_gold[i].table_id.clone(),
            bm25_rank: i + 1,
        })
        .collect()
}

pub fn mine(examples: &[QaExample], index: &Bm25Index, config: &MinerConfig) -> Result<MiningOutcome, MinerError> {
    config.validate()?;
    let per_question: Vec<Result<Vec<MinedNegative>, MinerError>> = examples
        .par_iter()
        .map(|ex| {
            // the gold table may occupy one pool slot
            let pool = match index.search(&ex.question, config.pool_size + 1) {
                Ok(p) => p,
                Err(Bm25Error::EmptyQuery) => Vec::new(),
                Err(source) => {
                    return Err(MinerError::Search {
                        qid: ex.qid.clone(),
                        source,
                    })
                }
            };
            let pool: Vec<ScoredHit> = pool
                .into_iter()
                .filter(|h| h.table_id != ex.gold_table_id)
                .take(config.pool_size)
                .collect();
            Ok(mine_from_pool(&ex.qid, &ex.gold_table_id, &pool, config))
        })
        .collect();

    let mut outcome = MiningOutcome::default();
    for (ex, r) in examples.iter().zip(per_question) {
        let negs = r?;
        if negs.is_empty() {
            tracing::warn!(qid = %ex.qid, "empty negative pool");
            outcome.empty_pool.push(ex.qid.clone());
        }
        outcome.negatives.extend(negs);
    }
    Ok(outcome)
}
