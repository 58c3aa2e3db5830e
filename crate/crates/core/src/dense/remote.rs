//! HTTP client for an external embedding service.
//!
//! Wire protocol: `POST {base}/embed` with
//! `{"texts": [...], "mode": "query" | "passage"}`, answered by
//! `{"vectors": [[...], ...]}` in request order.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use ureq::Agent;

use super::{check_vector, DenseError, EmbeddingProvider};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteProviderConfig {
    pub base_url: String,
    pub dim: usize,
    pub timeout_ms: u64,
    pub batch_size: usize,
    pub max_in_flight: usize,
}

impl RemoteProviderConfig {
    pub fn new(base_url: impl Into<String>, dim: usize) -> Self {
        Self {
            base_url: base_url.into(),
            dim,
            timeout_ms: 30_000,
            batch_size: 64,
            max_in_flight: 4,
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
    mode: &'static str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

pub struct RemoteProvider {
    config: RemoteProviderConfig,
    agent: Agent,
}

impl RemoteProvider {
    pub fn new(config: RemoteProviderConfig) -> Result<Self, DenseError> {
        if config.batch_size == 0 || config.max_in_flight == 0 || config.dim == 0 {
            return Err(DenseError::Config(
                "remote provider needs positive dim, batch size and in-flight cap".into(),
            ));
        }
        let agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .build()
            .new_agent();
        Ok(Self { config, agent })
    }

    fn endpoint(&self) -> String {
        format!("{}/embed", self.config.base_url.trim_end_matches('/'))
    }

    fn call(&self, texts: &[&str], mode: &'static str) -> Result<Vec<Vec<f64>>, DenseError> {
        let resp: EmbedResponse = self
            .agent
            .post(&self.endpoint())
            .send_json(EmbedRequest { texts, mode })
            .map_err(|e| DenseError::Remote(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| DenseError::Remote(e.to_string()))?;
        if resp.vectors.len() != texts.len() {
            return Err(DenseError::Remote(format!(
                "sent {} texts, received {} vectors",
                texts.len(),
                resp.vectors.len()
            )));
        }
        for v in &resp.vectors {
            check_vector(v, self.config.dim)?;
        }
        Ok(resp.vectors)
    }

    fn single(&self, text: &str, mode: &'static str) -> Result<Vec<f64>, DenseError> {
        Ok(self.call(&[text], mode)?.remove(0))
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed_query(&self, text: &str) -> Result<Vec<f64>, DenseError> {
        self.single(text, "query")
    }

    fn embed_passage(&self, text: &str) -> Result<Vec<f64>, DenseError> {
        self.single(text, "passage")
    }

    /// Batches of `batch_size`, at most `max_in_flight` requests at a time.
    fn embed_passages(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, DenseError> {
        let batches: Vec<&[&str]> = texts.chunks(self.config.batch_size).collect();
        let mut out = Vec::with_capacity(texts.len());
        for wave in batches.chunks(self.config.max_in_flight) {
            let results: Vec<Result<Vec<Vec<f64>>, DenseError>> = std::thread::scope(|s| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|batch| s.spawn(move || self.call(batch, "passage")))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| {
                        h.join()
                            .unwrap_or_else(|_| Err(DenseError::Remote("worker panicked".into())))
                    })
                    .collect()
            });
            for r in results {
                out.extend(r?);
            }
        }
        Ok(out)
    }
}
