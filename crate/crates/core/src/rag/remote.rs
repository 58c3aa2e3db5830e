//! HTTP client for an external generator.
//!
//! `GET {base}/vocab` returns `{"tokens": [...], "eos": "..."}` once at
//! construction. `POST {base}/next_token` with
//! `{"prompt": "...", "prefix_tokens": ["...", ...]}` returns
//! `{"probs": [...]}` aligned with the vocabulary.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use ureq::Agent;

use super::generator::{check_distribution, Generator, Prompt, TokenId, Vocab};
use super::RagError;

/// Remote models usually compute in single precision; sums within this
/// tolerance are renormalized, anything further off is rejected.
const SUM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteGeneratorConfig {
    pub base_url: String,
    pub timeout_ms: u64,
}

impl RemoteGeneratorConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            timeout_ms: 30_000,
        }
    }
}

#[derive(Deserialize)]
struct VocabResponse {
    tokens: Vec<String>,
    eos: String,
}

#[derive(Serialize)]
struct NextTokenRequest<'a> {
    prompt: &'a str,
    prefix_tokens: Vec<&'a str>,
}

#[derive(Deserialize)]
struct NextTokenResponse {
    probs: Vec<f64>,
}

pub struct RemoteGenerator {
    base: String,
    agent: Agent,
    vocab: Vocab,
}

fn remote_err(e: impl std::fmt::Display) -> RagError {
    RagError::Generator(e.to_string())
}

impl RemoteGenerator {
    pub fn connect(config: &RemoteGeneratorConfig) -> Result<Self, RagError> {
        let agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .build()
            .new_agent();
        let base = config.base_url.trim_end_matches('/').to_owned();
        let resp: VocabResponse = agent
            .get(&format!("{base}/vocab"))
            .call()
            .map_err(remote_err)?
            .body_mut()
            .read_json()
            .map_err(remote_err)?;
        let vocab = Vocab::from_ordered(resp.tokens, &resp.eos)?;
        Ok(Self { base, agent, vocab })
    }
}

impl Generator for RemoteGenerator {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn next_token_dist(&self, prompt: &Prompt, prefix: &[TokenId]) -> Result<Vec<f64>, RagError> {
        let req = NextTokenRequest {
            prompt: &prompt.text,
            prefix_tokens: prefix.iter().map(|&t| self.vocab.token(t)).collect(),
        };
        let mut resp: NextTokenResponse = self
            .agent
            .post(&format!("{}/next_token", self.base))
            .send_json(&req)
            .map_err(remote_err)?
            .body_mut()
            .read_json()
            .map_err(remote_err)?;
        check_distribution(&resp.probs, self.vocab.len(), SUM_TOLERANCE)?;
        let total: f64 = resp.probs.iter().sum();
        for p in &mut resp.probs {
            *p /= total;
        }
        Ok(resp.probs)
    }
}
