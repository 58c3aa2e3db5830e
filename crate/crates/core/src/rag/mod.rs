//! Retrieval-augmented answer generation.
//!
//! The top `n` retrieved segments `z` receive priors `p(z|x)` from a
//! softmax over retrieval scores. Decoding marginalizes per token,
//!
//! ```text
//! p(y_i | x, y_<i) = Σ_z p(z|x) · p_θ(y_i | x, z, y_<i)
//! ```
//!
//! and finished hypotheses are reported with the sequence-level mixture
//! `p(y|x) = Σ_z p(z|x) · Π_i p_θ(y_i | x, z, y_<i)` together with the
//! candidate that contributes most to it.

mod decode;
mod generator;
mod pipeline;
mod remote;

use thiserror::Error;

pub use decode::{beam_decode, running_log_probs, AnswerResult, DecodeConfig};
pub use generator::{
    check_distribution, Generator, Prompt, Serialized, TokenId, ToyGenerator, Vocab, DEFAULT_SMOOTHING, EOS,
};
pub use pipeline::{
    answer, answer_with_candidates, oracle_candidate, prediction_ranking, Answered, Bm25Retriever, DenseRetriever,
    RagConfig, RetrievedCandidate, Retriever,
};
pub use remote::{RemoteGenerator, RemoteGeneratorConfig};

#[derive(Debug, Error)]
pub enum RagError {
    #[error("no candidate passages to condition on")]
    NoCandidates,
    #[error("{priors} priors for {dists} distributions")]
    LengthMismatch { priors: usize, dists: usize },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("vocabulary: {0}")]
    Vocab(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("retrieval failed: {0}")]
    Retrieval(String),
    #[error("generator failed: {0}")]
    Generator(String),
    #[error("unknown table {0}")]
    UnknownTable(String),
}

pub fn assemble_prompt(question: &str, context: &str) -> String {
    format!("question: {question} context: {context}")
}

/// Softmax of `scores / temperature`, shifted by the maximum for stability.
pub fn retrieval_priors(scores: &[f64], temperature: f64) -> Result<Vec<f64>, RagError> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(RagError::Config(format!("temperature {temperature}")));
    }
    if scores.is_empty() {
        return Err(RagError::NoCandidates);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(RagError::Retrieval("non-finite retrieval score".into()));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| ((s - max) / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Convex combination of per-candidate next-token distributions.
pub fn marginalize_step(priors: &[f64], dists: &[Vec<f64>]) -> Result<Vec<f64>, RagError> {
    if priors.len() != dists.len() {
        return Err(RagError::LengthMismatch {
            priors: priors.len(),
            dists: dists.len(),
        });
    }
    let Some(first) = dists.first() else {
        return Err(RagError::NoCandidates);
    };
    let v = first.len();
    let mut out = vec![0.0; v];
    for (w, d) in priors.iter().zip(dists) {
        if d.len() != v {
            return Err(RagError::InvalidDistribution(format!(
                "distributions of length {v} and {}",
                d.len()
            )));
        }
        for (o, p) in out.iter_mut().zip(d) {
            *o += w * p;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn priors_are_softmax() {
        let p = retrieval_priors(&[1.0, 2.0, 3.0], 1.0).unwrap();
        let z: f64 = [1f64, 2., 3.].iter().map(|s| s.exp()).sum();
        for (pi, s) in p.iter().zip([1f64, 2., 3.]) {
            assert!((pi - s.exp() / z).abs() < 1e-15);
        }
        let big = retrieval_priors(&[1000.0, 1000.0], 1.0).unwrap();
        assert_eq!(big, vec![0.5, 0.5]);
        let hot = retrieval_priors(&[0.0, 1.0], 2.0).unwrap();
        assert!((hot[1] - 0.5f64.exp() / (1.0 + 0.5f64.exp())).abs() < 1e-15);
        assert!(retrieval_priors(&[], 1.0).is_err());
        assert!(retrieval_priors(&[1.0], 0.0).is_err());
    }

    #[test]
    fn marginalize_mixes() {
        let m = marginalize_step(&[0.25, 0.75], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(m, vec![0.25, 0.75]);
        assert!(matches!(
            marginalize_step(&[1.0], &[vec![1.0], vec![1.0]]),
            Err(RagError::LengthMismatch { priors: 1, dists: 2 })
        ));
    }

    #[test]
    fn prompt_layout() {
        assert_eq!(assemble_prompt("who?", "a | b *"), "question: who? context: a | b *");
    }
}
