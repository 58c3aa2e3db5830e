use std::cmp::Ordering;

use serde::Serialize;

use super::generator::{Generator, Prompt, TokenId};
use super::{marginalize_step, RagError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DecodeConfig {
    pub beam_width: usize,
    /// Decoding steps, the end-of-sequence step included.
    pub max_len: usize,
    /// Tokens required before end-of-sequence may be emitted.
    pub min_len: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam_width: 4,
            max_len: 32,
            min_len: 1,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<(), RagError> {
        if self.beam_width == 0 || self.max_len == 0 || self.min_len > self.max_len {
            return Err(RagError::Config(format!(
                "beam_width={} max_len={} min_len={}",
                self.beam_width, self.max_len, self.min_len
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnswerResult {
    pub text: String,
    /// Answer tokens, end-of-sequence excluded.
    pub tokens: Vec<TokenId>,
    /// `ln Σ_z p(z|x) · p(y|x,z)`.
    pub log_prob: f64,
    /// Sum of log marginal next-token probabilities along the beam.
    pub token_log_prob: f64,
    /// Index into the candidate list of `argmax_z p(z|x) · p(y|x,z)`.
    pub provenance: usize,
    pub provenance_table_id: String,
    /// Posterior `p(z|x,y)` of the provenance candidate.
    pub provenance_score: f64,
    /// Stopped by the length limit rather than end-of-sequence.
    pub truncated: bool,
}

#[derive(Debug, Clone)]
struct Hyp {
    tokens: Vec<TokenId>,
    token_lp: f64,
    /// `ln p(prefix | x, z)` per candidate.
    cand_lp: Vec<f64>,
}

#[derive(Debug)]
struct Finished {
    hyp: Hyp,
    truncated: bool,
}

fn by_score_then_tokens(a_lp: f64, a: &[TokenId], b_lp: f64, b: &[TokenId]) -> Ordering {
    b_lp.total_cmp(&a_lp).then_with(|| a.cmp(b))
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn step_dists<G: Generator + ?Sized>(
    generator: &G,
    prompts: &[Prompt],
    prefix: &[TokenId],
) -> Result<Vec<Vec<f64>>, RagError> {
    prompts.iter().map(|p| generator.next_token_dist(p, prefix)).collect()
}

/// Beam search with per-token marginalization over `prompts` weighted by
/// `priors`.
///
/// Each step extends every live beam by every token, keeps the best
/// `beam_width` unfinished extensions by token-level score and retires
/// extensions ending in end-of-sequence (or reaching `max_len`). Decoding
/// stops when no live beam remains. Finished hypotheses are ranked by the
/// sequence-level mixture probability; ties go to the lexicographically
/// smaller token sequence. At most `beam_width` results are returned.
pub fn beam_decode<G: Generator + ?Sized>(
    prompts: &[Prompt],
    priors: &[f64],
    generator: &G,
    config: &DecodeConfig,
) -> Result<Vec<AnswerResult>, RagError> {
    config.validate()?;
    if prompts.is_empty() {
        return Err(RagError::NoCandidates);
    }
    if prompts.len() != priors.len() {
        return Err(RagError::LengthMismatch {
            priors: priors.len(),
            dists: prompts.len(),
        });
    }
    let vocab = generator.vocab();
    let eos = vocab.eos();
    let mut live = vec![Hyp {
        tokens: Vec::new(),
        token_lp: 0.0,
        cand_lp: vec![0.0; prompts.len()],
    }];
    let mut finished: Vec<Finished> = Vec::new();

    while !live.is_empty() {
        let mut next: Vec<Hyp> = Vec::new();
        for hyp in &live {
            let dists = step_dists(generator, prompts, &hyp.tokens)?;
            for d in &dists {
                if d.len() != vocab.len() {
                    return Err(RagError::InvalidDistribution(format!(
                        "length {} for vocabulary of {}",
                        d.len(),
                        vocab.len()
                    )));
                }
            }
            let marg = marginalize_step(priors, &dists)?;
            for (t, &p) in marg.iter().enumerate() {
                let t = t as TokenId;
                if p <= 0.0 || (t == eos && hyp.tokens.len() < config.min_len) {
                    continue;
                }
                let cand_lp = hyp
                    .cand_lp
                    .iter()
                    .zip(&dists)
                    .map(|(lp, d)| lp + d[t as usize].ln())
                    .collect();
                let mut tokens = hyp.tokens.clone();
                let step = tokens.len() + 1;
                if t != eos {
                    tokens.push(t);
                }
                let ext = Hyp {
                    tokens,
                    token_lp: hyp.token_lp + p.ln(),
                    cand_lp,
                };
                if t == eos {
                    finished.push(Finished {
                        hyp: ext,
                        truncated: false,
                    });
                } else if step >= config.max_len {
                    finished.push(Finished {
                        hyp: ext,
                        truncated: true,
                    });
                } else {
                    next.push(ext);
                }
            }
        }
        next.sort_by(|a, b| by_score_then_tokens(a.token_lp, &a.tokens, b.token_lp, &b.tokens));
        next.truncate(config.beam_width);
        live = next;
    }

    let log_priors: Vec<f64> = priors.iter().map(|p| p.ln()).collect();
    let mut results: Vec<AnswerResult> = finished
        .into_iter()
        .map(|f| {
            let joint: Vec<f64> = log_priors.iter().zip(&f.hyp.cand_lp).map(|(a, b)| a + b).collect();
            let log_prob = log_sum_exp(joint.iter().copied());
            let mut best = 0;
            for (z, &j) in joint.iter().enumerate() {
                if j > joint[best] {
                    best = z;
                }
            }
            let provenance_score = if log_prob == f64::NEG_INFINITY {
                0.0
            } else {
                (joint[best] - log_prob).exp()
            };
            AnswerResult {
                text: vocab.decode(&f.hyp.tokens),
                tokens: f.hyp.tokens,
                log_prob,
                token_log_prob: f.hyp.token_lp,
                provenance: best,
                provenance_table_id: prompts[best].table_id.clone(),
                provenance_score,
                truncated: f.truncated,
            }
        })
        .collect();
    results.sort_by(|a, b| by_score_then_tokens(a.log_prob, &a.tokens, b.log_prob, &b.tokens));
    results.truncate(config.beam_width);
    Ok(results)
}

/// Cumulative token-level log probability after each token of `tokens`
/// (end-of-sequence may be included as the last token).
pub fn running_log_probs<G: Generator + ?Sized>(
    prompts: &[Prompt],
    priors: &[f64],
    generator: &G,
    tokens: &[TokenId],
) -> Result<Vec<f64>, RagError> {
    let mut out = Vec::with_capacity(tokens.len());
    let mut acc = 0.0;
    for i in 0..tokens.len() {
        let dists = step_dists(generator, prompts, &tokens[..i])?;
        let marg = marginalize_step(priors, &dists)?;
        acc += marg[tokens[i] as usize].ln();
        out.push(acc);
    }
    Ok(out)
}
