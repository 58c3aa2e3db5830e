use serde::Serialize;

use super::decode::{beam_decode, AnswerResult, DecodeConfig};
use super::generator::{Generator, Prompt};
use super::{assemble_prompt, retrieval_priors, RagError};
use crate::bm25::{Bm25Error, Bm25Index, SegmentRef};
use crate::dense::{DenseIndex, EmbeddingProvider, SearchMode};
use crate::linearize::Segment;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievedCandidate {
    pub segment: SegmentRef,
    pub table_id: String,
    pub score: f64,
}

/// Returns at most `n` candidates, best first, at most one per table.
pub trait Retriever {
    fn retrieve(&self, question: &str, n: usize) -> Result<Vec<RetrievedCandidate>, RagError>;
}

pub struct Bm25Retriever<'a> {
    pub index: &'a Bm25Index,
}

impl Retriever for Bm25Retriever<'_> {
    fn retrieve(&self, question: &str, n: usize) -> Result<Vec<RetrievedCandidate>, RagError> {
        match self.index.search(question, n) {
            Ok(hits) => Ok(hits
                .into_iter()
                .map(|h| RetrievedCandidate {
                    segment: h.segment,
                    table_id: h.table_id,
                    score: h.score,
                })
                .collect()),
            Err(Bm25Error::EmptyQuery) => Ok(Vec::new()),
            Err(e) => Err(RagError::Retrieval(e.to_string())),
        }
    }
}

pub struct DenseRetriever<'a> {
    pub index: &'a DenseIndex,
    pub provider: &'a dyn EmbeddingProvider,
    pub mode: SearchMode,
}

impl Retriever for DenseRetriever<'_> {
    fn retrieve(&self, question: &str, n: usize) -> Result<Vec<RetrievedCandidate>, RagError> {
        let err = |e: crate::dense::DenseError| RagError::Retrieval(e.to_string());
        let q = self.provider.embed_query(question).map_err(err)?;
        Ok(self
            .index
            .knn(&q, n, self.mode, true)
            .map_err(err)?
            .into_iter()
            .map(|h| RetrievedCandidate {
                segment: h.segment,
                table_id: h.table_id,
                score: h.score,
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RagConfig {
    pub n_docs: usize,
    pub temperature: f64,
    pub decode: DecodeConfig,
}

impl Default for RagConfig {
    fn default() -> Self {
        Self {
            n_docs: 5,
            temperature: 1.0,
            decode: DecodeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Answered {
    pub candidates: Vec<RetrievedCandidate>,
    pub priors: Vec<f64>,
    pub answers: Vec<AnswerResult>,
}

pub fn answer<G: Generator + ?Sized>(
    question: &str,
    segments: &[Segment],
    retriever: &dyn Retriever,
    generator: &G,
    config: &RagConfig,
) -> Result<Answered, RagError> {
    if config.n_docs == 0 {
        return Err(RagError::Config("n_docs must be positive".into()));
    }
    let candidates = retriever.retrieve(question, config.n_docs)?;
    answer_with_candidates(question, segments, candidates, generator, config)
}

pub fn answer_with_candidates<G: Generator + ?Sized>(
    question: &str,
    segments: &[Segment],
    candidates: Vec<RetrievedCandidate>,
    generator: &G,
    config: &RagConfig,
) -> Result<Answered, RagError> {
    if candidates.is_empty() {
        return Err(RagError::NoCandidates);
    }
    let prompts = candidates
        .iter()
        .map(|c| {
            let seg = segments
                .get(c.segment.0 as usize)
                .ok_or_else(|| RagError::Retrieval(format!("segment {} out of range", c.segment.0)))?;
            Ok(Prompt {
                question: question.to_owned(),
                table_id: c.table_id.clone(),
                text: assemble_prompt(question, &seg.text),
            })
        })
        .collect::<Result<Vec<_>, RagError>>()?;
    let scores: Vec<f64> = candidates.iter().map(|c| c.score).collect();
    let priors = retrieval_priors(&scores, config.temperature)?;
    let answers = beam_decode(&prompts, &priors, generator, &config.decode)?;
    Ok(Answered {
        candidates,
        priors,
        answers,
    })
}

/// The gold table's best-scoring segment under BM25, used as the only
/// candidate when retrieval is bypassed.
pub fn oracle_candidate(
    table_id: &str,
    question: &str,
    segments: &[Segment],
    index: &Bm25Index,
) -> Result<RetrievedCandidate, RagError> {
    let scores = match index.segment_scores(question) {
        Ok(s) => s,
        Err(Bm25Error::EmptyQuery) => vec![0.0; segments.len()],
        Err(e) => return Err(RagError::Retrieval(e.to_string())),
    };
    let mut best: Option<(usize, f64)> = None;
    for (i, seg) in segments.iter().enumerate() {
        if seg.table_id != table_id {
            continue;
        }
        let s = scores.get(i).copied().unwrap_or(0.0);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    let (i, score) = best.ok_or_else(|| RagError::UnknownTable(table_id.to_owned()))?;
    Ok(RetrievedCandidate {
        segment: SegmentRef(i as u32),
        table_id: table_id.to_owned(),
        score,
    })
}

/// Provenance tables of the ranked answers, then the remaining retrieved
/// tables in retrieval order; no table repeats.
pub fn prediction_ranking(answered: &Answered) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let provenance = answered.answers.iter().map(|a| &a.provenance_table_id);
    let retrieved = answered.candidates.iter().map(|c| &c.table_id);
    for t in provenance.chain(retrieved) {
        if !out.contains(t) {
            out.push(t.clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::generator::{ToyGenerator, DEFAULT_SMOOTHING};
    use super::*;
    use crate::bm25::Bm25Params;
    use crate::corpus::TableDoc;
    use crate::linearize::{segment, DEFAULT_BUDGET};
    use crate::tokenize::SimpleTokenizer;

    fn fixture() -> (Vec<Segment>, Bm25Index) {
        let tables = [
            TableDoc::new(
                "ikar",
                Some("Ikar".into()),
                vec!["Role".into(), "Name".into()],
                vec![vec!["Editor".into(), "A. Smith".into()]],
            )
            .unwrap(),
            TableDoc::new(
                "zeph",
                Some("Zephyr Almanac".into()),
                vec!["Role".into(), "Name".into()],
                vec![vec!["Editor".into(), "B. Jones".into()]],
            )
            .unwrap(),
        ];
        let segs: Vec<Segment> = tables
            .iter()
            .flat_map(|t| segment(t, DEFAULT_BUDGET, &SimpleTokenizer).unwrap())
            .collect();
        let idx = Bm25Index::build(&segs, Bm25Params::default()).unwrap();
        (segs, idx)
    }

    #[test]
    fn end_to_end_answer() {
        let (segs, idx) = fixture();
        let q = "Who was the editor for Ikar?";
        let mut g = ToyGenerator::new(DEFAULT_SMOOTHING);
        g.memorize("ikar", q, "A. Smith").unwrap();
        g.memorize("zeph", q, "B. Jones").unwrap();
        let r = Bm25Retriever { index: &idx };
        let out = answer(q, &segs, &r, &g, &RagConfig::default()).unwrap();
        assert_eq!(out.candidates[0].table_id, "ikar");
        assert_eq!(out.answers[0].text, "A. Smith");
        assert_eq!(out.answers[0].provenance_table_id, "ikar");
        assert_eq!(prediction_ranking(&out), vec!["ikar", "zeph"]);
        let p: f64 = out.priors.iter().sum();
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_overlap_means_no_candidates() {
        let (segs, idx) = fixture();
        let g = ToyGenerator::new(DEFAULT_SMOOTHING);
        let r = Bm25Retriever { index: &idx };
        let err = answer("qwerty", &segs, &r, &g, &RagConfig::default()).unwrap_err();
        assert!(matches!(err, RagError::NoCandidates));
    }

    #[test]
    fn oracle_picks_gold_table() {
        let (segs, idx) = fixture();
        let c = oracle_candidate("zeph", "editor Ikar", &segs, &idx).unwrap();
        assert_eq!(c.table_id, "zeph");
        assert!(oracle_candidate("nope", "x", &segs, &idx).is_err());
    }
}
