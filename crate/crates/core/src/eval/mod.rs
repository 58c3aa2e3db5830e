//! Answer and ranking metrics.
//!
//! Answer strings are compared after SQuAD-style normalization. Ranking
//! metrics treat table relevance as binary; most datasets supply one gold
//! table per question, but every formula below also handles gold sets.

mod report;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use report::{evaluate, load_predictions, parse_predictions, EvalOptions, Metric, Prediction, SplitStats};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no gold table for question {0:?}")]
    MissingGold(String),
    #[error("question {qid:?}: table {table_id:?} appears twice in the ranking")]
    DuplicateTable { qid: String, table_id: String },
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
    #[error("malformed predictions on line {line}: {reason}")]
    MalformedPrediction { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

// Unicode punctuation (P*) plus every ASCII punctuation character, so the
// set is a superset of Python's `string.punctuation`.
static PUNCT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[\p{P}!-/:-@\[-`{-~]").expect("valid regex"));
static ARTICLES: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(a|an|the)\b").expect("valid regex"));

/// Lowercase, strip punctuation, drop the articles a/an/the, collapse
/// whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lower = s.to_lowercase();
    let no_punct = PUNCT.replace_all(&lower, "");
    let no_articles = ARTICLES.replace_all(&no_punct, " ");
    no_articles.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn answer_tokens(s: &str) -> Vec<String> {
    normalize_answer(s).split_whitespace().map(str::to_owned).collect()
}

/// Multiset token F1. Two empty lists score 1, one empty list scores 0.
pub fn token_f1(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return if pred.is_empty() && gold.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for g in gold {
        *counts.entry(g.as_str()).or_default() += 1;
    }
    let mut common = 0usize;
    for p in pred {
        if let Some(c) = counts.get_mut(p.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmF1 {
    pub em: f64,
    pub f1: f64,
}

/// Best exact match and token F1 of `prediction` against any gold answer.
pub fn em_f1(prediction: &str, golds: &[String]) -> EmF1 {
    let pred_norm = normalize_answer(prediction);
    let pred_toks: Vec<String> = pred_norm.split_whitespace().map(str::to_owned).collect();
    let mut best = EmF1 { em: 0.0, f1: 0.0 };
    for g in golds {
        let g_norm = normalize_answer(g);
        if g_norm == pred_norm {
            best.em = 1.0;
        }
        let g_toks: Vec<String> = g_norm.split_whitespace().map(str::to_owned).collect();
        best.f1 = best.f1.max(token_f1(&pred_toks, &g_toks));
    }
    best
}

/// Tables retrieved for one question, rank 1 first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedTables {
    pub qid: String,
    pub ranking: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionMetrics {
    pub qid: String,
    pub values: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub numeric: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n_questions: usize,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub splits: BTreeMap<String, SplitStats>,
    pub per_question: Vec<QuestionMetrics>,
}

/// Mean that does not depend on the order of the inputs.
pub(crate) fn order_free_mean(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

impl MetricReport {
    /// Aggregates per-question values (every question must carry the same
    /// metric names). Questions are stored sorted by qid.
    pub fn from_questions(mut per_question: Vec<QuestionMetrics>) -> Self {
        per_question.sort_by(|a, b| a.qid.cmp(&b.qid));
        let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for q in &per_question {
            for (k, &v) in &q.values {
                columns.entry(k.clone()).or_default().push(v);
            }
        }
        let metrics = columns.into_iter().map(|(k, v)| (k, order_free_mean(v))).collect();
        Self {
            n_questions: per_question.len(),
            metrics,
            splits: BTreeMap::new(),
            per_question,
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }
}

/// Ranking metrics of one question against a set of relevant tables.
pub fn ranking_values(ranking: &[String], relevant: &HashSet<&str>, ks: &[usize]) -> BTreeMap<String, f64> {
    let rel: Vec<bool> = ranking.iter().map(|t| relevant.contains(t.as_str())).collect();
    let n_rel = relevant.len();
    let mut out = BTreeMap::new();

    let first = rel.iter().position(|&r| r);
    out.insert("mrr".into(), first.map_or(0.0, |i| 1.0 / (i + 1) as f64));
    out.insert("hit1".into(), if rel.first() == Some(&true) { 1.0 } else { 0.0 });

    let mut hits = 0usize;
    let mut precision_sum = 0.0;
    for (i, &r) in rel.iter().enumerate() {
        if r {
            hits += 1;
            precision_sum += hits as f64 / (i + 1) as f64;
        }
    }
    out.insert(
        "map".into(),
        if n_rel == 0 { 0.0 } else { precision_sum / n_rel as f64 },
    );

    for &k in ks {
        let in_top = rel.iter().take(k).filter(|&&r| r).count();
        out.insert(
            format!("r@{k}"),
            if n_rel == 0 { 0.0 } else { in_top as f64 / n_rel as f64 },
        );
        out.insert(format!("p@{k}"), if k == 0 { 0.0 } else { in_top as f64 / k as f64 });
        let dcg: f64 = rel
            .iter()
            .take(k)
            .enumerate()
            .filter(|(_, &r)| r)
            .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
            .sum();
        let idcg: f64 = (0..n_rel.min(k)).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();
        out.insert(format!("ndcg@{k}"), if idcg == 0.0 { 0.0 } else { dcg / idcg });
    }
    out
}

pub fn check_ranking(r: &RankedTables) -> Result<(), EvalError> {
    let mut seen = HashSet::new();
    for t in &r.ranking {
        if !seen.insert(t.as_str()) {
            return Err(EvalError::DuplicateTable {
                qid: r.qid.clone(),
                table_id: t.clone(),
            });
        }
    }
    Ok(())
}

/// MRR, Hit@1, MAP and R@k / P@k / NDCG@k for every `k` in `ks`.
pub fn rank_metrics(
    rankings: &[RankedTables],
    gold: &HashMap<String, Vec<String>>,
    ks: &[usize],
) -> Result<MetricReport, EvalError> {
    let mut per_question = Vec::with_capacity(rankings.len());
    for r in rankings {
        check_ranking(r)?;
        let g = gold
            .get(&r.qid)
            .filter(|g| !g.is_empty())
            .ok_or_else(|| EvalError::MissingGold(r.qid.clone()))?;
        let relevant: HashSet<&str> = g.iter().map(String::as_str).collect();
        per_question.push(QuestionMetrics {
            qid: r.qid.clone(),
            values: ranking_values(&r.ranking, &relevant, ks),
            numeric: None,
        });
    }
    Ok(MetricReport::from_questions(per_question))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_answer("The Beatles!"), "beatles");
        assert_eq!(normalize_answer(""), "");
        assert_eq!(normalize_answer("A  an THE"), "");
        assert_eq!(normalize_answer("  Théâtre   «Ikar» "), "théâtre ikar");
        assert_eq!(normalize_answer("$1,000"), "1000");
        assert_eq!(normalize_answer("then another"), "then another");
    }

    #[test]
    fn em_f1_examples() {
        let r = em_f1("john smith", &strs(&["Smith"]));
        assert_eq!(r.em, 0.0);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(em_f1("the answer", &strs(&["answer"])), EmF1 { em: 1.0, f1: 1.0 });
        assert_eq!(em_f1("x", &strs(&["y"])), EmF1 { em: 0.0, f1: 0.0 });
        assert_eq!(em_f1("the", &strs(&["a"])), EmF1 { em: 1.0, f1: 1.0 });
        assert_eq!(em_f1("the", &strs(&["b"])), EmF1 { em: 0.0, f1: 0.0 });
        // best over several golds
        assert_eq!(em_f1("y", &strs(&["x", "Y."])).em, 1.0);
    }

    #[test]
    fn multiset_overlap() {
        let f = token_f1(&strs(&["a", "a", "b"]), &strs(&["a", "b", "b"]));
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
    }

    fn gold(pairs: &[(&str, &str)]) -> HashMap<String, Vec<String>> {
        pairs
            .iter()
            .map(|(q, t)| (q.to_string(), vec![t.to_string()]))
            .collect()
    }

    #[test]
    fn gold_at_rank_two() {
        let r = RankedTables {
            qid: "q".into(),
            ranking: strs(&["x", "g", "y"]),
        };
        let rep = rank_metrics(&[r], &gold(&[("q", "g")]), &[5]).unwrap();
        assert_eq!(rep.get("mrr"), Some(0.5));
        assert_eq!(rep.get("hit1"), Some(0.0));
        assert_eq!(rep.get("r@5"), Some(1.0));
        assert_eq!(rep.get("p@5"), Some(0.2));
        assert!((rep.get("ndcg@5").unwrap() - 0.630_929_753_571_457_4).abs() < 1e-12);
        assert_eq!(rep.get("map"), Some(0.5));
    }

    #[test]
    fn perfect_and_missing() {
        let rs = vec![
            RankedTables {
                qid: "a".into(),
                ranking: strs(&["ga", "x"]),
            },
            RankedTables {
                qid: "b".into(),
                ranking: strs(&["gb"]),
            },
        ];
        let rep = rank_metrics(&rs, &gold(&[("a", "ga"), ("b", "gb")]), &[5]).unwrap();
        for m in ["mrr", "hit1", "r@5", "ndcg@5", "map"] {
            assert_eq!(rep.get(m), Some(1.0), "{m}");
        }
        assert_eq!(rep.get("p@5"), Some(0.2));

        let miss = RankedTables {
            qid: "a".into(),
            ranking: strs(&["x", "y"]),
        };
        let rep = rank_metrics(&[miss], &gold(&[("a", "ga")]), &[1, 5]).unwrap();
        assert!(rep.metrics.values().all(|&v| v == 0.0));
    }

    #[test]
    fn errors() {
        let r = RankedTables {
            qid: "nope".into(),
            ranking: vec![],
        };
        assert!(matches!(
            rank_metrics(&[r], &gold(&[]), &[1]),
            Err(EvalError::MissingGold(q)) if q == "nope"
        ));
        let r = RankedTables {
            qid: "a".into(),
            ranking: strs(&["t", "t"]),
        };
        assert!(matches!(
            rank_metrics(&[r], &gold(&[("a", "t")]), &[1]),
            Err(EvalError::DuplicateTable { .. })
        ));
    }

    #[test]
    fn multi_gold_formulas() {
        let relevant: HashSet<&str> = ["a", "c"].into_iter().collect();
        let v = ranking_values(&strs(&["a", "b", "c"]), &relevant, &[2]);
        assert_eq!(v["r@2"], 0.5);
        assert_eq!(v["p@2"], 0.5);
        assert!((v["map"] - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        let ndcg = 1.0 / (1.0 + 1.0 / 3f64.log2());
        assert!((v["ndcg@2"] - ndcg).abs() < 1e-15);
    }
}
