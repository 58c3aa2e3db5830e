use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    check_ranking, em_f1, normalize_answer, order_free_mean, ranking_values, EvalError, MetricReport, QuestionMetrics,
    RankedTables,
};
use crate::corpus::QaExample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Em,
    F1,
    Mrr,
    Hit1,
    RecallAt(usize),
    PrecisionAt(usize),
    NdcgAt(usize),
    Map,
    /// Reciprocal rank of the first returned answer that exactly matches.
    AnswerMrr,
    AnswerHit1,
}

impl Metric {
    pub fn parse_list(s: &str) -> Result<Vec<Metric>, EvalError> {
        s.split(',')
            .map(str::trim)
            .filter(|m| !m.is_empty())
            .map(str::parse)
            .collect()
    }

    fn ks(metrics: &[Metric]) -> Vec<usize> {
        let mut ks: Vec<usize> = metrics
            .iter()
            .filter_map(|m| match m {
                Metric::RecallAt(k) | Metric::PrecisionAt(k) | Metric::NdcgAt(k) => Some(*k),
                _ => None,
            })
            .collect();
        ks.sort_unstable();
        ks.dedup();
        ks
    }
}

impl FromStr for Metric {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let at = |prefix: &str| -> Option<usize> { s.strip_prefix(prefix)?.parse().ok().filter(|&k| k > 0) };
        Ok(match s {
            "em" => Metric::Em,
            "f1" => Metric::F1,
            "mrr" => Metric::Mrr,
            "hit1" | "hit@1" => Metric::Hit1,
            "map" => Metric::Map,
            "answer_mrr" => Metric::AnswerMrr,
            "answer_hit1" => Metric::AnswerHit1,
            _ => {
                if let Some(k) = at("r@") {
                    Metric::RecallAt(k)
                } else if let Some(k) = at("p@") {
                    Metric::PrecisionAt(k)
                } else if let Some(k) = at("ndcg@") {
                    Metric::NdcgAt(k)
                } else {
                    return Err(EvalError::UnknownMetric(s.to_owned()));
                }
            }
        })
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Em => f.write_str("em"),
            Metric::F1 => f.write_str("f1"),
            Metric::Mrr => f.write_str("mrr"),
            Metric::Hit1 => f.write_str("hit1"),
            Metric::RecallAt(k) => write!(f, "r@{k}"),
            Metric::PrecisionAt(k) => write!(f, "p@{k}"),
            Metric::NdcgAt(k) => write!(f, "ndcg@{k}"),
            Metric::Map => f.write_str("map"),
            Metric::AnswerMrr => f.write_str("answer_mrr"),
            Metric::AnswerHit1 => f.write_str("answer_hit1"),
        }
    }
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub qid: String,
    pub answer: String,
    #[serde(default)]
    pub ranking: Vec<String>,
    /// All returned answers, best first. Defaults to `[answer]`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub answers: Vec<String>,
}

pub fn parse_predictions<R: BufRead>(reader: R) -> Result<Vec<Prediction>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| EvalError::MalformedPrediction {
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>, EvalError> {
    parse_predictions(BufReader::new(File::open(path)?))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalOptions {
    /// Label answer metrics `oracle_em` / `oracle_f1`: the predictions were
    /// produced with the gold table as the only candidate.
    pub oracle: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub n: usize,
    pub em: f64,
    pub f1: f64,
}

fn is_numeric_question(ex: &QaExample) -> bool {
    ex.answers.iter().any(|a| a.chars().any(|c| c.is_ascii_digit()))
}

/// Scores predictions against the QA file.
///
/// A question without a prediction scores zero everywhere. A prediction
/// whose qid is not in the QA file is a `MissingGold` error.
pub fn evaluate(
    examples: &[QaExample],
    predictions: &[Prediction],
    metrics: &[Metric],
    options: EvalOptions,
) -> Result<MetricReport, EvalError> {
    let by_qid: HashMap<&str, &QaExample> = examples.iter().map(|e| (e.qid.as_str(), e)).collect();
    let mut preds: HashMap<&str, &Prediction> = HashMap::new();
    for p in predictions {
        if !by_qid.contains_key(p.qid.as_str()) {
            return Err(EvalError::MissingGold(p.qid.clone()));
        }
        preds.insert(p.qid.as_str(), p);
    }
    let wanted: HashSet<String> = metrics.iter().map(Metric::to_string).collect();
    let ks = Metric::ks(metrics);
    let (em_name, f1_name) = if options.oracle {
        ("oracle_em", "oracle_f1")
    } else {
        ("em", "f1")
    };

    let mut per_question = Vec::with_capacity(examples.len());
    let mut split_values: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for ex in examples {
        let pred = preds.get(ex.qid.as_str()).copied();
        if pred.is_none() {
            tracing::warn!(qid = %ex.qid, "no prediction");
        }
        let answer = pred.map_or("", |p| p.answer.as_str());
        let mut values = BTreeMap::new();

        let ef = em_f1(answer, &ex.answers);
        if wanted.contains("em") {
            values.insert(em_name.to_owned(), ef.em);
        }
        if wanted.contains("f1") {
            values.insert(f1_name.to_owned(), ef.f1);
        }

        let ranking = RankedTables {
            qid: ex.qid.clone(),
            ranking: pred.map(|p| p.ranking.clone()).unwrap_or_default(),
        };
        check_ranking(&ranking)?;
        let relevant: HashSet<&str> = [ex.gold_table_id.as_str()].into_iter().collect();
        for (k, v) in ranking_values(&ranking.ranking, &relevant, &ks) {
            if wanted.contains(&k) {
                values.insert(k, v);
            }
        }

        if wanted.contains("answer_mrr") || wanted.contains("answer_hit1") {
            let answers: Vec<&str> = match pred {
                Some(p) if !p.answers.is_empty() => p.answers.iter().map(String::as_str).collect(),
                Some(p) => vec![p.answer.as_str()],
                None => Vec::new(),
            };
            let golds: HashSet<String> = ex.answers.iter().map(|a| normalize_answer(a)).collect();
            let first = answers.iter().position(|a| golds.contains(&normalize_answer(a)));
            if wanted.contains("answer_mrr") {
                values.insert("answer_mrr".into(), first.map_or(0.0, |i| 1.0 / (i + 1) as f64));
            }
            if wanted.contains("answer_hit1") {
                values.insert("answer_hit1".into(), if first == Some(0) { 1.0 } else { 0.0 });
            }
        }

        let numeric = is_numeric_question(ex);
        let split = split_values
            .entry(if numeric { "numeric" } else { "non_numeric" })
            .or_default();
        split.0.push(ef.em);
        split.1.push(ef.f1);

        per_question.push(QuestionMetrics {
            qid: ex.qid.clone(),
            values,
            numeric: Some(numeric),
        });
    }

    let mut report = MetricReport::from_questions(per_question);
    report.splits = split_values
        .into_iter()
        .map(|(name, (em, f1))| {
            (
                name.to_owned(),
                SplitStats {
                    n: em.len(),
                    em: order_free_mean(em),
                    f1: order_free_mean(f1),
                },
            )
        })
        .collect();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(qid: &str, table: &str, answers: &[&str]) -> QaExample {
        QaExample {
            qid: qid.into(),
            question: format!("question {qid}"),
            gold_table_id: table.into(),
            answers: answers.iter().map(|a| a.to_string()).collect(),
        }
    }

    fn pred(qid: &str, answer: &str, ranking: &[&str]) -> Prediction {
        Prediction {
            qid: qid.into(),
            answer: answer.into(),
            ranking: ranking.iter().map(|s| s.to_string()).collect(),
            answers: vec![],
        }
    }

    #[test]
    fn metric_names_round_trip() {
        let all = Metric::parse_list("em,f1,mrr,hit1,r@1,r@10,r@50,p@5,p@10,ndcg@5,ndcg@10,map").unwrap();
        assert_eq!(all.len(), 12);
        let names: Vec<String> = all.iter().map(Metric::to_string).collect();
        assert_eq!(
            names.join(","),
            "em,f1,mrr,hit1,r@1,r@10,r@50,p@5,p@10,ndcg@5,ndcg@10,map"
        );
        assert!(Metric::parse_list("r@0").is_err());
        assert!(Metric::parse_list("bleu").is_err());
    }

    #[test]
    fn evaluates_answers_and_rankings() {
        let qa = vec![ex("q1", "t1", &["Smith"]), ex("q2", "t2", &["1990"])];
        let preds = vec![pred("q1", "smith", &["t1", "t9"]), pred("q2", "1991", &["t9", "t2"])];
        let metrics = Metric::parse_list("em,f1,mrr,hit1,r@1,p@5").unwrap();
        let r = evaluate(&qa, &preds, &metrics, EvalOptions::default()).unwrap();
        assert_eq!(r.n_questions, 2);
        assert_eq!(r.get("em"), Some(0.5));
        assert_eq!(r.get("mrr"), Some(0.75));
        assert_eq!(r.get("hit1"), Some(0.5));
        assert_eq!(r.get("r@1"), Some(0.5));
        assert_eq!(r.get("p@5"), Some(0.2));
        assert_eq!(r.splits["numeric"].n, 1);
        assert_eq!(r.splits["numeric"].em, 0.0);
        assert_eq!(r.splits["non_numeric"].em, 1.0);
    }

    #[test]
    fn oracle_labels_and_missing_predictions() {
        let qa = vec![ex("q1", "t1", &["x"]), ex("q2", "t2", &["y"])];
        let preds = vec![pred("q1", "x", &[])];
        let r = evaluate(&qa, &preds, &[Metric::Em, Metric::F1], EvalOptions { oracle: true }).unwrap();
        assert_eq!(r.get("oracle_em"), Some(0.5));
        assert!(r.get("em").is_none());
    }

    #[test]
    fn unknown_prediction_qid_is_missing_gold() {
        let qa = vec![ex("q1", "t1", &["x"])];
        let preds = vec![pred("zz", "x", &[])];
        assert!(matches!(
            evaluate(&qa, &preds, &[Metric::Em], EvalOptions::default()),
            Err(EvalError::MissingGold(q)) if q == "zz"
        ));
    }

    #[test]
    fn answer_level_rank() {
        let qa = vec![ex("q1", "t1", &["Smith"])];
        let mut p = pred("q1", "jones", &[]);
        p.answers = vec!["jones".into(), "The Smith".into()];
        let r = evaluate(
            &qa,
            &[p],
            &[Metric::AnswerMrr, Metric::AnswerHit1],
            EvalOptions::default(),
        )
        .unwrap();
        assert_eq!(r.get("answer_mrr"), Some(0.5));
        assert_eq!(r.get("answer_hit1"), Some(0.0));
    }

    #[test]
    fn prediction_lines() {
        let src = "{\"qid\":\"q\",\"answer\":\"a\",\"ranking\":[\"t\"]}\n\n{\"qid\":\"r\",\"answer\":\"b\"}\n";
        let p = parse_predictions(src.as_bytes()).unwrap();
        assert_eq!(p.len(), 2);
        assert!(p[1].ranking.is_empty());
        assert!(matches!(
            parse_predictions("{\"qid\":1}".as_bytes()),
            Err(EvalError::MalformedPrediction { line: 1, .. })
        ));
    }
}
