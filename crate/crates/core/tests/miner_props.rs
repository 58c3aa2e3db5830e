use proptest::prelude::*;
use trag_core::bm25::{Bm25Index, Bm25Params};
use trag_core::linearize::segment_corpus;
use trag_core::miner::{mine, MinerConfig};
use trag_core::tokenize::SimpleTokenizer;
use trag_core::{Corpus, QaExample, TableDoc};

const WORDS: [&str; 6] = ["kiln", "weir", "sluice", "lock", "quay", "dock"];

fn setup(docs: &[Vec<usize>], questions: &[(Vec<usize>, usize)]) -> (Bm25Index, Vec<QaExample>) {
    let tables = docs
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let text: Vec<&str> = d.iter().map(|&w| WORDS[w]).collect();
            TableDoc::new(format!("t{i:02}"), None, vec!["h".into()], vec![vec![text.join(" ")]]).unwrap()
        })
        .collect();
    let corpus = Corpus::new(tables).unwrap();
    let segs = segment_corpus(&corpus, 512, &SimpleTokenizer).unwrap();
    let index = Bm25Index::build(&segs, Bm25Params { k1: 0.9, b: 0.4 }).unwrap();
    let examples = questions
        .iter()
        .enumerate()
        .map(|(i, (q, gold))| QaExample {
            qid: format!("q{i}"),
            question: q.iter().map(|&w| WORDS[w]).collect::<Vec<_>>().join(" "),
            gold_table_id: format!("t{:02}", gold % docs.len()),
            answers: vec!["x".into()],
        })
        .collect();
    (index, examples)
}

/// Documents as word indices, and questions with a gold table index.
type Case = (Vec<Vec<usize>>, Vec<(Vec<usize>, usize)>);

fn corpus_and_questions() -> impl Strategy<Value = Case> {
    (
        prop::collection::vec(prop::collection::vec(0usize..6, 1..6), 2..15),
        prop::collection::vec((prop::collection::vec(0usize..6, 1..3), 0usize..100), 1..20),
    )
}

proptest! {
    #[test]
    fn gold_excluded_window_respected_and_reproducible(
        (docs, qs) in corpus_and_questions(),
        k in 1usize..5,
        extra in 0usize..5,
        n in 1usize..5,
        seed in any::<u64>(),
    ) {
        let n = n.min(k);
        let (index, examples) = setup(&docs, &qs);
        let config = MinerConfig { pool_size: k + extra, k, negatives_per_question: n, rng_seed: seed };
        let out = mine(&examples, &index, &config).unwrap();
        for neg in &out.negatives {
            let ex = examples.iter().find(|e| e.qid == neg.qid).unwrap();
            prop_assert_ne!(&neg.negative_table_id, &ex.gold_table_id);
            prop_assert!(neg.bm25_rank >= 1 && neg.bm25_rank <= k);
        }
        for ex in &examples {
            let mine_for: Vec<_> = out.negatives.iter().filter(|x| x.qid == ex.qid).collect();
            prop_assert!(mine_for.len() <= n);
            let distinct: std::collections::HashSet<_> = mine_for.iter().map(|x| &x.negative_table_id).collect();
            prop_assert_eq!(distinct.len(), mine_for.len());
            prop_assert_eq!(mine_for.is_empty(), out.empty_pool.contains(&ex.qid));
        }
        prop_assert_eq!(&out, &mine(&examples, &index, &config).unwrap());
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        MinerConfig {
            pool_size: 2,
            k: 3,
            negatives_per_question: 1,
            rng_seed: 0,
        },
        MinerConfig {
            pool_size: 5,
            k: 3,
            negatives_per_question: 4,
            rng_seed: 0,
        },
        MinerConfig {
            pool_size: 5,
            k: 0,
            negatives_per_question: 0,
            rng_seed: 0,
        },
    ];
    for c in bad {
        assert!(c.validate().is_err(), "{c:?}");
    }
}
