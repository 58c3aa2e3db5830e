use proptest::prelude::*;
use trag_core::rag::{
    beam_decode, marginalize_step, retrieval_priors, running_log_probs, DecodeConfig, Generator, Prompt, RagError,
    TokenId, ToyGenerator, Vocab,
};

fn prompt(table: &str, question: &str) -> Prompt {
    Prompt {
        question: question.into(),
        table_id: table.into(),
        text: String::new(),
    }
}

/// Next-token distributions keyed by (table, prefix); unknown keys put all
/// mass on end-of-sequence.
struct Scripted {
    vocab: Vocab,
    steps: Vec<(&'static str, Vec<&'static str>, Vec<f64>)>,
}

impl Generator for Scripted {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn next_token_dist(&self, p: &Prompt, prefix: &[TokenId]) -> Result<Vec<f64>, RagError> {
        for (table, pre, dist) in &self.steps {
            let ids: Vec<TokenId> = pre.iter().map(|t| self.vocab.id(t).unwrap()).collect();
            if *table == p.table_id && ids == prefix {
                return Ok(dist.clone());
            }
        }
        let mut d = vec![0.0; self.vocab.len()];
        d[self.vocab.eos() as usize] = 1.0;
        Ok(d)
    }
}

#[test]
fn greedy_beam_picks_the_likely_token() {
    let vocab = Vocab::from_ordered(vec!["a".into(), "b".into(), "</s>".into()], "</s>").unwrap();
    let g = Scripted {
        vocab,
        steps: vec![("t", vec![], vec![0.7, 0.2, 0.1])],
    };
    let cfg = DecodeConfig {
        beam_width: 1,
        max_len: 2,
        min_len: 0,
    };
    let out = beam_decode(&[prompt("t", "q")], &[1.0], &g, &cfg).unwrap();
    assert_eq!(out[0].text, "a");
    assert!((out[0].log_prob - 0.7f64.ln()).abs() < 1e-12);
    // by enumeration: a=0.7, b=0.2, empty=0.1
}

#[test]
fn higher_prior_table_wins_and_is_the_provenance() {
    let mut g = ToyGenerator::new(1e-6);
    g.memorize("t1", "who", "alpha").unwrap();
    g.memorize("t2", "who", "beta").unwrap();
    let prompts = [prompt("t1", "who"), prompt("t2", "who")];
    let out = beam_decode(&prompts, &[0.9, 0.1], &g, &DecodeConfig::default()).unwrap();
    assert_eq!(out[0].text, "alpha");
    assert_eq!(out[0].provenance_table_id, "t1");
    assert_eq!(out[1].text, "beta");
    assert_eq!(out[1].provenance_table_id, "t2");
    // p(alpha) ≈ 0.9·1 + 0.1·ε, p(beta) ≈ 0.1
    assert!((out[0].log_prob - 0.9f64.ln()).abs() < 1e-4);
    assert!((out[1].log_prob - 0.1f64.ln()).abs() < 1e-4);
}

fn toy(answers: &[(usize, Vec<usize>)]) -> ToyGenerator {
    let words = ["w0", "w1", "w2"];
    let mut g = ToyGenerator::new(1e-6).with_extra_tokens(&words).unwrap();
    for (t, ans) in answers {
        let text: Vec<&str> = ans.iter().map(|&i| words[i]).collect();
        g.memorize(&format!("t{t}"), "q", &text.join(" ")).unwrap();
    }
    g
}

fn memories() -> impl Strategy<Value = Vec<(usize, Vec<usize>)>> {
    prop::collection::vec((0usize..3, prop::collection::vec(0usize..3, 1..4)), 0..6)
}

proptest! {
    #[test]
    fn priors_ignore_shift_and_matched_scale(
        scores in prop::collection::vec(-30.0f64..30.0, 1..10),
        shift in -100.0f64..100.0,
        scale in 0.01f64..100.0,
    ) {
        let base = retrieval_priors(&scores, 1.0).unwrap();
        prop_assert!((base.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let scaled: Vec<f64> = scores.iter().map(|s| s * scale).collect();
        let p_shift = retrieval_priors(&shifted, 1.0).unwrap();
        let p_scale = retrieval_priors(&scaled, scale).unwrap();
        for i in 0..scores.len() {
            prop_assert!((base[i] - p_shift[i]).abs() < 1e-9);
            prop_assert!((base[i] - p_scale[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn marginal_is_a_distribution(n in 1usize..6, v in 2usize..20, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let priors = retrieval_priors(&scores, 1.0).unwrap();
        let dists: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..v).map(|_| rng.random::<f64>()).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / s).collect()
            })
            .collect();
        let m = marginalize_step(&priors, &dists).unwrap();
        prop_assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(m.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn toy_distributions_sum_to_one(mem in memories(), table in 0usize..4, prefix in prop::collection::vec(0u32..4, 0..4)) {
        let g = toy(&mem);
        let d = g.next_token_dist(&prompt(&format!("t{table}"), "q"), &prefix).unwrap();
        prop_assert_eq!(d.len(), g.vocab().len());
        prop_assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(d.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn beams_only_lose_probability(mem in memories(), scores in prop::collection::vec(0.0f64..3.0, 1..4), beam in 1usize..5) {
        let g = toy(&mem);
        let prompts: Vec<Prompt> = (0..scores.len()).map(|i| prompt(&format!("t{i}"), "q")).collect();
        let priors = retrieval_priors(&scores, 1.0).unwrap();
        let cfg = DecodeConfig { beam_width: beam, max_len: 5, min_len: 1 };
        let out = beam_decode(&prompts, &priors, &g, &cfg).unwrap();
        prop_assert!(!out.is_empty() && out.len() <= beam);
        for w in out.windows(2) {
            prop_assert!(w[0].log_prob >= w[1].log_prob);
        }
        for a in &out {
            prop_assert!(a.log_prob <= 1e-12);
            prop_assert!(a.provenance < prompts.len());
            prop_assert_eq!(&a.provenance_table_id, &prompts[a.provenance].table_id);
            prop_assert!(a.provenance_score > 0.0 && a.provenance_score <= 1.0 + 1e-12);
            let mut steps = a.tokens.clone();
            if !a.truncated {
                steps.push(g.vocab().eos());
            }
            let running = running_log_probs(&prompts, &priors, &g, &steps).unwrap();
            for w in running.windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
            prop_assert!((running.last().copied().unwrap_or(0.0) - a.token_log_prob).abs() < 1e-9);
        }
    }
}
