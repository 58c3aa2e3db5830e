use std::collections::HashSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trag_core::dense::{DenseConfig, DenseIndex, SearchMode};

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    // Box-Muller gives isotropic directions.
    let mut v: Vec<f64> = (0..dim)
        .map(|_| {
            let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            let u2: f64 = rng.random();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn brute_top(data: &[Vec<f64>], q: &[f64], k: usize) -> Vec<u32> {
    let mut s: Vec<(u32, f64)> = data
        .iter()
        .enumerate()
        .map(|(i, v)| (i as u32, v.iter().zip(q).map(|(a, b)| a * b).sum()))
        .collect();
    s.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    s.into_iter().take(k).map(|(i, _)| i).collect()
}

#[test]
fn recall_at_10_on_random_unit_vectors() {
    let (n, dim, n_queries, k) = (10_000, 128, 200, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let data: Vec<Vec<f64>> = (0..n).map(|_| unit(&mut rng, dim)).collect();
    let tables: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
    let table_refs: Vec<&str> = tables.iter().map(String::as_str).collect();
    let start = Instant::now();
    let index = DenseIndex::from_vectors(dim, data.clone(), &table_refs, &DenseConfig::default()).unwrap();
    let built = start.elapsed();
    let queries: Vec<Vec<f64>> = (0..n_queries).map(|_| unit(&mut rng, dim)).collect();
    let mut found = 0usize;
    for q in &queries {
        let truth: HashSet<u32> = brute_top(&data, q, k).into_iter().collect();
        let hits = index.knn(q, k, SearchMode::Ann, false).unwrap();
        found += hits.iter().filter(|h| truth.contains(&h.segment.0)).count();
    }
    let recall = found as f64 / (n_queries * k) as f64;
    let total = start.elapsed();
    println!("recall@10={recall:.4} build={built:?} total={total:?}");
    assert!(index.graph().is_some());
    assert!(recall >= 0.95, "recall@10 {recall}");
    assert!(total.as_secs() < 60);
}
