//! Hierarchical layered proximity graph for maximum-inner-product search.
//!
//! Nodes are inserted in id order with levels drawn from a seeded
//! exponential distribution, so two builds over the same vectors with the
//! same parameters produce identical adjacency. A new node picks its
//! neighbours with the usual diversity heuristic; a neighbour list that
//! overflows through back-links keeps its most similar entries. No list
//! ever exceeds the degree cap.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{self, FormatError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HnswParams {
    /// Maximum out-degree on every layer.
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self {
            m: 64,
            ef_construction: 200,
            ef_search: 100,
            seed: 17,
        }
    }
}

/// Row-major vectors of one dimension.
#[derive(Debug, Clone, Copy)]
pub struct Vectors<'a> {
    pub data: &'a [f64],
    pub dim: usize,
}

impl<'a> Vectors<'a> {
    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: u32) -> &'a [f64] {
        let i = i as usize;
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Inner product with eight independent accumulators so the loop
/// vectorizes; the summation order is fixed, so results are reproducible.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// (similarity, id), ordered by similarity and then by *lower* id first.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Scored {
    sim: f64,
    id: u32,
}

impl Eq for Scored {}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim.total_cmp(&other.sim).then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hnsw {
    params: HnswParams,
    /// links[node][layer] = neighbour ids
    links: Vec<Vec<Vec<u32>>>,
    entry: u32,
    max_level: usize,
}

struct Visited {
    marks: Vec<u32>,
    epoch: u32,
}

impl Visited {
    fn new(n: usize) -> Self {
        Self {
            marks: vec![0; n],
            epoch: 0,
        }
    }

    fn reset(&mut self) {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.marks.iter_mut().for_each(|m| *m = 0);
            self.epoch = 1;
        }
    }

    /// Returns true the first time `id` is seen in this epoch.
    fn insert(&mut self, id: u32) -> bool {
        let m = &mut self.marks[id as usize];
        if *m == self.epoch {
            false
        } else {
            *m = self.epoch;
            true
        }
    }
}

impl Hnsw {
    pub fn build(vectors: Vectors<'_>, params: HnswParams) -> Self {
        assert!(params.m >= 2, "m must be at least 2");
        let n = vectors.len();
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let level_mult = 1.0 / (params.m as f64).ln();
        let mut g = Hnsw {
            params,
            links: Vec::with_capacity(n),
            entry: 0,
            max_level: 0,
        };
        let mut visited = Visited::new(n);
        for id in 0..n as u32 {
            let u: f64 = rng.random::<f64>();
            // 1 - u lies in (0, 1], so the log is finite
            let level = (-(1.0 - u).ln() * level_mult).floor() as usize;
            g.insert(vectors, id, level.min(32), &mut visited);
        }
        g
    }

    fn insert(&mut self, vectors: Vectors<'_>, id: u32, level: usize, visited: &mut Visited) {
        self.links.push(vec![Vec::new(); level + 1]);
        if id == 0 {
            self.entry = 0;
            self.max_level = level;
            return;
        }
        let q = vectors.row(id);
        let mut ep = Scored {
            sim: dot(q, vectors.row(self.entry)),
            id: self.entry,
        };
        for layer in (level + 1..=self.max_level).rev() {
            ep = self.greedy(vectors, q, ep, layer);
        }
        let mut eps = vec![ep];
        for layer in (0..=level.min(self.max_level)).rev() {
            let found = self.search_layer(vectors, q, &eps, self.params.ef_construction, layer, visited);
            let chosen = select_neighbors(vectors, &found, self.params.m);
            self.links[id as usize][layer] = chosen.iter().map(|s| s.id).collect();
            for s in &chosen {
                self.link_back(vectors, s.id, id, layer);
            }
            eps = found;
        }
        if level > self.max_level {
            self.max_level = level;
            self.entry = id;
        }
    }

    fn link_back(&mut self, vectors: Vectors<'_>, from: u32, to: u32, layer: usize) {
        let cap = self.params.m;
        let list = &mut self.links[from as usize][layer];
        list.push(to);
        if list.len() <= cap {
            return;
        }
        let base = vectors.row(from);
        let mut cands: Vec<Scored> = list
            .iter()
            .map(|&n| Scored {
                sim: dot(base, vectors.row(n)),
                id: n,
            })
            .collect();
        cands.sort_by(|a, b| b.cmp(a));
        cands.truncate(cap);
        self.links[from as usize][layer] = cands.into_iter().map(|s| s.id).collect();
    }

    fn greedy(&self, vectors: Vectors<'_>, q: &[f64], mut cur: Scored, layer: usize) -> Scored {
        loop {
            let mut improved = false;
            for &n in &self.links[cur.id as usize][layer] {
                let cand = Scored {
                    sim: dot(q, vectors.row(n)),
                    id: n,
                };
                if cand > cur {
                    cur = cand;
                    improved = true;
                }
            }
            if !improved {
                return cur;
            }
        }
    }

    /// Best-first search on one layer. Returns up to `ef` nodes, best first.
    fn search_layer(
        &self,
        vectors: Vectors<'_>,
        q: &[f64],
        entry: &[Scored],
        ef: usize,
        layer: usize,
        visited: &mut Visited,
    ) -> Vec<Scored> {
        visited.reset();
        let mut candidates: BinaryHeap<Scored> = BinaryHeap::new();
        // min-heap of the current best `ef`
        let mut best: BinaryHeap<std::cmp::Reverse<Scored>> = BinaryHeap::new();
        for &e in entry {
            if visited.insert(e.id) {
                candidates.push(e);
                best.push(std::cmp::Reverse(e));
                if best.len() > ef {
                    best.pop();
                }
            }
        }
        while let Some(c) = candidates.pop() {
            let worst = best.peek().map(|r| r.0);
            if let Some(w) = worst {
                if best.len() >= ef && c < w {
                    break;
                }
            }
            for &n in &self.links[c.id as usize][layer] {
                if !visited.insert(n) {
                    continue;
                }
                let s = Scored {
                    sim: dot(q, vectors.row(n)),
                    id: n,
                };
                let admit = best.len() < ef || best.peek().is_some_and(|w| s > w.0);
                if admit {
                    candidates.push(s);
                    best.push(std::cmp::Reverse(s));
                    if best.len() > ef {
                        best.pop();
                    }
                }
            }
        }
        let mut out: Vec<Scored> = best.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    /// Approximate top-`k` by inner product, best first.
    pub fn search(&self, vectors: Vectors<'_>, q: &[f64], k: usize, ef: usize) -> Vec<(u32, f64)> {
        if self.links.is_empty() || k == 0 {
            return Vec::new();
        }
        let mut ep = Scored {
            sim: dot(q, vectors.row(self.entry)),
            id: self.entry,
        };
        for layer in (1..=self.max_level).rev() {
            ep = self.greedy(vectors, q, ep, layer);
        }
        let mut visited = Visited::new(self.links.len());
        let found = self.search_layer(vectors, q, &[ep], ef.max(k), 0, &mut visited);
        found.into_iter().take(k).map(|s| (s.id, s.sim)).collect()
    }

    pub fn params(&self) -> HnswParams {
        self.params
    }

    pub fn set_ef_search(&mut self, ef: usize) {
        self.params.ef_search = ef.max(1);
    }

    pub fn node_count(&self) -> usize {
        self.links.len()
    }

    pub fn max_level(&self) -> usize {
        self.max_level
    }

    pub fn neighbors(&self, node: u32, layer: usize) -> &[u32] {
        self.links[node as usize].get(layer).map_or(&[][..], Vec::as_slice)
    }

    pub fn level_of(&self, node: u32) -> usize {
        self.links[node as usize].len() - 1
    }

    pub(crate) fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let p = self.params;
        binio::write_len(w, p.m)?;
        binio::write_len(w, p.ef_construction)?;
        binio::write_len(w, p.ef_search)?;
        binio::write_u64(w, p.seed)?;
        binio::write_u32(w, self.entry)?;
        binio::write_len(w, self.max_level)?;
        for node in &self.links {
            binio::write_len(w, node.len() - 1)?;
            for layer in node {
                binio::write_len(w, layer.len())?;
                for &n in layer {
                    binio::write_u32(w, n)?;
                }
            }
        }
        Ok(())
    }

    pub(crate) fn read_from<R: Read>(r: &mut R, n: usize) -> Result<Self, FormatError> {
        let corrupt = |m: &str| FormatError::Corrupt(m.to_owned());
        let m = binio::read_len(r, 4096, "m")?;
        let ef_construction = binio::read_len(r, u32::MAX, "ef_construction")?;
        let ef_search = binio::read_len(r, u32::MAX, "ef_search")?;
        let seed = binio::read_u64(r)?;
        if m < 2 {
            return Err(corrupt("m below 2"));
        }
        let entry = binio::read_u32(r)?;
        let max_level = binio::read_len(r, 64, "max level")?;
        if entry as usize >= n {
            return Err(corrupt("entry point out of range"));
        }
        let mut links = Vec::with_capacity(binio::initial_capacity(n));
        for _ in 0..n {
            let level = binio::read_len(r, max_level as u32, "node level")?;
            let mut node = Vec::with_capacity(level + 1);
            for _ in 0..=level {
                let deg = binio::read_len(r, m as u32, "degree")?;
                let mut list = Vec::with_capacity(deg);
                for _ in 0..deg {
                    let nb = binio::read_u32(r)?;
                    if nb as usize >= n {
                        return Err(corrupt("neighbour out of range"));
                    }
                    list.push(nb);
                }
                node.push(list);
            }
            links.push(node);
        }
        if links[entry as usize].len() != max_level + 1 {
            return Err(corrupt("entry point is not on the top layer"));
        }
        for node in &links {
            for (layer, list) in node.iter().enumerate() {
                if list.iter().any(|&nb| links[nb as usize].len() <= layer) {
                    return Err(corrupt("edge to a node absent from the layer"));
                }
            }
        }
        Ok(Self {
            params: HnswParams {
                m,
                ef_construction,
                ef_search,
                seed,
            },
            links,
            entry,
            max_level,
        })
    }
}

/// Diversity heuristic: walk candidates best-first and keep one only if it
/// is more similar to the base than to every neighbour kept so far. Slots
/// left over are filled with the best discarded candidates.
fn select_neighbors(vectors: Vectors<'_>, cands: &[Scored], m: usize) -> Vec<Scored> {
    let mut kept: Vec<Scored> = Vec::with_capacity(m);
    let mut skipped: Vec<Scored> = Vec::new();
    for &c in cands {
        if kept.len() >= m {
            break;
        }
        let cv = vectors.row(c.id);
        let diverse = kept.iter().all(|k| dot(cv, vectors.row(k.id)) < c.sim);
        if diverse {
            kept.push(c);
        } else {
            skipped.push(c);
        }
    }
    for s in skipped {
        if kept.len() >= m {
            break;
        }
        kept.push(s);
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_unit(n: usize, dim: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n * dim);
        for _ in 0..n {
            let v: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            out.extend(v.iter().map(|x| x / norm));
        }
        out
    }

    #[test]
    fn degree_cap_and_determinism() {
        let data = random_unit(600, 16, 3);
        let vecs = Vectors { data: &data, dim: 16 };
        let params = HnswParams {
            m: 8,
            ef_construction: 64,
            ..HnswParams::default()
        };
        let g = Hnsw::build(vecs, params);
        assert_eq!(g.node_count(), 600);
        for node in 0..600u32 {
            for layer in 0..=g.level_of(node) {
                assert!(g.neighbors(node, layer).len() <= 8);
            }
        }
        let h = Hnsw::build(vecs, params);
        assert_eq!(g, h);
    }

    #[test]
    fn finds_self_as_nearest() {
        let data = random_unit(500, 24, 9);
        let vecs = Vectors { data: &data, dim: 24 };
        let g = Hnsw::build(vecs, HnswParams::default());
        let mut hits = 0;
        for i in 0..100u32 {
            let res = g.search(vecs, vecs.row(i), 1, 50);
            if res[0].0 == i {
                hits += 1;
            }
        }
        assert!(hits >= 98, "{hits}");
    }

    #[test]
    fn single_node_graph() {
        let data = vec![1.0, 0.0];
        let vecs = Vectors { data: &data, dim: 2 };
        let g = Hnsw::build(vecs, HnswParams::default());
        assert_eq!(g.search(vecs, &[0.0, 1.0], 5, 10), vec![(0, 0.0)]);
    }
}
