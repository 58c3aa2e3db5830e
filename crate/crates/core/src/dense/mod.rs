//! Dense segment retrieval: embedding providers and a vector store with
//! exact and graph-based approximate inner-product search.

mod embed;
pub mod hnsw;
mod remote;

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio::{self, FormatError};
use crate::bm25::SegmentRef;
use crate::linearize::Segment;

pub use embed::{embed_local, LocalProvider, MIN_LOCAL_DIM};
pub use hnsw::{dot, Hnsw, HnswParams, Vectors};
pub use remote::{RemoteProvider, RemoteProviderConfig};

const MAGIC: &[u8; 8] = b"TRAGDENS";
const VERSION: u32 = 1;
const MAX_DIM: u32 = 1 << 16;

#[derive(Debug, Error)]
pub enum DenseError {
    #[error("provider returned a vector of length {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("provider returned a non-finite component")]
    NonFinite,
    #[error("index is empty")]
    EmptyIndex,
    #[error("no segments to index")]
    NoSegments,
    #[error("{0}")]
    Config(String),
    #[error("embedding service: {0}")]
    Remote(String),
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Produces query and passage embeddings of a fixed dimension.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_query(&self, text: &str) -> Result<Vec<f64>, DenseError>;
    fn embed_passage(&self, text: &str) -> Result<Vec<f64>, DenseError>;

    fn embed_passages(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, DenseError> {
        texts.iter().map(|t| self.embed_passage(t)).collect()
    }
}

fn check_vector(v: &[f64], dim: usize) -> Result<(), DenseError> {
    if v.len() != dim {
        return Err(DenseError::DimensionMismatch {
            expected: dim,
            found: v.len(),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(DenseError::NonFinite);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SearchMode {
    Exact,
    Ann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseConfig {
    /// Build the proximity graph only when at least this many segments exist.
    pub ann_threshold: usize,
    pub hnsw: HnswParams,
}

impl Default for DenseConfig {
    fn default() -> Self {
        Self {
            ann_threshold: 1000,
            hnsw: HnswParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KnnHit {
    pub segment: SegmentRef,
    pub table_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    dim: usize,
    vectors: Vec<f64>,
    tables: Vec<String>,
    seg_table: Vec<u32>,
    graph: Option<Hnsw>,
}

impl DenseIndex {
    /// Builds a store from already computed vectors (one per segment).
    pub fn from_vectors(
        dim: usize,
        vectors: Vec<Vec<f64>>,
        table_ids: &[&str],
        config: &DenseConfig,
    ) -> Result<Self, DenseError> {
        if vectors.is_empty() {
            return Err(DenseError::NoSegments);
        }
        if vectors.len() != table_ids.len() {
            return Err(DenseError::Config("one table id per vector required".into()));
        }
        let mut flat = Vec::with_capacity(vectors.len() * dim);
        for v in &vectors {
            check_vector(v, dim)?;
            flat.extend_from_slice(v);
        }
        let mut tables: Vec<String> = Vec::new();
        let mut ix: BTreeMap<&str, u32> = BTreeMap::new();
        let seg_table = table_ids
            .iter()
            .map(|&t| {
                *ix.entry(t).or_insert_with(|| {
                    tables.push(t.to_owned());
                    (tables.len() - 1) as u32
                })
            })
            .collect();
        let mut idx = Self {
            dim,
            vectors: flat,
            tables,
            seg_table,
            graph: None,
        };
        if idx.len() >= config.ann_threshold {
            idx.graph = Some(Hnsw::build(idx.view(), config.hnsw));
        }
        Ok(idx)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.seg_table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seg_table.is_empty()
    }

    pub fn graph(&self) -> Option<&Hnsw> {
        self.graph.as_ref()
    }

    pub fn vector(&self, seg: SegmentRef) -> &[f64] {
        self.view().row(seg.0)
    }

    pub fn table_of(&self, seg: SegmentRef) -> &str {
        &self.tables[self.seg_table[seg.0 as usize] as usize]
    }

    pub fn set_ef_search(&mut self, ef: usize) {
        if let Some(g) = &mut self.graph {
            g.set_ef_search(ef);
        }
    }

    fn view(&self) -> Vectors<'_> {
        Vectors {
            data: &self.vectors,
            dim: self.dim,
        }
    }

    fn hit(&self, id: u32, score: f64) -> KnnHit {
        KnnHit {
            segment: SegmentRef(id),
            table_id: self.table_of(SegmentRef(id)).to_owned(),
            score,
        }
    }

    /// Top-`k` segments by inner product. `Ann` falls back to an exact scan
    /// when no graph was built. With `per_table`, only the best segment of
    /// each table is kept.
    pub fn knn(
        &self,
        query: &[f64],
        top_k: usize,
        mode: SearchMode,
        per_table: bool,
    ) -> Result<Vec<KnnHit>, DenseError> {
        if self.is_empty() {
            return Err(DenseError::EmptyIndex);
        }
        check_vector(query, self.dim)?;
        let raw: Vec<(u32, f64)> = match (mode, &self.graph) {
            (SearchMode::Ann, Some(g)) => {
                let ef = g.params().ef_search;
                let want = if per_table {
                    top_k.saturating_mul(4).max(ef)
                } else {
                    top_k
                };
                g.search(self.view(), query, want, ef.max(want))
            }
            _ => self.exact_scan(query),
        };
        let mut seen = HashSet::new();
        Ok(raw
            .into_iter()
            .filter(|&(id, _)| !per_table || seen.insert(self.seg_table[id as usize]))
            .take(top_k)
            .map(|(id, s)| self.hit(id, s))
            .collect())
    }

    fn exact_scan(&self, query: &[f64]) -> Vec<(u32, f64)> {
        let view = self.view();
        let mut all: Vec<(u32, f64)> = (0..self.len() as u32).map(|i| (i, dot(query, view.row(i)))).collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        all
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        binio::write_header(w, MAGIC, VERSION)?;
        binio::write_len(w, self.dim)?;
        binio::write_len(w, self.len())?;
        binio::write_len(w, self.tables.len())?;
        for t in &self.tables {
            binio::write_str(w, t)?;
        }
        for &t in &self.seg_table {
            binio::write_u32(w, t)?;
        }
        for &x in &self.vectors {
            binio::write_f64(w, x)?;
        }
        match &self.graph {
            Some(g) => {
                w.write_all(&[1])?;
                g.write_to(w)
            }
            None => w.write_all(&[0]),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, DenseError> {
        binio::read_header(r, MAGIC, VERSION)?;
        let corrupt = |m: &str| DenseError::Format(FormatError::Corrupt(m.to_owned()));
        let dim = binio::read_len(r, MAX_DIM, "dim")?;
        let n = binio::read_len(r, u32::MAX, "vector count")?;
        if dim == 0 || n == 0 {
            return Err(corrupt("empty store"));
        }
        let n_tables = binio::read_len(r, n as u32, "table list")?;
        let mut tables = Vec::with_capacity(binio::initial_capacity(n_tables));
        for _ in 0..n_tables {
            tables.push(binio::read_str(r)?);
        }
        let mut seg_table = Vec::with_capacity(binio::initial_capacity(n));
        for _ in 0..n {
            let t = binio::read_u32(r).map_err(FormatError::from)?;
            if t as usize >= tables.len() {
                return Err(corrupt("table index out of range"));
            }
            seg_table.push(t);
        }
        let total = n.checked_mul(dim).ok_or_else(|| corrupt("vector block too large"))?;
        let mut vectors = Vec::with_capacity(binio::initial_capacity(total));
        for _ in 0..total {
            let x = binio::read_f64(r).map_err(FormatError::from)?;
            if !x.is_finite() {
                return Err(corrupt("non-finite vector component"));
            }
            vectors.push(x);
        }
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag).map_err(FormatError::from)?;
        let graph = match flag[0] {
            0 => None,
            1 => Some(Hnsw::read_from(r, n)?),
            _ => return Err(corrupt("bad graph flag")),
        };
        Ok(Self {
            dim,
            vectors,
            tables,
            seg_table,
            graph,
        })
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self, DenseError> {
        Self::read_from(&mut bytes)
    }
}

/// Embeds every segment with `provider` and builds the store.
pub fn build_dense(
    segments: &[Segment],
    provider: &dyn EmbeddingProvider,
    config: &DenseConfig,
) -> Result<DenseIndex, DenseError> {
    if segments.is_empty() {
        return Err(DenseError::NoSegments);
    }
    let texts: Vec<&str> = segments.iter().map(|s| s.text.as_str()).collect();
    let vectors = provider.embed_passages(&texts)?;
    if vectors.len() != segments.len() {
        return Err(DenseError::Remote(format!(
            "expected {} vectors, got {}",
            segments.len(),
            vectors.len()
        )));
    }
    let ids: Vec<&str> = segments.iter().map(|s| s.table_id.as_str()).collect();
    DenseIndex::from_vectors(provider.dim(), vectors, &ids, config)
}
