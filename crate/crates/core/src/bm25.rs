//! Okapi BM25 over table segments.
//!
//! Segments are scored with
//!
//! ```text
//! score(q, d) = Σ_{t ∈ q} idf(t) · tf·(k1 + 1) / (tf + k1·(1 − b + b·|d|/avgdl))
//! idf(t)      = ln(1 + (N − df + 0.5) / (df + 0.5))
//! ```
//!
//! and a table scores as its best segment. Repeated query terms contribute
//! once per occurrence.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio::{self, FormatError};
use crate::linearize::Segment;
use crate::tokenize::analyze;

const MAGIC: &[u8; 8] = b"TRAGBM25";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum Bm25Error {
    #[error("cannot build an index over zero segments")]
    EmptyCorpus,
    #[error("query has no indexable token")]
    EmptyQuery,
    #[error("invalid parameters: k1={k1}, b={b}")]
    InvalidParams { k1: f64, b: f64 },
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 0.9, b: 0.4 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), Bm25Error> {
        let ok = self.k1.is_finite() && self.k1 > 0.0 && (0.0..=1.0).contains(&self.b);
        if ok {
            Ok(())
        } else {
            Err(Bm25Error::InvalidParams { k1: self.k1, b: self.b })
        }
    }
}

/// Position of a segment in the list the index was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegmentRef(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Posting {
    seg: u32,
    tf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredHit {
    pub table_id: String,
    pub segment: SegmentRef,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    params: Bm25Params,
    tables: Vec<String>,
    seg_table: Vec<u32>,
    doc_lengths: Vec<u32>,
    avg_doc_len: f64,
    postings: BTreeMap<String, Vec<Posting>>,
}

/// `ln(1 + (N − df + 0.5) / (df + 0.5))`
pub fn idf(n_docs: usize, df: usize) -> f64 {
    let n = n_docs as f64;
    let df = df as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// Saturated term-frequency weight of one term in one document.
pub fn tf_weight(tf: f64, doc_len: f64, avg_doc_len: f64, params: Bm25Params) -> f64 {
    let norm = if avg_doc_len > 0.0 { doc_len / avg_doc_len } else { 1.0 };
    tf * (params.k1 + 1.0) / (tf + params.k1 * (1.0 - params.b + params.b * norm))
}

impl Bm25Index {
    pub fn build(segments: &[Segment], params: Bm25Params) -> Result<Self, Bm25Error> {
        params.validate()?;
        if segments.is_empty() {
            return Err(Bm25Error::EmptyCorpus);
        }
        let mut tables: Vec<String> = Vec::new();
        let mut table_ix: BTreeMap<&str, u32> = BTreeMap::new();
        let mut seg_table = Vec::with_capacity(segments.len());
        let mut doc_lengths = Vec::with_capacity(segments.len());
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();

        for (i, seg) in segments.iter().enumerate() {
            let ti = *table_ix.entry(seg.table_id.as_str()).or_insert_with(|| {
                tables.push(seg.table_id.clone());
                (tables.len() - 1) as u32
            });
            seg_table.push(ti);
            let tokens = analyze(&seg.text);
            doc_lengths.push(tokens.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting {
                    seg: i as u32,
                    tf: count,
                });
            }
        }
        let avg_doc_len = doc_lengths.iter().map(|&l| f64::from(l)).sum::<f64>() / doc_lengths.len() as f64;
        Ok(Self {
            params,
            tables,
            seg_table,
            doc_lengths,
            avg_doc_len,
            postings,
        })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn n_segments(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn n_tables(&self) -> usize {
        self.tables.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn doc_len(&self, seg: SegmentRef) -> usize {
        self.doc_lengths[seg.0 as usize] as usize
    }

    pub fn df(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn n_terms(&self) -> usize {
        self.postings.len()
    }

    pub fn table_of(&self, seg: SegmentRef) -> &str {
        &self.tables[self.seg_table[seg.0 as usize] as usize]
    }

    /// Per-segment scores for `query`, indexed by segment ref.
    pub fn segment_scores(&self, query: &str) -> Result<Vec<f64>, Bm25Error> {
        let terms = analyze(query);
        if terms.is_empty() {
            return Err(Bm25Error::EmptyQuery);
        }
        let n = self.n_segments();
        let mut acc = vec![0.0f64; n];
        for term in &terms {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let w = idf(n, list.len());
            for p in list {
                let dl = f64::from(self.doc_lengths[p.seg as usize]);
                acc[p.seg as usize] += w * tf_weight(f64::from(p.tf), dl, self.avg_doc_len, self.params);
            }
        }
        Ok(acc)
    }

    /// Table-level search: each table scores as its best segment; tables
    /// with a non-positive score are dropped. Ties order by table id.
    pub fn search(&self, query: &str, top_k: usize) -> Result<Vec<ScoredHit>, Bm25Error> {
        let scores = self.segment_scores(query)?;
        let mut best: Vec<Option<(f64, u32)>> = vec![None; self.tables.len()];
        for (seg, &s) in scores.iter().enumerate() {
            if s <= 0.0 {
                continue;
            }
            let slot = &mut best[self.seg_table[seg] as usize];
            match slot {
                Some((b, _)) if *b >= s => {}
                _ => *slot = Some((s, seg as u32)),
            }
        }
        let mut hits: Vec<ScoredHit> = best
            .into_iter()
            .enumerate()
            .filter_map(|(ti, b)| {
                b.map(|(score, seg)| ScoredHit {
                    table_id: self.tables[ti].clone(),
                    segment: SegmentRef(seg),
                    score,
                })
            })
            .collect();
        sort_hits(&mut hits);
        hits.truncate(top_k);
        Ok(hits)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        binio::write_header(w, MAGIC, VERSION)?;
        binio::write_f64(w, self.params.k1)?;
        binio::write_f64(w, self.params.b)?;
        binio::write_len(w, self.tables.len())?;
        for t in &self.tables {
            binio::write_str(w, t)?;
        }
        binio::write_len(w, self.doc_lengths.len())?;
        for (&t, &l) in self.seg_table.iter().zip(&self.doc_lengths) {
            binio::write_u32(w, t)?;
            binio::write_u32(w, l)?;
        }
        binio::write_len(w, self.postings.len())?;
        for (term, list) in &self.postings {
            binio::write_str(w, term)?;
            binio::write_len(w, list.len())?;
            for p in list {
                binio::write_u32(w, p.seg)?;
                binio::write_u32(w, p.tf)?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Decodes an index, validating every structural invariant.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, Bm25Error> {
        binio::read_header(r, MAGIC, VERSION)?;
        let corrupt = |m: &str| Bm25Error::Format(FormatError::Corrupt(m.to_owned()));
        let params = Bm25Params {
            k1: binio::read_f64(r).map_err(FormatError::from)?,
            b: binio::read_f64(r).map_err(FormatError::from)?,
        };
        params.validate().map_err(|_| corrupt("bad parameters"))?;

        let n_tables = binio::read_len(r, u32::MAX, "table list")?;
        let mut tables = Vec::with_capacity(binio::initial_capacity(n_tables));
        for _ in 0..n_tables {
            tables.push(binio::read_str(r)?);
        }
        let n = binio::read_len(r, u32::MAX, "segment list")?;
        if n == 0 {
            return Err(corrupt("index has no segments"));
        }
        let mut seg_table = Vec::with_capacity(binio::initial_capacity(n));
        let mut doc_lengths = Vec::with_capacity(binio::initial_capacity(n));
        for _ in 0..n {
            let t = binio::read_u32(r).map_err(FormatError::from)?;
            if t as usize >= tables.len() {
                return Err(corrupt("segment table out of range"));
            }
            seg_table.push(t);
            doc_lengths.push(binio::read_u32(r).map_err(FormatError::from)?);
        }
        let n_terms = binio::read_len(r, u32::MAX, "term list")?;
        let mut postings = BTreeMap::new();
        let mut tf_sums = vec![0u64; n];
        let mut last_term: Option<String> = None;
        for _ in 0..n_terms {
            let term = binio::read_str(r)?;
            if last_term.as_ref().is_some_and(|l| *l >= term) {
                return Err(corrupt("terms not strictly sorted"));
            }
            let len = binio::read_len(r, n as u32, "posting list")?;
            if len == 0 {
                return Err(corrupt("empty posting list"));
            }
            let mut list = Vec::with_capacity(binio::initial_capacity(len));
            for _ in 0..len {
                let seg = binio::read_u32(r).map_err(FormatError::from)?;
                let tf = binio::read_u32(r).map_err(FormatError::from)?;
                if seg as usize >= n || tf == 0 {
                    return Err(corrupt("bad posting"));
                }
                if list.last().is_some_and(|p: &Posting| p.seg >= seg) {
                    return Err(corrupt("postings not sorted"));
                }
                tf_sums[seg as usize] += u64::from(tf);
                list.push(Posting { seg, tf });
            }
            last_term = Some(term.clone());
            postings.insert(term, list);
        }
        if tf_sums.iter().zip(&doc_lengths).any(|(&s, &l)| s != u64::from(l)) {
            return Err(corrupt("document lengths disagree with postings"));
        }
        let avg_doc_len = doc_lengths.iter().map(|&l| f64::from(l)).sum::<f64>() / doc_lengths.len() as f64;
        Ok(Self {
            params,
            tables,
            seg_table,
            doc_lengths,
            avg_doc_len,
            postings,
        })
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self, Bm25Error> {
        Self::read_from(&mut bytes)
    }
}

/// Descending score, ascending table id on ties.
pub fn sort_hits(hits: &mut [ScoredHit]) {
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.table_id.cmp(&b.table_id)));
}
