//! On-disk index directory.
//!
//! ```text
//! <dir>/meta.json        build settings
//! <dir>/tables.jsonl     the ingested corpus
//! <dir>/segments.jsonl   one segment per line, in index order
//! <dir>/bm25.bin         sparse index (optional)
//! <dir>/dense.bin        dense index (optional)
//! ```

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bm25::{Bm25Error, Bm25Index, Bm25Params, SegmentRef};
use crate::corpus::{load_corpus, Corpus, CorpusError};
use crate::dense::{DenseConfig, DenseError, DenseIndex};
use crate::linearize::Segment;

pub const META_FILE: &str = "meta.json";
pub const TABLES_FILE: &str = "tables.jsonl";
pub const SEGMENTS_FILE: &str = "segments.jsonl";
pub const BM25_FILE: &str = "bm25.bin";
pub const DENSE_FILE: &str = "dense.bin";
pub const STORE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("index directory {0} has no {1} index")]
    Missing(PathBuf, &'static str),
    #[error("index files disagree: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{path}: {source}")]
    Bm25 { path: PathBuf, source: Bm25Error },
    #[error("{path}: {source}")]
    Dense { path: PathBuf, source: DenseError },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderSpec {
    Local { dim: usize },
    Remote { base_url: String, dim: usize },
}

impl ProviderSpec {
    pub fn dim(&self) -> usize {
        match self {
            Self::Local { dim } | Self::Remote { dim, .. } => *dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMeta {
    pub provider: ProviderSpec,
    pub config: DenseConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexMeta {
    pub version: u32,
    pub segment_budget: usize,
    pub tokenizer: String,
    pub n_tables: usize,
    pub n_segments: usize,
    pub bm25: Option<Bm25Params>,
    pub dense: Option<DenseMeta>,
}

#[derive(Debug, Clone)]
pub struct IndexDir {
    pub meta: IndexMeta,
    pub corpus: Corpus,
    pub segments: Vec<Segment>,
    pub bm25: Option<Bm25Index>,
    pub dense: Option<DenseIndex>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_owned(),
        source,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    // Write-then-rename so a crash never leaves a half-written index file.
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_segments<W: Write>(segments: &[Segment], mut w: W) -> std::io::Result<()> {
    for s in segments {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_segments<R: BufRead>(r: R) -> Result<Vec<Segment>, String> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(out)
}

impl IndexDir {
    /// Checks that segments, corpus and indexes describe the same data.
    pub fn validate(&self) -> Result<(), StoreError> {
        let bad = |m: String| Err(StoreError::Inconsistent(m));
        if self.meta.n_segments != self.segments.len() || self.meta.n_tables != self.corpus.len() {
            return bad("meta counts do not match contents".into());
        }
        for s in &self.segments {
            if !self.corpus.contains(&s.table_id) {
                return bad(format!("segment of unknown table {}", s.table_id));
            }
        }
        if let Some(b) = &self.bm25 {
            if b.n_segments() != self.segments.len() {
                return bad("bm25 segment count".into());
            }
            for (i, s) in self.segments.iter().enumerate() {
                if b.table_of(SegmentRef(i as u32)) != s.table_id {
                    return bad(format!("bm25 segment {i} belongs to another table"));
                }
            }
        }
        if let Some(d) = &self.dense {
            if d.len() != self.segments.len() {
                return bad("dense segment count".into());
            }
            if let Some(m) = &self.meta.dense {
                if m.provider.dim() != d.dim() {
                    return bad("dense dimension".into());
                }
            }
            for (i, s) in self.segments.iter().enumerate() {
                if d.table_of(SegmentRef(i as u32)) != s.table_id {
                    return bad(format!("dense segment {i} belongs to another table"));
                }
            }
        }
        if self.bm25.is_some() != self.meta.bm25.is_some() || self.dense.is_some() != self.meta.dense.is_some() {
            return bad("meta lists a different set of indexes".into());
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<(), StoreError> {
        self.validate()?;
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut buf = Vec::new();
        self.corpus.write_jsonl(&mut buf).map_err(io_err(dir))?;
        write_file(&dir.join(TABLES_FILE), &buf)?;
        buf.clear();
        write_segments(&self.segments, &mut buf).map_err(io_err(dir))?;
        write_file(&dir.join(SEGMENTS_FILE), &buf)?;
        for (present, name, bytes) in [
            (
                self.bm25.is_some(),
                BM25_FILE,
                self.bm25.as_ref().map(Bm25Index::to_bytes),
            ),
            (
                self.dense.is_some(),
                DENSE_FILE,
                self.dense.as_ref().map(DenseIndex::to_bytes),
            ),
        ] {
            let path = dir.join(name);
            match bytes {
                Some(b) => write_file(&path, &b)?,
                None if !present && path.exists() => fs::remove_file(&path).map_err(io_err(&path))?,
                None => {}
            }
        }
        let meta = serde_json::to_vec_pretty(&self.meta).expect("meta serializes");
        write_file(&dir.join(META_FILE), &meta)
    }

    pub fn load(dir: &Path) -> Result<Self, StoreError> {
        let meta_path = dir.join(META_FILE);
        let raw = fs::read(&meta_path).map_err(io_err(&meta_path))?;
        let meta: IndexMeta = serde_json::from_slice(&raw).map_err(|e| StoreError::Malformed {
            path: meta_path.clone(),
            reason: e.to_string(),
        })?;
        if meta.version != STORE_VERSION {
            return Err(StoreError::Malformed {
                path: meta_path,
                reason: format!("unsupported version {}", meta.version),
            });
        }
        let corpus = load_corpus(dir.join(TABLES_FILE))?;
        let seg_path = dir.join(SEGMENTS_FILE);
        let f = File::open(&seg_path).map_err(io_err(&seg_path))?;
        let segments = read_segments(BufReader::new(f)).map_err(|reason| StoreError::Malformed {
            path: seg_path.clone(),
            reason,
        })?;
        let bm25 = if meta.bm25.is_some() {
            let path = dir.join(BM25_FILE);
            let f = File::open(&path).map_err(io_err(&path))?;
            Some(Bm25Index::read_from(&mut BufReader::new(f)).map_err(|source| StoreError::Bm25 { path, source })?)
        } else {
            None
        };
        let dense = if meta.dense.is_some() {
            let path = dir.join(DENSE_FILE);
            let f = File::open(&path).map_err(io_err(&path))?;
            Some(DenseIndex::read_from(&mut BufReader::new(f)).map_err(|source| StoreError::Dense { path, source })?)
        } else {
            None
        };
        let out = Self {
            meta,
            corpus,
            segments,
            bm25,
            dense,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn bm25(&self, dir: &Path) -> Result<&Bm25Index, StoreError> {
        self.bm25
            .as_ref()
            .ok_or_else(|| StoreError::Missing(dir.to_owned(), "bm25"))
    }

    pub fn dense(&self, dir: &Path) -> Result<&DenseIndex, StoreError> {
        self.dense
            .as_ref()
            .ok_or_else(|| StoreError::Missing(dir.to_owned(), "dense"))
    }
}

/// Buffered writer helper for callers producing JSONL output files.
pub fn create_writer(path: &Path) -> Result<BufWriter<File>, StoreError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}
