//! Core engine for end-to-end question answering over table corpora.
//!
//! Tables are linearized and segmented ([`linearize`]), indexed sparsely
//! ([`bm25`]) and densely ([`dense`]), mined for soft hard negatives
//! ([`miner`]), answered by marginalizing a generator over retrieved tables
//! ([`rag`]) and scored with the usual QA and ranking metrics ([`eval`]).

pub mod binio;
pub mod bm25;
pub mod corpus;
pub mod dense;
pub mod eval;
pub mod linearize;
pub mod miner;
pub mod rag;
pub mod store;
pub mod tokenize;

pub use corpus::{Corpus, QaExample, TableDoc};
pub use linearize::{linearize, segment, Segment};
