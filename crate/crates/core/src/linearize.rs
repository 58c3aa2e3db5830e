//! Structure-preserving table linearization and token-budget segmentation.
//!
//! A table is flattened as
//!
//! ```text
//! [title ]<h1> | <c11> <h2> | <c12> * <h1> | <c21> <h2> | <c22> *
//! ```
//!
//! Segments repeat the title prefix and then pack whole rows greedily up to
//! the budget. Because every cell is already paired with its column header,
//! each segment stays self-describing. A row longer than the remaining
//! budget is hard-split at token boundaries.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, TableDoc};
use crate::tokenize::Tokenizer;

pub const HEADER_SEP: &str = " | ";
pub const ROW_END: &str = " *";
pub const DEFAULT_BUDGET: usize = 512;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SegmentError {
    #[error("table {table_id:?}: prefix needs {prefix_tokens} tokens, budget is {budget}")]
    BudgetTooSmall {
        table_id: String,
        prefix_tokens: usize,
        budget: usize,
    },
}

/// A retrieval unit cut from one table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub table_id: String,
    pub seg_index: usize,
    pub text: String,
    pub token_count: usize,
    /// Rows (0-based, end exclusive) that contribute text to this segment.
    pub rows: Range<usize>,
    /// Byte range of [`row_text`] covered by this segment. The ranges of a
    /// table's segments partition the row text in order.
    pub body: Range<usize>,
    /// Set when the segment holds a piece of a row that was hard-split.
    pub overflow: bool,
}

fn render_row(header: &[String], row: &[String], out: &mut String) {
    for (i, (h, c)) in header.iter().zip(row).enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(h);
        out.push_str(HEADER_SEP);
        out.push_str(c);
    }
    out.push_str(ROW_END);
}

/// Row portion of the linearization, plus the byte span of each row.
pub fn row_text(table: &TableDoc) -> (String, Vec<Range<usize>>) {
    let mut text = String::new();
    let mut spans = Vec::with_capacity(table.n_rows());
    for (i, row) in table.rows().iter().enumerate() {
        if i > 0 {
            text.push(' ');
        }
        let start = text.len();
        render_row(table.header(), row, &mut text);
        // a zero-column row renders as "*" alone; drop the leading space
        if table.n_cols() == 0 {
            text.replace_range(start..start + 1, "");
        }
        spans.push(start..text.len());
    }
    (text, spans)
}

fn title_prefix(table: &TableDoc) -> &str {
    table.title().unwrap_or("")
}

fn join_prefix(prefix: &str, body: &str) -> String {
    match (prefix.is_empty(), body.is_empty()) {
        (true, _) => body.to_owned(),
        (false, true) => prefix.to_owned(),
        (false, false) => format!("{prefix} {body}"),
    }
}

/// Flattens a table into a single string (title, then rows).
pub fn linearize(table: &TableDoc) -> String {
    let (rows, _) = row_text(table);
    join_prefix(title_prefix(table), &rows)
}

/// Splits a table into segments of at most `budget` tokens.
pub fn segment(table: &TableDoc, budget: usize, tokenizer: &dyn Tokenizer) -> Result<Vec<Segment>, SegmentError> {
    let prefix = title_prefix(table);
    let prefix_tokens = tokenizer.count(prefix);
    let (text, spans) = row_text(table);

    if spans.is_empty() {
        if prefix.is_empty() {
            return Ok(Vec::new());
        }
        return Ok(vec![Segment {
            table_id: table.id().to_owned(),
            seg_index: 0,
            text: prefix.to_owned(),
            token_count: prefix_tokens,
            rows: 0..0,
            body: 0..0,
            overflow: false,
        }]);
    }
    if prefix_tokens + 1 > budget {
        return Err(SegmentError::BudgetTooSmall {
            table_id: table.id().to_owned(),
            prefix_tokens,
            budget,
        });
    }
    let capacity = budget - prefix_tokens;

    let mut packer = Packer {
        table,
        prefix,
        text: &text,
        out: Vec::new(),
        open: None,
    };

    for (r, span) in spans.iter().enumerate() {
        let row_tokens = tokenizer.spans(&text[span.clone()]);
        let n = row_tokens.len();
        let used = packer.open.as_ref().map_or(0, |o| o.tokens);
        if used + n <= capacity {
            packer.push(r, span.start, n, false);
            continue;
        }
        if used > 0 {
            packer.close(span.start);
        }
        if n <= capacity {
            packer.push(r, span.start, n, false);
            continue;
        }
        // Hard split: full pieces of `capacity` tokens, the tail stays open
        // so that following rows can still be packed behind it.
        let mut taken = 0;
        while n - taken > capacity {
            let piece_start = if taken == 0 {
                span.start
            } else {
                span.start + row_tokens[taken].start
            };
            packer.push(r, piece_start, capacity, true);
            taken += capacity;
            packer.close(span.start + row_tokens[taken].start);
        }
        let tail_start = span.start + row_tokens[taken].start;
        packer.push(r, tail_start, n - taken, true);
    }
    packer.close(text.len());

    let mut out = packer.out;
    for s in &mut out {
        s.token_count = tokenizer.count(&s.text);
    }
    Ok(out)
}

struct OpenSegment {
    start: usize,
    rows: Range<usize>,
    tokens: usize,
    overflow: bool,
}

struct Packer<'a> {
    table: &'a TableDoc,
    prefix: &'a str,
    text: &'a str,
    out: Vec<Segment>,
    open: Option<OpenSegment>,
}

impl Packer<'_> {
    fn push(&mut self, row: usize, start: usize, tokens: usize, overflow: bool) {
        match &mut self.open {
            Some(o) => {
                o.rows.end = row + 1;
                o.tokens += tokens;
                o.overflow |= overflow;
            }
            None => {
                // the first segment owns any leading bytes of the row text
                let start = if self.out.is_empty() { 0 } else { start };
                self.open = Some(OpenSegment {
                    start,
                    rows: row..row + 1,
                    tokens,
                    overflow,
                });
            }
        }
    }

    fn close(&mut self, end: usize) {
        let Some(o) = self.open.take() else { return };
        let body = o.start..end;
        self.out.push(Segment {
            table_id: self.table.id().to_owned(),
            seg_index: self.out.len(),
            text: join_prefix(self.prefix, self.text[body.clone()].trim()),
            token_count: o.tokens,
            rows: o.rows,
            body,
            overflow: o.overflow,
        });
    }
}

/// Segments every table of a corpus, preserving corpus order.
pub fn segment_corpus(corpus: &Corpus, budget: usize, tokenizer: &dyn Tokenizer) -> Result<Vec<Segment>, SegmentError> {
    let per_table: Result<Vec<Vec<Segment>>, SegmentError> = corpus
        .tables()
        .par_iter()
        .map(|t| segment(t, budget, tokenizer))
        .collect();
    Ok(per_table?.into_iter().flatten().collect())
}

/// Concatenates the row-text pieces of a table's segments.
pub fn reassemble(table: &TableDoc, segments: &[Segment]) -> String {
    let (text, _) = row_text(table);
    segments
        .iter()
        .filter(|s| s.table_id == table.id())
        .map(|s| &text[s.body.clone()])
        .collect()
}
