//! Table and QA-example data model plus JSONL/CSV ingestion.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed record on line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("table {id:?}: row {row} does not match the header width")]
    NonRectangular { id: String, row: usize },
    #[error("question {qid:?} references table {table_id:?}, which is not in the corpus")]
    MissingGold { qid: String, table_id: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// A web table: optional title, a header row and rectangular body rows.
///
/// Header names may repeat. Construct through [`TableDoc::new`] or by
/// deserializing a corpus record; both paths check rectangularity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TableRecord")]
pub struct TableDoc {
    id: String,
    title: Option<String>,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TableRecord {
    id: String,
    #[serde(default)]
    title: Option<String>,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl TryFrom<TableRecord> for TableDoc {
    type Error = CorpusError;

    fn try_from(r: TableRecord) -> Result<Self, Self::Error> {
        TableDoc::new(r.id, r.title, r.header, r.rows)
    }
}

impl TableDoc {
    pub fn new(
        id: impl Into<String>,
        title: Option<String>,
        header: Vec<String>,
        rows: Vec<Vec<String>>,
    ) -> Result<Self, CorpusError> {
        let id = id.into();
        if id.is_empty() {
            return Err(CorpusError::MalformedRecord {
                line: 0,
                reason: "empty table id".into(),
            });
        }
        if let Some(i) = rows.iter().position(|r| r.len() != header.len()) {
            return Err(CorpusError::NonRectangular { id, row: i + 1 });
        }
        Ok(Self {
            id,
            title,
            header,
            rows,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn title(&self) -> Option<&str> {
        self.title.as_deref()
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.header.len()
    }

    pub fn cell(&self, row: usize, col: usize) -> Option<&str> {
        self.rows.get(row)?.get(col).map(String::as_str)
    }
}

/// One labelled question: `{q, T, a}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "QaRecord")]
pub struct QaExample {
    pub qid: String,
    pub question: String,
    #[serde(rename = "table_id")]
    pub gold_table_id: String,
    pub answers: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QaRecord {
    qid: String,
    question: String,
    table_id: String,
    answers: Vec<String>,
}

impl TryFrom<QaRecord> for QaExample {
    type Error = String;

    fn try_from(r: QaRecord) -> Result<Self, Self::Error> {
        if r.qid.is_empty() {
            return Err("empty qid".into());
        }
        if r.answers.is_empty() {
            return Err(format!("question {:?} has no answers", r.qid));
        }
        Ok(Self {
            qid: r.qid,
            question: r.question,
            gold_table_id: r.table_id,
            answers: r.answers,
        })
    }
}

/// An ordered collection of tables with id lookup.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    tables: Vec<TableDoc>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(tables: Vec<TableDoc>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(tables.len());
        for (i, t) in tables.iter().enumerate() {
            if by_id.insert(t.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId(t.id.clone()));
            }
        }
        Ok(Self { tables, by_id })
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&TableDoc> {
        self.by_id.get(id).map(|&i| &self.tables[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn tables(&self) -> &[TableDoc] {
        &self.tables
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TableDoc> {
        self.tables.iter()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for t in &self.tables {
            serde_json::to_writer(&mut out, t)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn parse_lines<T, R>(reader: R) -> Result<Vec<T>, CorpusError>
where
    T: for<'de> Deserialize<'de>,
    R: BufRead,
{
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str::<T>(&line).map_err(|e| CorpusError::MalformedRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Parses a corpus JSONL stream, one table per non-blank line.
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Corpus, CorpusError> {
    let mut tables = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TableRecord = serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        tables.push(TableDoc::try_from(rec).map_err(|e| match e {
            CorpusError::MalformedRecord { reason, .. } => CorpusError::MalformedRecord { line: i + 1, reason },
            other => other,
        })?);
    }
    Corpus::new(tables)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    parse_corpus(BufReader::new(File::open(path)?))
}

/// Parses a QA JSONL stream. Duplicate qids are rejected.
pub fn parse_qa<R: BufRead>(reader: R) -> Result<Vec<QaExample>, CorpusError> {
    let examples: Vec<QaExample> = parse_lines(reader)?;
    let mut seen = HashSet::new();
    for ex in &examples {
        if !seen.insert(ex.qid.as_str()) {
            return Err(CorpusError::DuplicateId(ex.qid.clone()));
        }
    }
    Ok(examples)
}

pub fn load_qa(path: impl AsRef<Path>) -> Result<Vec<QaExample>, CorpusError> {
    parse_qa(BufReader::new(File::open(path)?))
}

/// Checks that every question's gold table exists in `corpus`.
pub fn check_gold_tables(examples: &[QaExample], corpus: &Corpus) -> Result<(), CorpusError> {
    match examples.iter().find(|e| !corpus.contains(&e.gold_table_id)) {
        Some(e) => Err(CorpusError::MissingGold {
            qid: e.qid.clone(),
            table_id: e.gold_table_id.clone(),
        }),
        None => Ok(()),
    }
}

/// Reads a CSV file (first record is the header) as a single table.
pub fn table_from_csv<R: Read>(
    id: impl Into<String>,
    title: Option<String>,
    reader: R,
) -> Result<TableDoc, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        rows.push(rec?.iter().map(str::to_owned).collect());
    }
    TableDoc::new(id, title, header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn loads_two_tables() {
        let data = r#"{"id":"t1","title":"One","header":["a"],"rows":[["x"]]}
{"id":"t2","title":null,"header":["a","b"],"rows":[]}
"#;
        let c = parse_corpus(data.as_bytes()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.get("t1").unwrap().title(), Some("One"));
        assert_eq!(c.get("t2").unwrap().n_cols(), 2);
    }

    #[test]
    fn rejects_ragged_rows() {
        let data = r#"{"id":"t9","title":null,"header":["a","b","c"],"rows":[["1","2","3"],["1","2","3"],["1","2"]]}"#;
        match parse_corpus(data.as_bytes()) {
            Err(CorpusError::NonRectangular { id, row }) => {
                assert_eq!(id, "t9");
                assert_eq!(row, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicate_ids() {
        let data = "{\"id\":\"t\",\"header\":[],\"rows\":[]}\n{\"id\":\"t\",\"header\":[],\"rows\":[]}\n";
        assert!(matches!(
            parse_corpus(data.as_bytes()),
            Err(CorpusError::DuplicateId(id)) if id == "t"
        ));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let data = "{\"id\":\"t\",\"header\":[],\"rows\":[]}\n\nnot json\n";
        assert!(matches!(
            parse_corpus(data.as_bytes()),
            Err(CorpusError::MalformedRecord { line: 3, .. })
        ));
        let data = "{\"id\":\"\",\"header\":[],\"rows\":[]}\n";
        assert!(matches!(
            parse_corpus(data.as_bytes()),
            Err(CorpusError::MalformedRecord { line: 1, .. })
        ));
    }

    #[test]
    fn repeated_header_names_are_fine() {
        let t = TableDoc::new("t", None, s(&["Year", "Year"]), vec![s(&["1", "2"])]).unwrap();
        assert_eq!(t.cell(0, 1), Some("2"));
    }

    #[test]
    fn qa_parsing_and_gold_check() {
        let qa = r#"{"qid":"q1","question":"who?","table_id":"t1","answers":["x"]}
{"qid":"q2","question":"what?","table_id":"t3","answers":["y","z"]}"#;
        let ex = parse_qa(qa.as_bytes()).unwrap();
        assert_eq!(ex[1].answers.len(), 2);
        let corpus = Corpus::new(vec![TableDoc::new("t1", None, s(&["a"]), vec![]).unwrap()]).unwrap();
        assert!(matches!(
            check_gold_tables(&ex, &corpus),
            Err(CorpusError::MissingGold { qid, .. }) if qid == "q2"
        ));
    }

    #[test]
    fn qa_requires_answers() {
        let qa = r#"{"qid":"q1","question":"who?","table_id":"t1","answers":[]}"#;
        assert!(matches!(
            parse_qa(qa.as_bytes()),
            Err(CorpusError::MalformedRecord { line: 1, .. })
        ));
    }

    #[test]
    fn csv_wrapper() {
        let csv = "Editor,Year\nA. Smith,1990\n";
        let t = table_from_csv("ikar", Some("Ikar".into()), csv.as_bytes()).unwrap();
        assert_eq!(t.header(), &s(&["Editor", "Year"])[..]);
        assert_eq!(t.rows(), &[s(&["A. Smith", "1990"])][..]);
        let ragged = "a,b\n1\n";
        assert!(matches!(
            table_from_csv("r", None, ragged.as_bytes()),
            Err(CorpusError::NonRectangular { row: 1, .. })
        ));
    }

    #[test]
    fn jsonl_round_trip() {
        let t = TableDoc::new("t", Some("T".into()), s(&["h"]), vec![s(&["c"])]).unwrap();
        let c = Corpus::new(vec![t.clone()]).unwrap();
        let mut buf = Vec::new();
        c.write_jsonl(&mut buf).unwrap();
        let back = parse_corpus(&buf[..]).unwrap();
        assert_eq!(back.tables(), &[t][..]);
    }
}
