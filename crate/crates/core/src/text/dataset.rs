//! Line-oriented UTF-8 dataset files.
//!
//! Query file: `<query>\t<id[,id...]>\n`.
//! Category file: `<id>\t<name>\t<word word ...>\n`.

use std::path::Path;

use super::category::CategoryText;
use super::vocab::{tokenize, TokenSequence, Vocab};
use crate::error::{Error, Result};

/// One row of a query file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryRecord {
    pub text: String,
    pub labels: Vec<usize>,
}

impl QueryRecord {
    pub fn to_line(&self) -> String {
        let ids: Vec<String> = self.labels.iter().map(usize::to_string).collect();
        format!("{}\t{}\n", self.text, ids.join(","))
    }
}

/// A tokenized query with its dense binary label vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledQuery {
    pub query: TokenSequence,
    pub labels: Vec<bool>,
}

impl LabeledQuery {
    pub fn targets(&self) -> Vec<f64> {
        self.labels.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

fn parse_err(origin: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: origin.to_string(),
        line,
        msg: msg.into(),
    }
}

pub fn parse_queries(text: &str, origin: &str) -> Result<Vec<QueryRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let (query, ids) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(origin, n, "expected `<query>\\t<ids>`"))?;
        if ids.contains('\t') {
            return Err(parse_err(origin, n, "too many tab-separated fields"));
        }
        let mut labels = Vec::new();
        for tok in ids.split(',') {
            let id = tok
                .trim()
                .parse::<usize>()
                .map_err(|_| parse_err(origin, n, format!("bad category id {tok:?}")))?;
            if !labels.contains(&id) {
                labels.push(id);
            }
        }
        out.push(QueryRecord {
            text: query.to_string(),
            labels,
        });
    }
    Ok(out)
}

pub fn parse_categories(text: &str, origin: &str) -> Result<Vec<CategoryText>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        let [id, name, words] = fields[..] else {
            return Err(parse_err(origin, n, "expected `<id>\\t<name>\\t<words>`"));
        };
        let id = id
            .trim()
            .parse::<usize>()
            .map_err(|_| parse_err(origin, n, format!("bad category id {id:?}")))?;
        if name.trim().is_empty() {
            return Err(parse_err(origin, n, "empty category name"));
        }
        out.push(CategoryText {
            id,
            name: name.to_string(),
            product_words: words.split_whitespace().map(str::to_string).collect(),
        });
    }
    Ok(out)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_queries(path: &Path) -> Result<Vec<QueryRecord>> {
    parse_queries(&read(path)?, &path.display().to_string())
}

pub fn read_categories(path: &Path) -> Result<Vec<CategoryText>> {
    parse_categories(&read(path)?, &path.display().to_string())
}

pub fn write_text_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn write_queries(path: &Path, records: &[QueryRecord]) -> Result<()> {
    write_text_file(path, &records.iter().map(QueryRecord::to_line).collect::<String>())
}

pub fn write_categories(path: &Path, cats: &[CategoryText]) -> Result<()> {
    write_text_file(path, &cats.iter().map(CategoryText::to_line).collect::<String>())
}

/// Tokenizes queries and expands label ids into `num_categories`-long binary
/// vectors. Ids outside the label space are rejected.
pub fn encode_queries(
    records: &[QueryRecord],
    vocab: &Vocab,
    max_len: usize,
    num_categories: usize,
) -> Result<Vec<LabeledQuery>> {
    records
        .iter()
        .map(|r| {
            let mut labels = vec![false; num_categories];
            for &id in &r.labels {
                if id >= num_categories {
                    return Err(Error::LabelCount {
                        expected: num_categories,
                        found: id + 1,
                    });
                }
                labels[id] = true;
            }
            Ok(LabeledQuery {
                query: tokenize(&r.text, vocab, max_len)?,
                labels,
            })
        })
        .collect()
}
