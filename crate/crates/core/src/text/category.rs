use sha2::{Digest, Sha256};

use super::vocab::{TokenSequence, Vocab};
use crate::error::{Error, Result};

/// One row of the category file: id, display name, core product words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryText {
    pub id: usize,
    pub name: String,
    pub product_words: Vec<String>,
}

impl CategoryText {
    pub fn to_line(&self) -> String {
        format!("{}\t{}\t{}\n", self.id, self.name, self.product_words.join(" "))
    }
}

/// A category's name and product-word tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryRecord {
    pub category_id: usize,
    pub name: String,
    pub name_tokens: Vec<usize>,
    pub product_word_tokens: Vec<usize>,
}

impl CategoryRecord {
    pub fn from_text(text: &CategoryText, vocab: &Vocab) -> Result<Self> {
        let name_tokens = vocab.encode_chars(&text.name);
        if name_tokens.is_empty() {
            return Err(Error::Config(format!("category {} has an empty name", text.id)));
        }
        let product_word_tokens = text.product_words.iter().flat_map(|w| vocab.encode_chars(w)).collect();
        Ok(CategoryRecord {
            category_id: text.id,
            name: text.name.clone(),
            name_tokens,
            product_word_tokens,
        })
    }
}

/// Category text as the encoder sees it: name tokens then product-word
/// tokens, padded or truncated to `max_len`. Truncation keeps the name.
pub fn assemble_category_text(rec: &CategoryRecord, max_len: usize) -> TokenSequence {
    let ids = rec
        .name_tokens
        .iter()
        .chain(&rec.product_word_tokens)
        .copied()
        .collect();
    TokenSequence::from_ids(ids, max_len)
}

/// The fixed, ordered label space. `records[i].category_id == i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategorySet {
    records: Vec<CategoryRecord>,
    hash: String,
}

impl CategorySet {
    pub fn new(texts: &[CategoryText], vocab: &Vocab) -> Result<Self> {
        if texts.is_empty() {
            return Err(Error::Config("category set is empty".into()));
        }
        let mut hasher = Sha256::new();
        let mut records = Vec::with_capacity(texts.len());
        for (pos, t) in texts.iter().enumerate() {
            if t.id != pos {
                return Err(Error::Config(format!(
                    "category ids must be 0..n in order; found id {} at position {pos}",
                    t.id
                )));
            }
            hasher.update(t.to_line().as_bytes());
            records.push(CategoryRecord::from_text(t, vocab)?);
        }
        Ok(CategorySet {
            records,
            hash: hex::encode(hasher.finalize()),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[CategoryRecord] {
        &self.records
    }

    pub fn get(&self, id: usize) -> &CategoryRecord {
        &self.records[id]
    }

    /// SHA-256 of the category file lines, hex encoded.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn assembled(&self, max_len: usize) -> Vec<TokenSequence> {
        self.records
            .iter()
            .map(|r| assemble_category_text(r, max_len))
            .collect()
    }
}
