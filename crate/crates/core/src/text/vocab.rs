use std::collections::HashMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
const RESERVED: usize = 2;

/// Character vocabulary. Ids 0 and 1 are PAD and UNK; ordinary tokens start
/// at 2 in insertion order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary from distinct tokens; duplicates keep their first id.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocab::default();
        for t in tokens {
            v.insert(t.into());
        }
        v
    }

    /// Every non-whitespace character of `texts`, in first-seen order.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Vocab::default();
        for text in texts {
            for ch in text.chars().filter(|c| !c.is_whitespace()) {
                v.insert(ch.to_string());
            }
        }
        v
    }

    fn insert(&mut self, token: String) {
        if !self.index.contains_key(&token) {
            self.index.insert(token.clone(), self.tokens.len() + RESERVED);
            self.tokens.push(token);
        }
    }

    /// Total id space including the reserved ids.
    pub fn size(&self) -> usize {
        self.tokens.len() + RESERVED
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        match id {
            PAD_ID => Some("[PAD]"),
            UNK_ID => Some("[UNK]"),
            _ => self.tokens.get(id - RESERVED).map(String::as_str),
        }
    }

    /// Character ids of `text` with whitespace dropped, unknowns mapped to UNK.
    pub fn encode_chars(&self, text: &str) -> Vec<usize> {
        let mut buf = [0u8; 4];
        text.chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| self.id(c.encode_utf8(&mut buf)))
            .collect()
    }

    /// One token per line; line `k` (0-based) holds id `k + 2`.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut v = Vocab::default();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: i + 1,
                    msg: "empty vocabulary entry".into(),
                });
            }
            if v.index.contains_key(line) {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: i + 1,
                    msg: format!("duplicate token {line:?}"),
                });
            }
            v.insert(line.to_string());
        }
        Ok(v)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    /// SHA-256 of the file serialization, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_file_string().as_bytes()))
    }
}

/// Token ids padded or truncated to a fixed length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    /// Number of leading non-pad entries.
    pub true_length: usize,
}

impl TokenSequence {
    /// Pads with PAD or truncates `ids` to exactly `max_len` entries. An empty
    /// input becomes a single UNK.
    pub fn from_ids(mut ids: Vec<usize>, max_len: usize) -> Self {
        if ids.is_empty() {
            ids.push(UNK_ID);
        }
        ids.truncate(max_len);
        let true_length = ids.len();
        ids.resize(max_len, PAD_ID);
        TokenSequence { ids, true_length }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// True at non-pad positions.
    pub fn mask(&self) -> Vec<bool> {
        (0..self.ids.len()).map(|i| i < self.true_length).collect()
    }
}

/// Character-level tokenization to exactly `max_len` ids.
pub fn tokenize(text: &str, vocab: &Vocab, max_len: usize) -> Result<TokenSequence> {
    if max_len == 0 {
        return Err(Error::Config("maximum sequence length must be at least 1".into()));
    }
    Ok(TokenSequence::from_ids(vocab.encode_chars(text), max_len))
}
