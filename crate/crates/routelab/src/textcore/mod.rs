//! Deterministic tokenization, vocabulary, hashed embeddings, and the
//! n-gram language model used for perplexity scoring.
//!
//! The tokenizer is intentionally simple: lowercase, split on whitespace,
//! and break each maximal run of punctuation into its own token. Unknown
//! tokens map to a reserved id rather than erroring, so attack candidates
//! can contain any vocabulary token.

mod embed;
mod lm;

pub use embed::{cosine as cosine_sim, dot, embed, fnv1a64};
pub use lm::{perplexity, train_lm, NgramLM};

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Schema tag for persisted vocabularies and language models.
pub const SCHEMA: &str = "textcore/v1";

/// Reserved unknown-token id.
pub const UNK_ID: u32 = 0;

/// Surface form of the unknown token. A single replacement character:
/// it survives a detokenize/retokenize round trip as one punctuation run.
pub const UNK_TOKEN: &str = "\u{fffd}";

/// A token sequence over some [`Vocab`], with the original text kept
/// around for round-trips and for callers that need the surface string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub surface: Option<String>,
}

impl TokenSeq {
    pub fn new(ids: Vec<u32>) -> Self {
        TokenSeq { ids, surface: None }
    }

    pub fn empty() -> Self {
        TokenSeq {
            ids: Vec::new(),
            surface: None,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// The surface string if present, otherwise a detokenization.
    pub fn text(&self, vocab: &Vocab) -> String {
        match &self.surface {
            Some(s) => s.clone(),
            None => vocab.detokenize(&self.ids),
        }
    }
}

/// Token dictionary with dense ids `0..V-1`. Id 0 is always the unknown
/// token.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Build a vocabulary containing only the unknown token.
    fn new() -> Self {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        v.insert(UNK_TOKEN);
        v
    }

    /// Build from an explicit token list (first-seen order, duplicates
    /// ignored). The unknown token is prepended automatically.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Vocab::new();
        for t in tokens {
            v.insert(t.as_ref());
        }
        v
    }

    /// Build from corpus lines: every token encountered is added in
    /// first-seen order.
    pub fn from_corpus<I, S>(lines: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Vocab::new();
        for line in lines {
            for w in split_words(line.as_ref()) {
                v.insert(&w);
            }
        }
        v
    }

    fn insert(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token string for an id. Panics on out-of-range ids.
    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    /// Exact-string lookup; unknown strings map to [`UNK_ID`].
    pub fn lookup(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Lowercase, split on whitespace, and split each maximal punctuation
    /// run into its own token. Total function: out-of-vocab words map to
    /// the unknown id.
    pub fn tokenize(&self, text: &str) -> TokenSeq {
        let ids = split_words(text).iter().map(|w| self.lookup(w)).collect();
        TokenSeq {
            ids,
            surface: Some(text.to_string()),
        }
    }

    /// Join token surfaces with single spaces.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = VocabFile {
            schema: SCHEMA.to_string(),
            kind: "vocab".to_string(),
            tokens: self.tokens.clone(),
        };
        write_json(path, &file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: VocabFile = read_json(path)?;
        if file.schema != SCHEMA {
            return Err(Error::Schema {
                expected: SCHEMA.to_string(),
                got: file.schema,
            });
        }
        let mut index = HashMap::new();
        for (i, t) in file.tokens.iter().enumerate() {
            index.insert(t.clone(), i as u32);
        }
        Ok(Vocab {
            tokens: file.tokens,
            index,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    schema: String,
    kind: String,
    tokens: Vec<String>,
}

/// Lowercase word splitter shared by vocabulary construction and
/// tokenization. Alphanumeric runs and punctuation runs are separate
/// tokens; whitespace only separates.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    // 0 = none, 1 = alphanumeric, 2 = punctuation
    let mut cur_class = 0u8;
    for ch in text.to_lowercase().chars() {
        let class = if ch.is_whitespace() {
            0
        } else if ch.is_alphanumeric() {
            1
        } else {
            2
        };
        if class != cur_class && !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
        cur_class = class;
        if class != 0 {
            cur.push(ch);
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut buf = serde_json::to_vec_pretty(value)?;
    buf.push(b'\n');
    std::fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let data =
        std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(serde_json::from_slice(&data)?)
}

/// Read corpus lines from plain text (one document per line) or JSONL with
/// a `"text"` field, selected by file extension.
pub fn read_corpus_lines(path: &Path) -> Result<Vec<String>> {
    let data = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let jsonl = path.extension().and_then(|e| e.to_str()) == Some("jsonl");
    let mut out = Vec::new();
    for line in data.lines() {
        if line.trim().is_empty() {
            continue;
        }
        if jsonl {
            let v: serde_json::Value = serde_json::from_str(line)?;
            match v.get("text").and_then(|t| t.as_str()) {
                Some(t) => out.push(t.to_string()),
                None => {
                    return Err(Error::Config(format!(
                        "jsonl line missing \"text\" field: {line}"
                    )))
                }
            }
        } else {
            out.push(line.to_string());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::from_corpus(["hello , world", "a b ?!"])
    }

    #[test]
    fn tokenize_splits_punctuation_runs() {
        let v = vocab();
        let seq = v.tokenize("Hello, world");
        let words: Vec<_> = seq.ids.iter().map(|&i| v.token(i)).collect();
        assert_eq!(words, vec!["hello", ",", "world"]);
    }

    #[test]
    fn tokenize_empty_is_empty() {
        assert!(vocab().tokenize("").is_empty());
    }

    #[test]
    fn whitespace_runs_collapse() {
        let v = vocab();
        let seq = v.tokenize("A  A");
        assert_eq!(seq.ids, vec![v.lookup("a"), v.lookup("a")]);
    }

    #[test]
    fn oov_maps_to_unk() {
        let v = vocab();
        assert_eq!(v.tokenize("zebra").ids, vec![UNK_ID]);
    }

    #[test]
    fn ids_dense_and_unk_is_zero() {
        let v = vocab();
        assert_eq!(v.lookup(UNK_TOKEN), UNK_ID);
        for id in 0..v.len() as u32 {
            assert_eq!(v.lookup(v.token(id)), id);
        }
    }

    #[test]
    fn mixed_runs_split() {
        let v = Vocab::from_corpus(["what is 2 + 2 ?"]);
        let seq = v.tokenize("what is 2+2?");
        let words: Vec<_> = seq.ids.iter().map(|&i| v.token(i)).collect();
        assert_eq!(words, vec!["what", "is", "2", "+", "2", "?"]);
    }

    #[test]
    fn detok_retok_stable() {
        let v = vocab();
        let ids: Vec<u32> = (0..v.len() as u32).collect();
        let text = v.detokenize(&ids);
        assert_eq!(v.tokenize(&text).ids, ids);
    }

    #[test]
    fn save_load_roundtrip() {
        let v = vocab();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.json");
        v.save(&path).unwrap();
        let v2 = Vocab::load(&path).unwrap();
        assert_eq!(v2.len(), v.len());
        assert_eq!(v2.tokenize("Hello, world").ids, v.tokenize("Hello, world").ids);
    }
}
