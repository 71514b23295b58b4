use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const UNK_TOKEN: &str = "<unk>";
pub const UNK_INDEX: usize = 0;

/// Token/index map. Index 0 is always the unknown token; the remaining
/// indices are assigned in first-seen order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut index = HashMap::new();
        index.insert(UNK_TOKEN.to_string(), UNK_INDEX);
        Vocabulary {
            tokens: vec![UNK_TOKEN.to_string()],
            index,
        }
    }

    /// Rebuilds a vocabulary from its token list (as stored in checkpoints).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, String> {
        if tokens.first().map(String::as_str) != Some(UNK_TOKEN) {
            return Err(format!("vocabulary must start with `{UNK_TOKEN}`"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(format!("duplicate vocabulary token `{t}`"));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        let i = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), i);
        i
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn index_or_unk(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK_INDEX)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Always false: the unknown token is present.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// SHA-256 over the ordered token list.
    pub fn hash(&self) -> String {
        super::hash_lines(self.tokens.iter().map(String::as_str))
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = String;

    fn try_from(tokens: Vec<String>) -> Result<Self, Self::Error> {
        Vocabulary::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

/// Collects every distinct token of the (already normalized) sentences.
pub fn build_vocab<'a, I, S>(sentences: I) -> Vocabulary
where
    I: IntoIterator<Item = &'a [S]>,
    S: AsRef<str> + 'a,
{
    let mut vocab = Vocabulary::new();
    for sentence in sentences {
        for token in sentence {
            vocab.insert(token.as_ref());
        }
    }
    vocab
}
