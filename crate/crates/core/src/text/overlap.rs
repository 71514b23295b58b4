use std::collections::BTreeSet;
use std::io::{self, BufRead};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tokenize::is_punct;
use super::{IdfTable, Vocabulary, UNK_INDEX};

/// Number of overlap-count features produced by [`overlap_count_features`].
pub const FEATURE_COUNT: usize = 4;

/// Normalized tokens with vocabulary indices and per-token overlap flags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSentence")]
pub struct AnnotatedSentence {
    tokens: Vec<String>,
    indices: Vec<usize>,
    overlap: Vec<u8>,
}

#[derive(Deserialize)]
struct RawSentence {
    tokens: Vec<String>,
    indices: Vec<usize>,
    overlap: Vec<u8>,
}

impl TryFrom<RawSentence> for AnnotatedSentence {
    type Error = String;

    fn try_from(raw: RawSentence) -> Result<Self, Self::Error> {
        let mut s = AnnotatedSentence::new(raw.tokens);
        s.set_indices(raw.indices)?;
        s.set_overlap(raw.overlap)?;
        Ok(s)
    }
}

impl AnnotatedSentence {
    /// Indices start as the unknown token and flags as 0.
    pub fn new(tokens: Vec<String>) -> Self {
        let n = tokens.len();
        AnnotatedSentence {
            tokens,
            indices: vec![UNK_INDEX; n],
            overlap: vec![0; n],
        }
    }

    pub fn from_text(raw: &str) -> Self {
        Self::new(super::tokenize_normalize(raw))
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn overlap(&self) -> &[u8] {
        &self.overlap
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_with(&mut self, vocab: &Vocabulary) {
        self.indices = self.tokens.iter().map(|t| vocab.index_or_unk(t)).collect();
    }

    pub fn set_indices(&mut self, indices: Vec<usize>) -> Result<(), String> {
        if indices.len() != self.tokens.len() {
            return Err(format!(
                "{} indices for {} tokens",
                indices.len(),
                self.tokens.len()
            ));
        }
        self.indices = indices;
        Ok(())
    }

    pub fn set_overlap(&mut self, overlap: Vec<u8>) -> Result<(), String> {
        if overlap.len() != self.tokens.len() {
            return Err(format!(
                "{} overlap flags for {} tokens",
                overlap.len(),
                self.tokens.len()
            ));
        }
        if let Some(bad) = overlap.iter().find(|&&f| f > 1) {
            return Err(format!("overlap flag {bad} is not binary"));
        }
        self.overlap = overlap;
        Ok(())
    }

    pub fn clear_overlap(&mut self) {
        self.overlap.fill(0);
    }
}

/// Tokens made only of punctuation never count as overlap.
pub fn is_punctuation_token(token: &str) -> bool {
    !token.is_empty() && token.chars().all(is_punct)
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Stopwords(BTreeSet<String>);

const DEFAULT_STOPWORDS: &str = include_str!("../../data/stopwords.txt");

impl Stopwords {
    pub fn empty() -> Self {
        Stopwords::default()
    }

    pub fn english() -> Self {
        Self::parse(DEFAULT_STOPWORDS)
    }

    /// One token per line; `#` starts a comment.
    pub fn parse(text: &str) -> Self {
        Stopwords(
            text.lines()
                .map(|l| l.split('#').next().unwrap_or("").trim())
                .filter(|l| !l.is_empty())
                .map(str::to_lowercase)
                .collect(),
        )
    }

    pub fn from_reader<R: BufRead>(reader: R) -> io::Result<Self> {
        let mut text = String::new();
        for line in reader.lines() {
            text.push_str(&line?);
            text.push('\n');
        }
        Ok(Self::parse(&text))
    }

    pub fn load(path: impl AsRef<Path>) -> io::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    /// SHA-256 over the sorted list.
    pub fn hash(&self) -> String {
        super::hash_lines(self.iter())
    }
}

impl FromIterator<String> for Stopwords {
    fn from_iter<T: IntoIterator<Item = String>>(iter: T) -> Self {
        Stopwords(iter.into_iter().collect())
    }
}

fn eligible(token: &str, stopwords: &Stopwords) -> bool {
    !stopwords.contains(token) && !is_punctuation_token(token)
}

/// Sets the overlap flag of every token whose string also occurs in the other
/// sentence, excluding stopwords and punctuation-only tokens.
pub fn annotate_overlap(
    q: &mut AnnotatedSentence,
    a: &mut AnnotatedSentence,
    stopwords: &Stopwords,
) {
    let q_forms: BTreeSet<&str> = q.tokens.iter().map(String::as_str).collect();
    let a_forms: BTreeSet<&str> = a.tokens.iter().map(String::as_str).collect();
    let flags = |tokens: &[String], other: &BTreeSet<&str>| -> Vec<u8> {
        tokens
            .iter()
            .map(|t| u8::from(other.contains(t.as_str()) && eligible(t, stopwords)))
            .collect()
    };
    q.overlap = flags(&q.tokens, &a_forms);
    a.overlap = flags(&a.tokens, &q_forms);
}

/// `[shared forms, flagged shared forms, Σ idf(shared), Σ idf(flagged shared)]`
/// over distinct token forms. The flagged components follow the overlap flags
/// already set on `q`, so they exclude stopwords and punctuation whenever the
/// annotation did.
pub fn overlap_count_features(
    q: &AnnotatedSentence,
    a: &AnnotatedSentence,
    idf: &IdfTable,
) -> Vec<f64> {
    let a_forms: BTreeSet<&str> = a.tokens.iter().map(String::as_str).collect();
    let shared: BTreeSet<&str> = q
        .tokens
        .iter()
        .map(String::as_str)
        .filter(|t| a_forms.contains(t))
        .collect();
    let flagged: BTreeSet<&str> = q
        .tokens
        .iter()
        .zip(&q.overlap)
        .filter(|(_, &f)| f == 1)
        .map(|(t, _)| t.as_str())
        .filter(|t| shared.contains(t))
        .collect();
    let weight = |set: &BTreeSet<&str>| set.iter().map(|t| idf.weight(t)).sum::<f64>();
    vec![
        shared.len() as f64,
        flagged.len() as f64,
        weight(&shared),
        weight(&flagged),
    ]
}
