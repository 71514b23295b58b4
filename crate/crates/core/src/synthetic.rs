//! Synthetic answer-selection data where lexical overlap identifies the
//! correct candidate.
//!
//! Every question owns a few rare tokens that appear nowhere else. Its one
//! correct candidate repeats them; the other candidates are drawn from a
//! shared pool of filler words and may copy a filler word from the question.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{parse_canonical_tsv_from, DataError, Dataset, Split};
use crate::text::{TokenizerOptions, Word2Vec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixtureConfig {
    pub questions: usize,
    pub candidates: usize,
    /// Rare tokens shared by a question and its correct candidate.
    pub planted: usize,
    pub filler_vocab: usize,
    pub question_len: (usize, usize),
    pub answer_len: (usize, usize),
    /// Upper bound on question filler words copied into a wrong candidate.
    pub distractor_overlap: usize,
    /// Offset for question ids and rare tokens, so that splits generated
    /// with different offsets share no rare token.
    pub first_question: usize,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            questions: 20,
            candidates: 5,
            planted: 2,
            filler_vocab: 60,
            question_len: (4, 8),
            answer_len: (6, 12),
            distractor_overlap: 1,
            first_question: 0,
            seed: 0,
        }
    }
}

/// Lowercase letters only, so normalization leaves the token unchanged.
fn word(prefix: char, mut i: usize) -> String {
    let mut letters = Vec::new();
    for _ in 0..3 {
        letters.push((b'a' + (i % 26) as u8) as char);
        i /= 26;
    }
    while i > 0 {
        letters.push((b'a' + (i % 26) as u8) as char);
        i /= 26;
    }
    letters.reverse();
    std::iter::once(prefix).chain(letters).collect()
}

pub fn filler_word(i: usize) -> String {
    word('x', i)
}

pub fn rare_word(question: usize, k: usize, planted: usize) -> String {
    word('z', question * planted.max(1) + k)
}

fn filler(rng: &mut ChaCha8Rng, cfg: &FixtureConfig, len: usize) -> Vec<String> {
    (0..len)
        .map(|_| filler_word(rng.gen_range(0..cfg.filler_vocab)))
        .collect()
}

/// Canonical TSV (`qid, label, question, answer`) for the configuration.
pub fn generate_tsv(cfg: &FixtureConfig) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = String::new();
    for qi in cfg.first_question..cfg.first_question + cfg.questions {
        let rare: Vec<String> = (0..cfg.planted)
            .map(|k| rare_word(qi, k, cfg.planted))
            .collect();
        let qlen = rng.gen_range(cfg.question_len.0..=cfg.question_len.1);
        let mut question = filler(&mut rng, cfg, qlen);
        for r in &rare {
            let at = rng.gen_range(0..=question.len());
            question.insert(at, r.clone());
        }
        let correct = rng.gen_range(0..cfg.candidates);
        for ci in 0..cfg.candidates {
            let alen = rng.gen_range(cfg.answer_len.0..=cfg.answer_len.1);
            let mut answer = filler(&mut rng, cfg, alen);
            let copies = rng.gen_range(0..=cfg.distractor_overlap);
            for _ in 0..copies {
                let w = question
                    .iter()
                    .filter(|t| !rare.contains(t))
                    .collect::<Vec<_>>()
                    .choose(&mut rng)
                    .map(|w| (*w).clone());
                if let Some(w) = w {
                    let at = rng.gen_range(0..=answer.len());
                    answer.insert(at, w);
                }
            }
            if ci == correct {
                for r in &rare {
                    let at = rng.gen_range(0..=answer.len());
                    answer.insert(at, r.clone());
                }
            }
            let _ = writeln!(
                out,
                "q{qi}\t{}\t{}\t{}",
                u8::from(ci == correct),
                question.join(" "),
                answer.join(" ")
            );
        }
    }
    out
}

pub fn generate_dataset(cfg: &FixtureConfig, split: Split) -> Result<Dataset, DataError> {
    let mut ds = parse_canonical_tsv_from(
        &generate_tsv(cfg),
        format!("synthetic-{split}.tsv"),
        split,
        TokenizerOptions::default(),
    )?;
    ds.metadata.source = format!("synthetic seed {}", cfg.seed);
    Ok(ds)
}

/// Random vectors for the filler words only; rare tokens stay out of
/// vocabulary, like names missing from a pretrained table.
pub fn filler_embeddings(cfg: &FixtureConfig, dim: usize, seed: u64) -> Word2Vec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words: Vec<String> = (0..cfg.filler_vocab).map(filler_word).collect();
    let vectors = words
        .iter()
        .map(|_| (0..dim).map(|_| rng.gen_range(-0.5f32..0.5)).collect())
        .collect();
    Word2Vec {
        dim,
        words,
        vectors,
    }
}
