//! Question/answer datasets: parsing, preprocessing and storage.

mod lexicon;
mod parse;
mod store;

pub use lexicon::{build_lexicon, load_lexicon, save_lexicon, Lexicon, LEXICON_FORMAT};
pub use parse::{
    convert_trec_xml, parse_canonical_tsv, parse_canonical_tsv_from, parse_wikiqa_tsv,
    parse_wikiqa_tsv_from, WIKIQA_HEADER,
};
pub use store::{load_preprocessed, save_preprocessed, DATASET_FORMAT};

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::ContainerError;
use crate::eval::{FilterPolicy, FilterReport, Qrels};
use crate::text::{
    annotate_overlap, overlap_count_features, AnnotatedSentence, IdfTable, Stopwords, Vocabulary,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: expected header line {expected:?}", path.display())]
    MissingHeader { path: PathBuf, expected: String },
    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!(
                "unknown split {other:?} (expected train, dev or test)"
            )),
        }
    }
}

/// How the labels were obtained. Carried along, never used in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Judgement {
    #[default]
    Manual,
    Automatic,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    /// Where the data came from, usually the input file name.
    pub source: String,
    pub judgement: Judgement,
    /// Hash of the vocabulary the token indices refer to.
    #[serde(default)]
    pub vocab_hash: Option<String>,
}

/// One labelled question/candidate pair. Each pair owns its copy of the
/// question because overlap flags depend on the candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAPair {
    pub question_id: String,
    pub candidate_id: String,
    pub question: AnnotatedSentence,
    pub answer: AnnotatedSentence,
    pub label: u8,
    pub features: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub pairs: Vec<QAPair>,
}

impl Question {
    pub fn labels(&self) -> impl Iterator<Item = u8> + '_ {
        self.pairs.iter().map(|p| p.label)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub split: Split,
    pub metadata: Metadata,
    pub questions: Vec<Question>,
}

/// Counts in the style of a corpus statistics table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetStats {
    pub questions: usize,
    pub pairs: usize,
    /// Fraction of pairs labelled 1; absent for an empty dataset.
    pub positive_fraction: Option<f64>,
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} questions, {} pairs", self.questions, self.pairs)?;
        if let Some(p) = self.positive_fraction {
            write!(f, ", {:.1}% correct", 100.0 * p)?;
        }
        Ok(())
    }
}

pub fn dataset_stats(ds: &Dataset) -> DatasetStats {
    let pairs = ds.pairs().count();
    let positives = ds.pairs().filter(|p| p.label == 1).count();
    DatasetStats {
        questions: ds.questions.len(),
        pairs,
        positive_fraction: (pairs > 0).then(|| positives as f64 / pairs as f64),
    }
}

impl Dataset {
    pub fn pairs(&self) -> impl Iterator<Item = &QAPair> {
        self.questions.iter().flat_map(|q| &q.pairs)
    }

    pub fn pairs_mut(&mut self) -> impl Iterator<Item = &mut QAPair> {
        self.questions.iter_mut().flat_map(|q| &mut q.pairs)
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    /// Every sentence of every pair, questions first within a pair.
    pub fn sentences(&self) -> impl Iterator<Item = &[String]> {
        self.pairs()
            .flat_map(|p| [p.question.tokens(), p.answer.tokens()])
    }

    /// Maps tokens to vocabulary indices.
    pub fn index(&mut self, vocab: &Vocabulary) {
        for p in self.pairs_mut() {
            p.question.index_with(vocab);
            p.answer.index_with(vocab);
        }
        self.metadata.vocab_hash = Some(vocab.hash());
    }

    /// Recomputes the overlap flags of every pair.
    pub fn annotate(&mut self, stopwords: &Stopwords) {
        for p in self.pairs_mut() {
            annotate_overlap(&mut p.question, &mut p.answer, stopwords);
        }
    }

    /// Attaches overlap-count features; run after [`Dataset::annotate`].
    pub fn attach_features(&mut self, idf: &IdfTable) {
        for p in self.pairs_mut() {
            p.features = Some(overlap_count_features(&p.question, &p.answer, idf));
        }
    }

    /// Gold judgements keyed by question and candidate id.
    pub fn qrels(&self) -> Qrels {
        let mut q = Qrels::new();
        for p in self.pairs() {
            q.insert(&p.question_id, &p.candidate_id, p.label == 1);
        }
        q
    }

    /// Keeps the questions that satisfy `policy`.
    pub fn filter(&self, policy: FilterPolicy) -> (Dataset, FilterReport) {
        let mut report = FilterReport {
            policy,
            ..FilterReport::default()
        };
        let mut kept = Dataset {
            split: self.split,
            metadata: self.metadata.clone(),
            questions: Vec::new(),
        };
        for q in &self.questions {
            match policy.violation(q.labels()) {
                Some(reason) => report.removed.push((q.id.clone(), reason)),
                None => kept.questions.push(q.clone()),
            }
        }
        report.kept = kept.questions.len();
        (kept, report)
    }
}

/// Two questions, the first with labels `[1, 0]`; handy for tests.
#[cfg(test)]
pub(crate) fn tiny_dataset() -> Dataset {
    parse_canonical_tsv_from(
        "q1\t1\tWho wrote Hamlet?\tShakespeare wrote Hamlet.\n\
         q1\t0\tWho wrote Hamlet?\tIt is a play.\n\
         q2\t0\tWhat is 2+2?\tFour, obviously.\n",
        "tiny.tsv",
        Split::Train,
        Default::default(),
    )
    .unwrap()
}
