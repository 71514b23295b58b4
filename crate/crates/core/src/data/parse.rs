use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use super::{DataError, Dataset, Metadata, QAPair, Question, Split};
use crate::text::{tokenize_with, AnnotatedSentence, TokenizerOptions};

/// Column names of the WikiQA distribution.
pub const WIKIQA_HEADER: [&str; 7] = [
    "QuestionID",
    "Question",
    "DocumentID",
    "DocumentTitle",
    "SentenceID",
    "Sentence",
    "Label",
];

fn read_file(path: &Path) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

struct Builder {
    path: PathBuf,
    opts: TokenizerOptions,
    questions: Vec<Question>,
    index: HashMap<String, usize>,
}

impl Builder {
    fn new(path: &Path, opts: TokenizerOptions) -> Self {
        Builder {
            path: path.to_path_buf(),
            opts,
            questions: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn error(&self, line: usize, message: impl Into<String>) -> DataError {
        DataError::Parse {
            path: self.path.clone(),
            line,
            message: message.into(),
        }
    }

    fn sentence(
        &self,
        line: usize,
        what: &str,
        text: &str,
    ) -> Result<AnnotatedSentence, DataError> {
        let tokens = tokenize_with(text, self.opts);
        if tokens.is_empty() {
            return Err(self.error(line, format!("empty {what}")));
        }
        Ok(AnnotatedSentence::new(tokens))
    }

    fn label(&self, line: usize, raw: &str) -> Result<u8, DataError> {
        match raw.trim() {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(self.error(line, format!("label {other:?} is not 0 or 1"))),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        line: usize,
        qid: &str,
        candidate: Option<&str>,
        question: &str,
        answer: &str,
        label: u8,
    ) -> Result<(), DataError> {
        if qid.trim().is_empty() {
            return Err(self.error(line, "empty question id"));
        }
        let question = self.sentence(line, "question", question)?;
        let answer = self.sentence(line, "answer", answer)?;
        let next = self.questions.len();
        let slot = *self.index.entry(qid.to_string()).or_insert(next);
        if slot == next {
            self.questions.push(Question {
                id: qid.to_string(),
                pairs: Vec::new(),
            });
        }
        let pairs = &self.questions[slot].pairs;
        let candidate_id = candidate.map_or_else(|| pairs.len().to_string(), str::to_string);
        if pairs.iter().any(|p| p.candidate_id == candidate_id) {
            return Err(self.error(
                line,
                format!("duplicate candidate {candidate_id:?} for question {qid:?}"),
            ));
        }
        self.questions[slot].pairs.push(QAPair {
            question_id: qid.to_string(),
            candidate_id,
            question,
            answer,
            label,
            features: None,
        });
        Ok(())
    }

    fn finish(self, split: Split) -> Dataset {
        Dataset {
            split,
            metadata: Metadata {
                source: self.path.file_name().map_or_else(
                    || self.path.display().to_string(),
                    |n| n.to_string_lossy().into_owned(),
                ),
                ..Metadata::default()
            },
            questions: self.questions,
        }
    }
}

/// Reads `question_id<TAB>label<TAB>question<TAB>answer` rows. Rows sharing a
/// question id are grouped in order of first appearance; candidates are
/// numbered from 0 within their question.
pub fn parse_canonical_tsv(
    path: impl AsRef<Path>,
    split: Split,
    opts: TokenizerOptions,
) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    parse_canonical_tsv_from(&read_file(path)?, path, split, opts)
}

/// [`parse_canonical_tsv`] over in-memory text; `path` only labels errors.
pub fn parse_canonical_tsv_from(
    text: &str,
    path: impl AsRef<Path>,
    split: Split,
    opts: TokenizerOptions,
) -> Result<Dataset, DataError> {
    let mut b = Builder::new(path.as_ref(), opts);
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let [qid, label, question, answer] = cols[..] else {
            return Err(b.error(
                n,
                format!("expected 4 tab-separated columns, found {}", cols.len()),
            ));
        };
        let label = b.label(n, label)?;
        b.push(n, qid, None, question, answer, label)?;
    }
    Ok(b.finish(split))
}

/// Reads the WikiQA distribution layout, header line included. No question
/// is dropped here; filtering is left to evaluation.
pub fn parse_wikiqa_tsv(
    path: impl AsRef<Path>,
    split: Split,
    opts: TokenizerOptions,
) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    parse_wikiqa_tsv_from(&read_file(path)?, path, split, opts)
}

pub fn parse_wikiqa_tsv_from(
    text: &str,
    path: impl AsRef<Path>,
    split: Split,
    opts: TokenizerOptions,
) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let mut lines = text.lines().enumerate();
    let header_ok = lines.next().is_some_and(|(_, h)| {
        h.trim_end_matches('\r').split('\t').collect::<Vec<_>>() == WIKIQA_HEADER
    });
    if !header_ok {
        return Err(DataError::MissingHeader {
            path: path.to_path_buf(),
            expected: WIKIQA_HEADER.join("\t"),
        });
    }
    let mut b = Builder::new(path, opts);
    for (i, line) in lines {
        let n = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < WIKIQA_HEADER.len() {
            return Err(b.error(
                n,
                format!(
                    "expected {} columns, found {}",
                    WIKIQA_HEADER.len(),
                    cols.len()
                ),
            ));
        }
        let label = b.label(n, cols[6])?;
        b.push(n, cols[0], Some(cols[4]), cols[1], cols[5], label)?;
    }
    Ok(b.finish(split))
}

/// Converts the XML-like TREC QA distribution (`<QApairs id=...>` blocks
/// holding `<question>`, `<positive>` and `<negative>` sections) into
/// canonical TSV. The first non-empty line of each section holds the
/// tab-separated tokens; later annotation lines are ignored. Returns the
/// number of rows written.
pub fn convert_trec_xml<R: BufRead, W: Write>(
    input: R,
    mut output: W,
    path: impl AsRef<Path>,
) -> Result<usize, DataError> {
    let path = path.as_ref();
    let err = |line: usize, message: String| DataError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    #[derive(PartialEq)]
    enum Section {
        Question,
        Positive,
        Negative,
    }
    let mut qid: Option<String> = None;
    let mut question: Option<String> = None;
    let mut section: Option<(Section, bool)> = None;
    let mut rows = 0;
    for (i, line) in input.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(io_err)?;
        let trimmed = line.trim();
        if let Some(rest) = trimmed.strip_prefix("<QApairs") {
            let id = rest
                .split(['\'', '"'])
                .nth(1)
                .filter(|id| !id.is_empty())
                .ok_or_else(|| err(n, "QApairs block without id".into()))?;
            qid = Some(id.to_string());
            question = None;
            continue;
        }
        match trimmed {
            "</QApairs>" => {
                qid = None;
                continue;
            }
            "<question>" | "<positive>" | "<negative>" => {
                if qid.is_none() {
                    return Err(err(n, format!("{trimmed} outside a QApairs block")));
                }
                let kind = match trimmed {
                    "<question>" => Section::Question,
                    "<positive>" => Section::Positive,
                    _ => Section::Negative,
                };
                if kind != Section::Question && question.is_none() {
                    return Err(err(n, "candidate before the question".into()));
                }
                section = Some((kind, false));
                continue;
            }
            "</question>" | "</positive>" | "</negative>" => {
                if matches!(section, Some((_, false))) {
                    return Err(err(n, format!("empty section closed by {trimmed}")));
                }
                section = None;
                continue;
            }
            _ => {}
        }
        let Some((kind, seen)) = section.as_mut() else {
            if trimmed.is_empty() {
                continue;
            }
            return Err(err(
                n,
                format!("unexpected text outside a section: {trimmed:?}"),
            ));
        };
        if *seen || trimmed.is_empty() {
            continue;
        }
        *seen = true;
        let text = trimmed.split('\t').collect::<Vec<_>>().join(" ");
        match kind {
            Section::Question => question = Some(text),
            Section::Positive | Section::Negative => {
                let label = u8::from(*kind == Section::Positive);
                writeln!(
                    output,
                    "{}\t{label}\t{}\t{text}",
                    qid.as_deref().unwrap_or_default(),
                    question.as_deref().unwrap_or_default()
                )
                .map_err(io_err)?;
                rows += 1;
            }
        }
    }
    output.flush().map_err(io_err)?;
    Ok(rows)
}
