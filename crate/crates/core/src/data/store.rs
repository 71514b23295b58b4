use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, Metadata, QAPair, Question, Split};
use crate::container::{self, ContainerError, Format, Tensor, TensorData};
use crate::text::AnnotatedSentence;

pub const DATASET_FORMAT: Format = Format {
    magic: b"RCNQD1",
    version: 1,
};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    split: Split,
    metadata: Metadata,
    feature_count: Option<usize>,
    questions: Vec<QuestionMeta>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuestionMeta {
    id: String,
    candidates: Vec<CandidateMeta>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CandidateMeta {
    id: String,
    question: Vec<String>,
    answer: Vec<String>,
}

fn to_u32(values: &[usize]) -> Result<Vec<u32>, DataError> {
    values
        .iter()
        .map(|&v| {
            u32::try_from(v).map_err(|_| DataError::Inconsistent(format!("index {v} exceeds u32")))
        })
        .collect()
}

/// Writes tokens, indices, flags, labels and features of `ds`. Token strings
/// and grouping live in the header; numeric data in tensors.
pub fn save_preprocessed(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let feature_count = ds
        .pairs()
        .next()
        .and_then(|p| p.features.as_ref().map(Vec::len));
    let mut labels = Vec::new();
    let (mut q_idx, mut a_idx, mut q_flags, mut a_flags, mut features) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for p in ds.pairs() {
        if p.features.as_ref().map(Vec::len) != feature_count {
            return Err(DataError::Inconsistent(format!(
                "pair {}/{} has a different feature layout",
                p.question_id, p.candidate_id
            )));
        }
        labels.push(p.label);
        q_idx.extend(to_u32(p.question.indices())?);
        a_idx.extend(to_u32(p.answer.indices())?);
        q_flags.extend_from_slice(p.question.overlap());
        a_flags.extend_from_slice(p.answer.overlap());
        features.extend(p.features.iter().flatten());
    }
    let meta = Meta {
        split: ds.split,
        metadata: ds.metadata.clone(),
        feature_count,
        questions: ds
            .questions
            .iter()
            .map(|q| QuestionMeta {
                id: q.id.clone(),
                candidates: q
                    .pairs
                    .iter()
                    .map(|p| CandidateMeta {
                        id: p.candidate_id.clone(),
                        question: p.question.tokens().to_vec(),
                        answer: p.answer.tokens().to_vec(),
                    })
                    .collect(),
            })
            .collect(),
    };
    let pairs = labels.len();
    let tensors = [
        Tensor::new("labels", vec![pairs], TensorData::U8(labels)),
        Tensor::new(
            "question_indices",
            vec![q_idx.len()],
            TensorData::U32(q_idx),
        ),
        Tensor::new("answer_indices", vec![a_idx.len()], TensorData::U32(a_idx)),
        Tensor::new(
            "question_overlap",
            vec![q_flags.len()],
            TensorData::U8(q_flags),
        ),
        Tensor::new(
            "answer_overlap",
            vec![a_flags.len()],
            TensorData::U8(a_flags),
        ),
        Tensor::f64(
            "features",
            vec![pairs, feature_count.unwrap_or(0)],
            features,
        ),
    ];
    Ok(container::write_file(
        path,
        DATASET_FORMAT,
        &meta,
        &tensors,
    )?)
}

fn take<T>(
    c: &mut container::Contents<Meta>,
    name: &str,
    unwrap: fn(TensorData) -> Option<Vec<T>>,
) -> Result<std::vec::IntoIter<T>, DataError> {
    let t = c.take(name)?;
    unwrap(t.data).map(Vec::into_iter).ok_or_else(|| {
        ContainerError::CorruptDirectory(format!("tensor {name:?} has the wrong dtype")).into()
    })
}

fn sentence(
    tokens: Vec<String>,
    indices: &mut impl Iterator<Item = u32>,
    flags: &mut impl Iterator<Item = u8>,
) -> Result<AnnotatedSentence, DataError> {
    let n = tokens.len();
    let idx: Vec<usize> = indices.take(n).map(|v| v as usize).collect();
    let ov: Vec<u8> = flags.take(n).collect();
    if idx.len() != n || ov.len() != n {
        return Err(
            ContainerError::Truncated("token tensors shorter than the header".into()).into(),
        );
    }
    let mut s = AnnotatedSentence::new(tokens);
    s.set_indices(idx).map_err(DataError::Inconsistent)?;
    s.set_overlap(ov).map_err(DataError::Inconsistent)?;
    Ok(s)
}

pub fn load_preprocessed(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let mut c = container::read_file::<Meta>(path, DATASET_FORMAT)?;
    let u8s = |d| match d {
        TensorData::U8(v) => Some(v),
        _ => None,
    };
    let u32s = |d| match d {
        TensorData::U32(v) => Some(v),
        _ => None,
    };
    let mut labels = take(&mut c, "labels", u8s)?;
    let mut q_idx = take(&mut c, "question_indices", u32s)?;
    let mut a_idx = take(&mut c, "answer_indices", u32s)?;
    let mut q_flags = take(&mut c, "question_overlap", u8s)?;
    let mut a_flags = take(&mut c, "answer_overlap", u8s)?;
    let features = c.take_f64("features")?;
    let k = c.meta.feature_count;
    let mut features = features.chunks(k.unwrap_or(1).max(1)).map(<[f64]>::to_vec);
    let mut questions = Vec::with_capacity(c.meta.questions.len());
    for q in std::mem::take(&mut c.meta.questions) {
        let mut pairs = Vec::with_capacity(q.candidates.len());
        for cand in q.candidates {
            let label = labels
                .next()
                .ok_or_else(|| ContainerError::Truncated("fewer labels than pairs".into()))?;
            if label > 1 {
                return Err(DataError::Inconsistent(format!(
                    "label {label} is not binary"
                )));
            }
            let features = match k {
                Some(_) => Some(features.next().ok_or_else(|| {
                    ContainerError::Truncated("fewer feature rows than pairs".into())
                })?),
                None => None,
            };
            pairs.push(QAPair {
                question_id: q.id.clone(),
                candidate_id: cand.id,
                question: sentence(cand.question, &mut q_idx, &mut q_flags)?,
                answer: sentence(cand.answer, &mut a_idx, &mut a_flags)?,
                label,
                features,
            });
        }
        questions.push(Question { id: q.id, pairs });
    }
    if labels.next().is_some() || q_idx.next().is_some() || a_idx.next().is_some() {
        return Err(ContainerError::CorruptDirectory(
            "tensors longer than the header describes".into(),
        )
        .into());
    }
    Ok(Dataset {
        split: c.meta.split,
        metadata: c.meta.metadata,
        questions,
    })
}
