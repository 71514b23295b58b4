//! Sentence model: embedding lookup with overlap dimensions, convolution,
//! ReLU and max-pooling.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::ModelError;
use crate::numeric::{
    conv1d_backward, conv1d_forward, maxpool_backward, maxpool_rows, ConvGrads, ConvMode,
    DenseMatrix, FilterBank, ShapeError,
};
use crate::text::AnnotatedSentence;

/// Trainable lookup table `W_o` for the overlap flag: row 0 for flag 0, row 1
/// for flag 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DenseMatrix")]
pub struct OverlapEmbeddingTable(DenseMatrix);

impl OverlapEmbeddingTable {
    pub fn zeros(dim: usize) -> Result<Self, ShapeError> {
        Self::try_from(DenseMatrix::zeros(2, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn row(&self, flag: u8) -> &[f64] {
        self.0.row(usize::from(flag))
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        self.0.as_mut_slice()
    }
}

impl TryFrom<DenseMatrix> for OverlapEmbeddingTable {
    type Error = ShapeError;

    fn try_from(m: DenseMatrix) -> Result<Self, Self::Error> {
        if m.rows() != 2 || m.cols() == 0 {
            return Err(ShapeError::mismatch(
                "OverlapEmbeddingTable",
                "2 x d_o with d_o >= 1",
                format!("{}x{}", m.rows(), m.cols()),
            ));
        }
        Ok(OverlapEmbeddingTable(m))
    }
}

/// Columns `[W[w_i]; W_o[o_i]]` for each token of `sent`.
pub fn build_sentence_matrix(
    sent: &AnnotatedSentence,
    words: &DenseMatrix,
    overlap: &OverlapEmbeddingTable,
) -> Result<DenseMatrix, ModelError> {
    Ok(padded_sentence_matrix(sent.indices(), sent.overlap(), words, overlap, 1)?.0)
}

/// Like [`build_sentence_matrix`] but left-pads with columns whose word part
/// is zero and whose overlap part is `W_o[0]` until `min_len` columns exist.
/// Returns the matrix and the number of padding columns.
pub fn padded_sentence_matrix(
    indices: &[usize],
    flags: &[u8],
    words: &DenseMatrix,
    overlap: &OverlapEmbeddingTable,
    min_len: usize,
) -> Result<(DenseMatrix, usize), ModelError> {
    if indices.is_empty() {
        return Err(ModelError::EmptySentence);
    }
    let d_w = words.cols();
    let d_o = overlap.dim();
    let padding = min_len.saturating_sub(indices.len());
    let len = indices.len() + padding;
    let mut s = DenseMatrix::zeros(d_w + d_o, len);
    for p in 0..padding {
        for (k, &v) in overlap.row(0).iter().enumerate() {
            s.set(d_w + k, p, v);
        }
    }
    for (t, (&idx, &flag)) in indices.iter().zip(flags).enumerate() {
        if idx >= words.rows() {
            return Err(ModelError::TokenOutOfRange {
                index: idx,
                vocab: words.rows(),
            });
        }
        let col = padding + t;
        for (k, &v) in words.row(idx).iter().enumerate() {
            s.set(k, col, v);
        }
        for (k, &v) in overlap.row(flag).iter().enumerate() {
            s.set(d_w + k, col, v);
        }
    }
    Ok((s, padding))
}

/// Cached forward state of one sentence, enough to run the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceEncoding {
    pub indices: Vec<usize>,
    pub flags: Vec<u8>,
    pub padding: usize,
    /// Sentence matrix `S`, `(d_w + d_o) x (padding + |s|)`.
    pub input: DenseMatrix,
    /// Feature maps before the ReLU.
    pub conv: DenseMatrix,
    /// Pooled sentence vector `x`.
    pub pooled: Vec<f64>,
    pub argmax: Vec<usize>,
}

/// `x = maxpool(relu(conv(S)))`.
pub fn encode_sentence(
    indices: &[usize],
    flags: &[u8],
    words: &DenseMatrix,
    overlap: &OverlapEmbeddingTable,
    filters: &FilterBank,
    mode: ConvMode,
) -> Result<SentenceEncoding, ModelError> {
    let min_len = match mode {
        ConvMode::Wide => 1,
        ConvMode::Narrow => filters.width(),
    };
    let (input, padding) = padded_sentence_matrix(indices, flags, words, overlap, min_len)?;
    let conv = conv1d_forward(&input, filters, mode)?;
    let mut activated = conv.clone();
    for v in activated.as_mut_slice() {
        *v = v.max(0.0);
    }
    let (pooled, argmax) = maxpool_rows(&activated)?;
    Ok(SentenceEncoding {
        indices: indices.to_vec(),
        flags: flags.to_vec(),
        padding,
        input,
        conv,
        pooled,
        argmax,
    })
}

/// Backpropagates `d_pooled` through pooling, ReLU and convolution.
pub fn encode_backward(
    enc: &SentenceEncoding,
    filters: &FilterBank,
    mode: ConvMode,
    d_pooled: &[f64],
) -> Result<ConvGrads, ModelError> {
    if d_pooled.len() != enc.pooled.len() {
        return Err(
            ShapeError::mismatch("encode_backward", enc.pooled.len(), d_pooled.len()).into(),
        );
    }
    let mut d_conv = maxpool_backward(&enc.argmax, d_pooled, enc.conv.cols())?;
    for (d, &c) in d_conv.as_mut_slice().iter_mut().zip(enc.conv.as_slice()) {
        if c <= 0.0 {
            *d = 0.0;
        }
    }
    Ok(conv1d_backward(&enc.input, filters, mode, &d_conv)?)
}

/// Sparse gradient rows for the word embedding table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RowGrads(pub BTreeMap<usize, Vec<f64>>);

impl RowGrads {
    pub fn add_row(&mut self, row: usize, values: impl IntoIterator<Item = f64>) {
        let mut values = values.into_iter().peekable();
        if values.peek().is_none() {
            return;
        }
        let entry = self.0.entry(row).or_default();
        for (i, v) in values.enumerate() {
            if i < entry.len() {
                entry[i] += v;
            } else {
                entry.push(v);
            }
        }
    }

    pub fn get(&self, row: usize) -> Option<&[f64]> {
        self.0.get(&row).map(Vec::as_slice)
    }

    pub fn scale(&mut self, s: f64) {
        for row in self.0.values_mut() {
            row.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn to_dense(&self, rows: usize, cols: usize) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(rows, cols);
        for (&r, values) in &self.0 {
            m.row_mut(r).copy_from_slice(values);
        }
        m
    }
}

/// Splits each column of `d_input` at the word/overlap boundary: the word
/// part accumulates into the token's row of `words` (if given), the overlap
/// part into the `W_o` row selected by the token's flag (if given). Padding
/// columns only feed `W_o[0]`.
pub fn scatter_input_grad(
    enc: &SentenceEncoding,
    d_input: &DenseMatrix,
    word_dim: usize,
    words: Option<&mut RowGrads>,
    overlap: Option<&mut DenseMatrix>,
) {
    let depth = d_input.rows();
    if let Some(overlap) = overlap {
        for col in 0..d_input.cols() {
            let flag = if col < enc.padding {
                0
            } else {
                usize::from(enc.flags[col - enc.padding])
            };
            for k in word_dim..depth {
                overlap.add_at(flag, k - word_dim, d_input.get(k, col));
            }
        }
    }
    if let Some(words) = words {
        for (t, &idx) in enc.indices.iter().enumerate() {
            let col = enc.padding + t;
            words.add_row(idx, (0..word_dim).map(|k| d_input.get(k, col)));
        }
    }
}
