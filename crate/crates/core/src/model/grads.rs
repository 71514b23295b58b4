use super::{Block, ModelParams};
use crate::encoder::RowGrads;
use crate::numeric::DenseMatrix;

/// Gradient of the loss for every trainable block of [`ModelParams`].
///
/// Frozen blocks carry `None`. `features` is the gradient with respect to the
/// `x_feat` input; the optimizer ignores it.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub words: Option<RowGrads>,
    pub overlap: Option<DenseMatrix>,
    pub question_filters: Vec<f64>,
    pub question_bias: Vec<f64>,
    pub answer_filters: Vec<f64>,
    pub answer_bias: Vec<f64>,
    pub similarity: DenseMatrix,
    pub hidden_weights: DenseMatrix,
    pub hidden_bias: Vec<f64>,
    pub output_weights: DenseMatrix,
    pub output_bias: Vec<f64>,
    pub features: Option<Vec<f64>>,
}

impl Gradients {
    pub fn zeros(params: &ModelParams) -> Self {
        let len = |b: Block| params.block(b).len();
        let h = &params.hyper;
        let join = h.join_len();
        Gradients {
            words: params
                .is_trainable(Block::WordEmbeddings)
                .then(RowGrads::default),
            overlap: params
                .is_trainable(Block::OverlapEmbeddings)
                .then(|| DenseMatrix::zeros(2, h.overlap_dim)),
            question_filters: vec![0.0; len(Block::QuestionFilters)],
            question_bias: vec![0.0; h.filters],
            answer_filters: vec![0.0; len(Block::AnswerFilters)],
            answer_bias: vec![0.0; h.filters],
            similarity: DenseMatrix::zeros(h.filters, h.filters),
            hidden_weights: DenseMatrix::zeros(join, join),
            hidden_bias: vec![0.0; join],
            output_weights: DenseMatrix::zeros(2, join),
            output_bias: vec![0.0; 2],
            features: h
                .relational_mode
                .uses_features()
                .then(|| vec![0.0; h.feature_count]),
        }
    }

    /// Dense gradient for `block`, or `None` if the block is frozen.
    pub fn dense_block(&self, block: Block, params: &ModelParams) -> Option<Vec<f64>> {
        match block {
            Block::WordEmbeddings => self.words.as_ref().map(|rows| {
                rows.to_dense(params.words.rows(), params.words.cols())
                    .into_vec()
            }),
            Block::OverlapEmbeddings => self.overlap.as_ref().map(|m| m.as_slice().to_vec()),
            Block::QuestionFilters => Some(self.question_filters.clone()),
            Block::QuestionBias => Some(self.question_bias.clone()),
            Block::AnswerFilters => Some(self.answer_filters.clone()),
            Block::AnswerBias => Some(self.answer_bias.clone()),
            Block::Similarity => Some(self.similarity.as_slice().to_vec()),
            Block::HiddenWeights => Some(self.hidden_weights.as_slice().to_vec()),
            Block::HiddenBias => Some(self.hidden_bias.clone()),
            Block::OutputWeights => Some(self.output_weights.as_slice().to_vec()),
            Block::OutputBias => Some(self.output_bias.clone()),
        }
    }

    /// One entry per [`Block::ALL`], for [`crate::numeric::gradient_check`].
    pub fn dense_blocks(&self, params: &ModelParams) -> Vec<Option<Vec<f64>>> {
        Block::ALL
            .iter()
            .map(|&b| self.dense_block(b, params))
            .collect()
    }

    /// Mutable view of a dense block. Word gradients are sparse and not
    /// exposed here.
    pub fn dense_block_mut(&mut self, block: Block) -> Option<&mut [f64]> {
        match block {
            Block::WordEmbeddings => None,
            Block::OverlapEmbeddings => self.overlap.as_mut().map(|m| m.as_mut_slice()),
            Block::QuestionFilters => Some(&mut self.question_filters),
            Block::QuestionBias => Some(&mut self.question_bias),
            Block::AnswerFilters => Some(&mut self.answer_filters),
            Block::AnswerBias => Some(&mut self.answer_bias),
            Block::Similarity => Some(self.similarity.as_mut_slice()),
            Block::HiddenWeights => Some(self.hidden_weights.as_mut_slice()),
            Block::HiddenBias => Some(&mut self.hidden_bias),
            Block::OutputWeights => Some(self.output_weights.as_mut_slice()),
            Block::OutputBias => Some(&mut self.output_bias),
        }
    }

    /// `self += other`.
    pub fn accumulate(&mut self, other: &Gradients) {
        if let (Some(mine), Some(theirs)) = (self.words.as_mut(), other.words.as_ref()) {
            for (&row, values) in &theirs.0 {
                mine.add_row(row, values.iter().copied());
            }
        }
        for block in Block::ALL.into_iter().skip(1) {
            if let (Some(mine), Some(theirs)) =
                (self.dense_block_mut(block), other.dense_block_ref(block))
            {
                for (a, b) in mine.iter_mut().zip(theirs) {
                    *a += b;
                }
            }
        }
        if let (Some(mine), Some(theirs)) = (self.features.as_mut(), other.features.as_ref()) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        if let Some(words) = self.words.as_mut() {
            words.scale(s);
        }
        for block in Block::ALL.into_iter().skip(1) {
            if let Some(values) = self.dense_block_mut(block) {
                values.iter_mut().for_each(|v| *v *= s);
            }
        }
        if let Some(f) = self.features.as_mut() {
            f.iter_mut().for_each(|v| *v *= s);
        }
    }

    fn dense_block_ref(&self, block: Block) -> Option<&[f64]> {
        match block {
            Block::WordEmbeddings => None,
            Block::OverlapEmbeddings => self.overlap.as_ref().map(|m| m.as_slice()),
            Block::QuestionFilters => Some(&self.question_filters),
            Block::QuestionBias => Some(&self.question_bias),
            Block::AnswerFilters => Some(&self.answer_filters),
            Block::AnswerBias => Some(&self.answer_bias),
            Block::Similarity => Some(self.similarity.as_slice()),
            Block::HiddenWeights => Some(self.hidden_weights.as_slice()),
            Block::HiddenBias => Some(&self.hidden_bias),
            Block::OutputWeights => Some(self.output_weights.as_slice()),
            Block::OutputBias => Some(&self.output_bias),
        }
    }

    pub fn is_finite(&self) -> bool {
        let words = self
            .words
            .as_ref()
            .is_none_or(|w| w.0.values().flatten().all(|v| v.is_finite()));
        words
            && Block::ALL.into_iter().skip(1).all(|b| {
                self.dense_block_ref(b)
                    .is_none_or(|v| v.iter().all(|x| x.is_finite()))
            })
    }
}
