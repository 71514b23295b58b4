use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::encoder::OverlapEmbeddingTable;
use crate::numeric::{ConvMode, DenseMatrix, FilterBank, ParameterBlocks};
use crate::text::{EmbeddingTable, Vocabulary, FEATURE_COUNT};

/// How word-overlap information reaches the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationalMode {
    /// No overlap information.
    None,
    /// Overlap-count features appended to the join vector.
    Fvec,
    /// Overlap flags embedded as extra input dimensions.
    #[default]
    Emb,
    /// Both of the above.
    Both,
}

impl RelationalMode {
    pub const ALL: [RelationalMode; 4] = [
        RelationalMode::None,
        RelationalMode::Fvec,
        RelationalMode::Emb,
        RelationalMode::Both,
    ];

    pub fn uses_overlap_embeddings(self) -> bool {
        matches!(self, RelationalMode::Emb | RelationalMode::Both)
    }

    pub fn uses_features(self) -> bool {
        matches!(self, RelationalMode::Fvec | RelationalMode::Both)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RelationalMode::None => "none",
            RelationalMode::Fvec => "fvec",
            RelationalMode::Emb => "emb",
            RelationalMode::Both => "both",
        }
    }
}

impl std::fmt::Display for RelationalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RelationalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RelationalMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown relational mode `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    pub word_dim: usize,
    pub overlap_dim: usize,
    pub filters: usize,
    pub width: usize,
    pub conv_mode: ConvMode,
    pub relational_mode: RelationalMode,
    /// Length of `x_feat`; only used in the feature-vector modes.
    pub feature_count: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            word_dim: 50,
            overlap_dim: 5,
            filters: 100,
            width: 5,
            conv_mode: ConvMode::Wide,
            relational_mode: RelationalMode::Emb,
            feature_count: FEATURE_COUNT,
        }
    }
}

impl HyperParams {
    pub fn depth(&self) -> usize {
        self.word_dim + self.overlap_dim
    }

    pub fn active_features(&self) -> usize {
        if self.relational_mode.uses_features() {
            self.feature_count
        } else {
            0
        }
    }

    /// `|x_join| = n_q + 1 + n_a + |x_feat|`.
    pub fn join_len(&self) -> usize {
        2 * self.filters + 1 + self.active_features()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let zero = [
            ("word_dim", self.word_dim),
            ("overlap_dim", self.overlap_dim),
            ("filters", self.filters),
            ("width", self.width),
        ]
        .into_iter()
        .find(|(_, v)| *v == 0);
        if let Some((name, _)) = zero {
            return Err(ModelError::InvalidHyperParams(format!(
                "{name} must be positive"
            )));
        }
        if self.relational_mode.uses_features() && self.feature_count == 0 {
            return Err(ModelError::InvalidHyperParams(format!(
                "mode {} needs feature_count > 0",
                self.relational_mode
            )));
        }
        Ok(())
    }
}

/// Parameter blocks of the network, in checkpoint order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    WordEmbeddings,
    OverlapEmbeddings,
    QuestionFilters,
    QuestionBias,
    AnswerFilters,
    AnswerBias,
    Similarity,
    HiddenWeights,
    HiddenBias,
    OutputWeights,
    OutputBias,
}

impl Block {
    pub const ALL: [Block; 11] = [
        Block::WordEmbeddings,
        Block::OverlapEmbeddings,
        Block::QuestionFilters,
        Block::QuestionBias,
        Block::AnswerFilters,
        Block::AnswerBias,
        Block::Similarity,
        Block::HiddenWeights,
        Block::HiddenBias,
        Block::OutputWeights,
        Block::OutputBias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::WordEmbeddings => "word_embeddings",
            Block::OverlapEmbeddings => "overlap_embeddings",
            Block::QuestionFilters => "question_filters",
            Block::QuestionBias => "question_bias",
            Block::AnswerFilters => "answer_filters",
            Block::AnswerBias => "answer_bias",
            Block::Similarity => "similarity",
            Block::HiddenWeights => "hidden_weights",
            Block::HiddenBias => "hidden_bias",
            Block::OutputWeights => "output_weights",
            Block::OutputBias => "output_bias",
        }
    }

    pub fn from_name(name: &str) -> Option<Block> {
        Block::ALL.into_iter().find(|b| b.name() == name)
    }

    pub fn index(self) -> usize {
        Block::ALL.iter().position(|&b| b == self).unwrap_or(0)
    }
}

/// All trainable parameters plus the vocabulary and hyperparameters.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub(crate) hyper: HyperParams,
    pub(crate) vocab: Vocabulary,
    pub(crate) freeze_embeddings: bool,
    pub(crate) words: DenseMatrix,
    pub(crate) overlap: OverlapEmbeddingTable,
    pub(crate) question: FilterBank,
    pub(crate) answer: FilterBank,
    pub(crate) similarity: DenseMatrix,
    pub(crate) hidden_weights: DenseMatrix,
    pub(crate) hidden_bias: Vec<f64>,
    pub(crate) output_weights: DenseMatrix,
    pub(crate) output_bias: Vec<f64>,
    /// Bumped on every mutable access; forward caches record it.
    pub(crate) version: u64,
}

/// Equal values and settings; the version counter is ignored.
impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.hyper == other.hyper
            && self.vocab == other.vocab
            && self.freeze_embeddings == other.freeze_embeddings
            && Block::ALL.iter().all(|&b| self.block(b) == other.block(b))
    }
}

fn glorot(fan_in: usize, fan_out: usize) -> Uniform<f64> {
    let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Uniform::new_inclusive(-r, r)
}

fn sample_vec(rng: &mut ChaCha8Rng, dist: Uniform<f64>, n: usize) -> Vec<f64> {
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Half-width of the uniform initialization of `W_o`.
pub const OVERLAP_INIT_RANGE: f64 = 0.25;

impl ModelParams {
    /// Random initialization; the word table is taken as is. Embeddings start
    /// frozen.
    pub fn init(
        hyper: HyperParams,
        embeddings: EmbeddingTable,
        seed: u64,
    ) -> Result<Self, ModelError> {
        hyper.validate()?;
        if embeddings.dim() != hyper.word_dim {
            return Err(ModelError::InvalidHyperParams(format!(
                "word_dim {} does not match embedding dimension {}",
                hyper.word_dim,
                embeddings.dim()
            )));
        }
        let (vocab, words, _) = embeddings.into_parts();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, d, m) = (hyper.filters, hyper.depth(), hyper.width);
        let join = hyper.join_len();

        let overlap = OverlapEmbeddingTable::try_from(DenseMatrix::from_vec(
            2,
            hyper.overlap_dim,
            sample_vec(
                &mut rng,
                Uniform::new_inclusive(-OVERLAP_INIT_RANGE, OVERLAP_INIT_RANGE),
                2 * hyper.overlap_dim,
            ),
        )?)?;
        let conv_dist = glorot(d * m, n * m);
        let question = FilterBank::new(
            n,
            d,
            m,
            sample_vec(&mut rng, conv_dist, n * d * m),
            vec![0.0; n],
        )?;
        let answer = FilterBank::new(
            n,
            d,
            m,
            sample_vec(&mut rng, conv_dist, n * d * m),
            vec![0.0; n],
        )?;
        let similarity = DenseMatrix::from_vec(n, n, sample_vec(&mut rng, glorot(n, n), n * n))?;
        let hidden_weights = DenseMatrix::from_vec(
            join,
            join,
            sample_vec(&mut rng, glorot(join, join), join * join),
        )?;
        let output_weights =
            DenseMatrix::from_vec(2, join, sample_vec(&mut rng, glorot(join, 2), 2 * join))?;

        Ok(ModelParams {
            hyper,
            vocab,
            freeze_embeddings: true,
            words,
            overlap,
            question,
            answer,
            similarity,
            hidden_weights,
            hidden_bias: vec![0.0; join],
            output_weights,
            output_bias: vec![0.0; 2],
            version: 0,
        })
    }

    /// Reassembles parameters from stored blocks (see [`ModelParams::block`]).
    pub fn from_blocks(
        hyper: HyperParams,
        vocab: Vocabulary,
        freeze_embeddings: bool,
        mut blocks: Vec<Vec<f64>>,
    ) -> Result<Self, ModelError> {
        hyper.validate()?;
        if blocks.len() != Block::ALL.len() {
            return Err(ModelError::InvalidHyperParams(format!(
                "expected {} parameter blocks, got {}",
                Block::ALL.len(),
                blocks.len()
            )));
        }
        let (n, d, m, join) = (hyper.filters, hyper.depth(), hyper.width, hyper.join_len());
        let mut take = |b: Block| std::mem::take(&mut blocks[b.index()]);
        let words =
            DenseMatrix::from_vec(vocab.len(), hyper.word_dim, take(Block::WordEmbeddings))?;
        let overlap = OverlapEmbeddingTable::try_from(DenseMatrix::from_vec(
            2,
            hyper.overlap_dim,
            take(Block::OverlapEmbeddings),
        )?)?;
        let question = FilterBank::new(
            n,
            d,
            m,
            take(Block::QuestionFilters),
            take(Block::QuestionBias),
        )?;
        let answer = FilterBank::new(n, d, m, take(Block::AnswerFilters), take(Block::AnswerBias))?;
        let similarity = DenseMatrix::from_vec(n, n, take(Block::Similarity))?;
        let hidden_weights = DenseMatrix::from_vec(join, join, take(Block::HiddenWeights))?;
        let hidden_bias = take(Block::HiddenBias);
        let output_weights = DenseMatrix::from_vec(2, join, take(Block::OutputWeights))?;
        let output_bias = take(Block::OutputBias);
        if hidden_bias.len() != join || output_bias.len() != 2 {
            return Err(ModelError::InvalidHyperParams(
                "bias length mismatch".into(),
            ));
        }
        Ok(ModelParams {
            hyper,
            vocab,
            freeze_embeddings,
            words,
            overlap,
            question,
            answer,
            similarity,
            hidden_weights,
            hidden_bias,
            output_weights,
            output_bias,
            version: 0,
        })
    }

    pub fn hyper(&self) -> &HyperParams {
        &self.hyper
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn freeze_embeddings(&self) -> bool {
        self.freeze_embeddings
    }

    pub fn set_freeze_embeddings(&mut self, freeze: bool) {
        self.freeze_embeddings = freeze;
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn words(&self) -> &DenseMatrix {
        &self.words
    }

    pub fn overlap(&self) -> &OverlapEmbeddingTable {
        &self.overlap
    }

    pub fn question_filters(&self) -> &FilterBank {
        &self.question
    }

    pub fn answer_filters(&self) -> &FilterBank {
        &self.answer
    }

    pub fn similarity(&self) -> &DenseMatrix {
        &self.similarity
    }

    /// Whether the optimizer updates `block` under the current settings.
    pub fn is_trainable(&self, block: Block) -> bool {
        match block {
            Block::WordEmbeddings => !self.freeze_embeddings,
            Block::OverlapEmbeddings => self.hyper.relational_mode.uses_overlap_embeddings(),
            _ => true,
        }
    }

    pub fn block(&self, block: Block) -> &[f64] {
        match block {
            Block::WordEmbeddings => self.words.as_slice(),
            Block::OverlapEmbeddings => self.overlap.matrix().as_slice(),
            Block::QuestionFilters => self.question.weights(),
            Block::QuestionBias => self.question.bias(),
            Block::AnswerFilters => self.answer.weights(),
            Block::AnswerBias => self.answer.bias(),
            Block::Similarity => self.similarity.as_slice(),
            Block::HiddenWeights => self.hidden_weights.as_slice(),
            Block::HiddenBias => &self.hidden_bias,
            Block::OutputWeights => self.output_weights.as_slice(),
            Block::OutputBias => &self.output_bias,
        }
    }

    pub fn block_mut(&mut self, block: Block) -> &mut [f64] {
        self.version += 1;
        match block {
            Block::WordEmbeddings => self.words.as_mut_slice(),
            Block::OverlapEmbeddings => self.overlap.as_mut_slice(),
            Block::QuestionFilters => self.question.weights_mut(),
            Block::QuestionBias => self.question.bias_mut(),
            Block::AnswerFilters => self.answer.weights_mut(),
            Block::AnswerBias => self.answer.bias_mut(),
            Block::Similarity => self.similarity.as_mut_slice(),
            Block::HiddenWeights => self.hidden_weights.as_mut_slice(),
            Block::HiddenBias => &mut self.hidden_bias,
            Block::OutputWeights => self.output_weights.as_mut_slice(),
            Block::OutputBias => &mut self.output_bias,
        }
    }

    pub fn block_shape(&self, block: Block) -> Vec<usize> {
        let (n, d, m, join) = (
            self.hyper.filters,
            self.hyper.depth(),
            self.hyper.width,
            self.hyper.join_len(),
        );
        match block {
            Block::WordEmbeddings => vec![self.words.rows(), self.words.cols()],
            Block::OverlapEmbeddings => vec![2, self.hyper.overlap_dim],
            Block::QuestionFilters | Block::AnswerFilters => vec![n, d, m],
            Block::QuestionBias | Block::AnswerBias => vec![n],
            Block::Similarity => vec![n, n],
            Block::HiddenWeights => vec![join, join],
            Block::HiddenBias => vec![join],
            Block::OutputWeights => vec![2, join],
            Block::OutputBias => vec![2],
        }
    }

    pub fn is_finite(&self) -> bool {
        Block::ALL
            .iter()
            .all(|&b| self.block(b).iter().all(|v| v.is_finite()))
    }
}

impl ParameterBlocks for ModelParams {
    fn block_count(&self) -> usize {
        Block::ALL.len()
    }

    fn block_name(&self, index: usize) -> String {
        Block::ALL[index].name().to_string()
    }

    fn block_values_mut(&mut self, index: usize) -> &mut [f64] {
        self.block_mut(Block::ALL[index])
    }
}
