use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Block, Gradients, HyperParams, ModelError, ModelParams, RelationalMode};
use crate::numeric::{gradient_check, ConvMode, GradCheckReport, ParameterBlocks};
use crate::text::{
    annotate_overlap, init_oov, AnnotatedSentence, EmbeddingTable, Stopwords, Vocabulary,
};

/// Settings of the randomized finite-difference check of the full network.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub mode: RelationalMode,
    pub conv_mode: ConvMode,
    pub word_dim: usize,
    pub overlap_dim: usize,
    pub filters: usize,
    pub width: usize,
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub pairs: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub tolerance: f64,
    /// Deliberately perturbs the analytic gradient of one block, to prove
    /// the check can fail.
    pub corrupt: Option<Block>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            mode: RelationalMode::Emb,
            conv_mode: ConvMode::Wide,
            word_dim: 6,
            overlap_dim: 2,
            filters: 4,
            width: 3,
            vocab_size: 12,
            min_len: 4,
            max_len: 9,
            pairs: 2,
            seed: 0,
            epsilon: 1e-5,
            tolerance: 1e-4,
            corrupt: None,
        }
    }
}

/// Name of the extra block holding the `x_feat` inputs.
pub const FEATURE_BLOCK: &str = "features";

struct Probe {
    params: ModelParams,
    pairs: Vec<(AnnotatedSentence, AnnotatedSentence, u8)>,
    features: Vec<f64>,
}

impl Probe {
    fn feature_count(&self) -> usize {
        self.params.hyper.active_features()
    }

    fn pair_features(&self, i: usize) -> Option<&[f64]> {
        let k = self.feature_count();
        self.params
            .hyper
            .relational_mode
            .uses_features()
            .then(|| &self.features[i * k..(i + 1) * k])
    }

    fn loss(&self) -> f64 {
        let total: f64 = self
            .pairs
            .iter()
            .enumerate()
            .map(|(i, (q, a, y))| {
                self.params
                    .loss(q, a, self.pair_features(i), *y)
                    .unwrap_or(f64::NAN)
            })
            .sum();
        total / self.pairs.len() as f64
    }

    fn gradients(&self) -> Result<(Gradients, Vec<f64>), ModelError> {
        let mut total = Gradients::zeros(&self.params);
        let mut features = Vec::with_capacity(self.features.len());
        for (i, (q, a, y)) in self.pairs.iter().enumerate() {
            let cache = self.params.forward(q, a, self.pair_features(i))?;
            let (_, g) = self.params.backward(&cache, *y)?;
            features.extend(
                g.features
                    .iter()
                    .flatten()
                    .map(|v| v / self.pairs.len() as f64),
            );
            total.accumulate(&g);
        }
        total.scale(1.0 / self.pairs.len() as f64);
        Ok((total, features))
    }
}

impl ParameterBlocks for Probe {
    fn block_count(&self) -> usize {
        Block::ALL.len() + usize::from(!self.features.is_empty())
    }

    fn block_name(&self, index: usize) -> String {
        Block::ALL
            .get(index)
            .map_or_else(|| FEATURE_BLOCK.to_string(), |b| b.name().to_string())
    }

    fn block_values_mut(&mut self, index: usize) -> &mut [f64] {
        match Block::ALL.get(index) {
            Some(&b) => self.params.block_mut(b),
            None => &mut self.features,
        }
    }
}

fn random_sentence(
    rng: &mut ChaCha8Rng,
    cfg: &GradCheckConfig,
    vocab: &Vocabulary,
) -> AnnotatedSentence {
    let len = rng.gen_range(cfg.min_len..=cfg.max_len);
    let tokens = (0..len)
        .map(|_| vocab.tokens()[rng.gen_range(1..vocab.len())].clone())
        .collect();
    let mut s = AnnotatedSentence::new(tokens);
    s.index_with(vocab);
    s
}

/// Builds a random tiny network with trainable word embeddings and compares
/// its analytic gradients against central differences on every block.
pub fn check_network_gradients(cfg: &GradCheckConfig) -> Result<GradCheckReport, crate::Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut vocab = Vocabulary::new();
    for i in 0..cfg.vocab_size {
        vocab.insert(&format!("w{i}"));
    }
    let mut table = EmbeddingTable::random(vocab.clone(), cfg.word_dim);
    init_oov(&mut table, 0.5, rng.gen())?;
    let hyper = HyperParams {
        word_dim: cfg.word_dim,
        overlap_dim: cfg.overlap_dim,
        filters: cfg.filters,
        width: cfg.width,
        conv_mode: cfg.conv_mode,
        relational_mode: cfg.mode,
        ..HyperParams::default()
    };
    let mut params = ModelParams::init(hyper, table, rng.gen())?;
    params.set_freeze_embeddings(false);
    // Nonzero biases so no pre-activation starts at exactly zero.
    let bias = Uniform::new_inclusive(-0.1, 0.1);
    for b in [
        Block::QuestionBias,
        Block::AnswerBias,
        Block::HiddenBias,
        Block::OutputBias,
    ] {
        for v in params.block_mut(b) {
            *v = bias.sample(&mut rng);
        }
    }
    let stopwords = Stopwords::empty();
    let pairs = (0..cfg.pairs)
        .map(|i| {
            let mut q = random_sentence(&mut rng, cfg, &vocab);
            let mut a = random_sentence(&mut rng, cfg, &vocab);
            annotate_overlap(&mut q, &mut a, &stopwords);
            (q, a, u8::from(i % 2 == 0))
        })
        .collect();
    let k = params.hyper.active_features();
    let features = (0..cfg.pairs * k)
        .map(|_| rng.gen_range(0.0..2.0))
        .collect();
    let mut probe = Probe {
        params,
        pairs,
        features,
    };

    let (grads, feature_grads) = probe.gradients()?;
    let mut analytic = grads.dense_blocks(&probe.params);
    if !probe.features.is_empty() {
        analytic.push(Some(feature_grads));
    }
    if let Some(block) = cfg.corrupt {
        if let Some(g) = analytic[block.index()].as_mut() {
            g[0] += 1e-3 + 0.1 * g[0].abs();
        }
    }
    Ok(gradient_check(
        &mut probe,
        &analytic,
        Probe::loss,
        cfg.epsilon,
        cfg.tolerance,
    )?)
}
