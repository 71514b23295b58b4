use super::{Gradients, ModelError, ModelParams};
use crate::encoder::{encode_backward, encode_sentence, scatter_input_grad, SentenceEncoding};
use crate::numeric::{
    affine, affine_backward, bilinear, bilinear_backward, relu, relu_grad, softmax_nll,
};
use crate::text::AnnotatedSentence;

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub question: SentenceEncoding,
    pub answer: SentenceEncoding,
    pub similarity: f64,
    pub features: Vec<f64>,
    /// `[x_q; x_sim; x_a; x_feat]`.
    pub join: Vec<f64>,
    pub hidden_pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub(crate) version: u64,
}

impl ForwardCache {
    /// Probability of the positive class, used as the ranking score.
    pub fn score(&self) -> f64 {
        self.probs[1]
    }
}

impl ModelParams {
    fn effective_flags(&self, sent: &AnnotatedSentence) -> Vec<u8> {
        if self.hyper.relational_mode.uses_overlap_embeddings() {
            sent.overlap().to_vec()
        } else {
            vec![0; sent.len()]
        }
    }

    fn check_features<'a>(&self, features: Option<&'a [f64]>) -> Result<&'a [f64], ModelError> {
        let expected = self.hyper.active_features();
        let given = features.unwrap_or(&[]);
        if self.hyper.relational_mode.uses_features() != features.is_some()
            || given.len() != expected
        {
            return Err(ModelError::FeatureLength {
                expected,
                actual: features.map_or(0, <[f64]>::len),
            });
        }
        Ok(given)
    }

    /// Scores one question/answer pair. `features` must be present exactly in
    /// the feature-vector modes. Outside the embedding modes the overlap flags
    /// are treated as all zero.
    pub fn forward(
        &self,
        question: &AnnotatedSentence,
        answer: &AnnotatedSentence,
        features: Option<&[f64]>,
    ) -> Result<ForwardCache, ModelError> {
        let features = self.check_features(features)?;
        let mode = self.hyper.conv_mode;
        let q = encode_sentence(
            question.indices(),
            &self.effective_flags(question),
            &self.words,
            &self.overlap,
            &self.question,
            mode,
        )?;
        let a = encode_sentence(
            answer.indices(),
            &self.effective_flags(answer),
            &self.words,
            &self.overlap,
            &self.answer,
            mode,
        )?;
        let similarity = bilinear(&q.pooled, &self.similarity, &a.pooled)?;
        let mut join = Vec::with_capacity(self.hyper.join_len());
        join.extend_from_slice(&q.pooled);
        join.push(similarity);
        join.extend_from_slice(&a.pooled);
        join.extend_from_slice(features);
        let hidden_pre = affine(&self.hidden_weights, &join, &self.hidden_bias)?;
        let hidden = relu(&hidden_pre);
        let logits = affine(&self.output_weights, &hidden, &self.output_bias)?;
        let probs = softmax_nll(&logits, 0).probs;
        Ok(ForwardCache {
            question: q,
            answer: a,
            similarity,
            features: features.to_vec(),
            join,
            hidden_pre,
            hidden,
            logits,
            probs,
            version: self.version,
        })
    }

    /// Negative log-likelihood of `label` and its gradient for every
    /// trainable block.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        label: u8,
    ) -> Result<(f64, Gradients), ModelError> {
        if cache.version != self.version {
            return Err(ModelError::StaleCache {
                cache: cache.version,
                params: self.version,
            });
        }
        if label > 1 {
            return Err(ModelError::BadLabel(label));
        }
        let n = self.hyper.filters;
        let mode = self.hyper.conv_mode;
        let mut grads = Gradients::zeros(self);

        let nll = softmax_nll(&cache.logits, usize::from(label));
        let out = affine_backward(&self.output_weights, &cache.hidden, &nll.d_logits)?;
        grads.output_weights = out.w;
        grads.output_bias = out.b;

        let d_hidden_pre = relu_grad(&cache.hidden_pre, &out.x)?;
        let hid = affine_backward(&self.hidden_weights, &cache.join, &d_hidden_pre)?;
        grads.hidden_weights = hid.w;
        grads.hidden_bias = hid.b;

        let d_join = hid.x;
        let mut d_q = d_join[..n].to_vec();
        let d_sim = d_join[n];
        let mut d_a = d_join[n + 1..2 * n + 1].to_vec();
        if let Some(f) = grads.features.as_mut() {
            f.copy_from_slice(&d_join[2 * n + 1..]);
        }

        let bil = bilinear_backward(
            &cache.question.pooled,
            &self.similarity,
            &cache.answer.pooled,
            d_sim,
        )?;
        grads.similarity = bil.m;
        d_q.iter_mut().zip(&bil.xq).for_each(|(d, g)| *d += g);
        d_a.iter_mut().zip(&bil.xa).for_each(|(d, g)| *d += g);

        let word_dim = self.hyper.word_dim;
        let qg = encode_backward(&cache.question, &self.question, mode, &d_q)?;
        grads.question_filters = qg.weights;
        grads.question_bias = qg.bias;
        scatter_input_grad(
            &cache.question,
            &qg.input,
            word_dim,
            grads.words.as_mut(),
            grads.overlap.as_mut(),
        );
        let ag = encode_backward(&cache.answer, &self.answer, mode, &d_a)?;
        grads.answer_filters = ag.weights;
        grads.answer_bias = ag.bias;
        scatter_input_grad(
            &cache.answer,
            &ag.input,
            word_dim,
            grads.words.as_mut(),
            grads.overlap.as_mut(),
        );
        Ok((nll.loss, grads))
    }

    /// Loss of one labelled pair without gradients.
    pub fn loss(
        &self,
        question: &AnnotatedSentence,
        answer: &AnnotatedSentence,
        features: Option<&[f64]>,
        label: u8,
    ) -> Result<f64, ModelError> {
        if label > 1 {
            return Err(ModelError::BadLabel(label));
        }
        let cache = self.forward(question, answer, features)?;
        Ok(softmax_nll(&cache.logits, usize::from(label)).loss)
    }

    /// Probability that `answer` answers `question`.
    pub fn score(
        &self,
        question: &AnnotatedSentence,
        answer: &AnnotatedSentence,
        features: Option<&[f64]>,
    ) -> Result<f64, ModelError> {
        Ok(self.forward(question, answer, features)?.score())
    }
}
