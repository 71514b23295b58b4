//! Model checkpoints: parameters, optional optimizer state and history, and
//! the text settings needed to score raw input.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{self, ContainerError, Format, Tensor};
use crate::model::{Block, HyperParams, ModelParams};
use crate::text::{IdfTable, Stopwords, TokenizerOptions, Vocabulary};
use crate::train::{AdadeltaConfig, AdadeltaState, TrainHistory};

pub const CHECKPOINT_FORMAT: Format = Format {
    magic: b"RCNQA1",
    version: 1,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub optimizer: Option<AdadeltaState>,
    pub history: Option<TrainHistory>,
    pub stopwords: Stopwords,
    pub tokenizer: TokenizerOptions,
    /// Needed to compute overlap-count features for new input.
    pub idf: Option<IdfTable>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    hyper: HyperParams,
    freeze_embeddings: bool,
    vocab: Vocabulary,
    vocab_hash: String,
    stopwords: Vec<String>,
    stopword_hash: String,
    tokenizer: TokenizerOptions,
    idf: Option<IdfTable>,
    optimizer: Option<AdadeltaConfig>,
    history: Option<TrainHistory>,
}

fn optimizer_tensor(kind: &str, block: Block) -> String {
    format!("adadelta.{kind}.{}", block.name())
}

impl Checkpoint {
    /// Parameters only, with the given text settings.
    pub fn inference(
        params: ModelParams,
        stopwords: Stopwords,
        tokenizer: TokenizerOptions,
    ) -> Self {
        Checkpoint {
            params,
            optimizer: None,
            history: None,
            stopwords,
            tokenizer,
            idf: None,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ContainerError> {
        let p = &self.params;
        let meta = Meta {
            hyper: p.hyper().clone(),
            freeze_embeddings: p.freeze_embeddings(),
            vocab: p.vocab().clone(),
            vocab_hash: p.vocab().hash(),
            stopwords: self.stopwords.iter().map(str::to_string).collect(),
            stopword_hash: self.stopwords.hash(),
            tokenizer: self.tokenizer,
            idf: self.idf.clone(),
            optimizer: self.optimizer.as_ref().map(|o| o.config),
            history: self.history.clone(),
        };
        let mut tensors: Vec<Tensor> = Block::ALL
            .iter()
            .map(|&b| Tensor::f64(b.name(), p.block_shape(b), p.block(b).to_vec()))
            .collect();
        if let Some(opt) = &self.optimizer {
            for (kind, values) in [("sq_grad", &opt.sq_grad), ("sq_update", &opt.sq_update)] {
                for &b in &Block::ALL {
                    tensors.push(Tensor::f64(
                        optimizer_tensor(kind, b),
                        p.block_shape(b),
                        values[b.index()].clone(),
                    ));
                }
            }
        }
        container::encode(CHECKPOINT_FORMAT, &meta, &tensors)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        Self::decode(container::decode(CHECKPOINT_FORMAT, bytes)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ContainerError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|source| ContainerError::Io {
            context: format!("writing {}", path.display()),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ContainerError> {
        Self::decode(container::read_file(path, CHECKPOINT_FORMAT)?)
    }

    fn decode(mut c: container::Contents<Meta>) -> Result<Self, ContainerError> {
        let corrupt = |m: String| ContainerError::CorruptDirectory(m);
        if c.meta.vocab.hash() != c.meta.vocab_hash {
            return Err(corrupt("vocabulary does not match its stored hash".into()));
        }
        let stopwords: Stopwords = std::mem::take(&mut c.meta.stopwords).into_iter().collect();
        if stopwords.hash() != c.meta.stopword_hash {
            return Err(corrupt(
                "stopword list does not match its stored hash".into(),
            ));
        }
        let blocks = Block::ALL
            .iter()
            .map(|b| c.take_f64(b.name()))
            .collect::<Result<Vec<_>, _>>()?;
        let params = ModelParams::from_blocks(
            c.meta.hyper.clone(),
            c.meta.vocab.clone(),
            c.meta.freeze_embeddings,
            blocks,
        )
        .map_err(|e| corrupt(e.to_string()))?;
        let optimizer = match c.meta.optimizer {
            Some(config) => {
                let mut take_all = |kind: &str| {
                    Block::ALL
                        .iter()
                        .map(|&b| {
                            let v = c.take_f64(&optimizer_tensor(kind, b))?;
                            if v.len() != params.block(b).len() {
                                return Err(corrupt(format!(
                                    "optimizer state for {} has wrong length",
                                    b.name()
                                )));
                            }
                            Ok(v)
                        })
                        .collect::<Result<Vec<_>, _>>()
                };
                let sq_grad = take_all("sq_grad")?;
                let sq_update = take_all("sq_update")?;
                Some(AdadeltaState {
                    config,
                    sq_grad,
                    sq_update,
                })
            }
            None => None,
        };
        if let Some(extra) = c.tensors.first() {
            return Err(corrupt(format!("unexpected tensor {:?}", extra.name)));
        }
        Ok(Checkpoint {
            params,
            optimizer,
            history: c.meta.history,
            stopwords,
            tokenizer: c.meta.tokenizer,
            idf: c.meta.idf,
        })
    }
}
