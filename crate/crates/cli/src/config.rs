//! The run configuration file.

use std::path::{Path, PathBuf};

use relqa::eval::FilterPolicy;
use relqa::model::{HyperParams, RelationalMode};
use relqa::numeric::ConvMode;
use relqa::text::{EmbeddingFormat, DEFAULT_OOV_RANGE};
use relqa::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    #[default]
    Canonical,
    Wikiqa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub format: InputFormat,
    /// Judgements of the training file came from automatic matching.
    pub automatic_judgements: bool,
    pub embeddings: Option<PathBuf>,
    pub embedding_format: EmbeddingFormat,
    pub stopwords: Option<PathBuf>,
    pub collapse_digit_runs: bool,
    pub oov_range: f64,
    pub oov_seed: u64,
    /// Where `preprocess` writes and `train` reads the containers.
    pub preprocessed_dir: PathBuf,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            train: None,
            dev: None,
            test: None,
            format: InputFormat::Canonical,
            automatic_judgements: false,
            embeddings: None,
            embedding_format: EmbeddingFormat::Text,
            stopwords: None,
            collapse_digit_runs: false,
            oov_range: DEFAULT_OOV_RANGE,
            oov_seed: 1,
            preprocessed_dir: PathBuf::from("preprocessed"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub word_dim: usize,
    pub overlap_dim: usize,
    pub filters: usize,
    pub width: usize,
    pub conv_mode: ConvMode,
    pub relational_mode: RelationalMode,
    pub init_seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let h = HyperParams::default();
        ModelSection {
            word_dim: h.word_dim,
            overlap_dim: h.overlap_dim,
            filters: h.filters,
            width: h.width,
            conv_mode: h.conv_mode,
            relational_mode: h.relational_mode,
            init_seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub eval_interval: usize,
    pub seed: u64,
    pub rho: f64,
    pub epsilon: f64,
    pub freeze_embeddings: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            eval_interval: t.eval_interval,
            seed: t.seed,
            rho: t.rho,
            epsilon: t.epsilon,
            freeze_embeddings: t.freeze_embeddings,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub policy: FilterPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            output_dir: PathBuf::from("run"),
            data: DataSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        if cfg.version != CONFIG_VERSION {
            return Err(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                cfg.version
            ));
        }
        Ok(cfg)
    }

    /// Reads `path`, or the defaults when no path is given. Relative paths
    /// inside the file are resolved against the file's directory.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = RunConfig::parse(&text)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.data.preprocessed_dir);
        for p in [
            &mut self.data.train,
            &mut self.data.dev,
            &mut self.data.test,
            &mut self.data.embeddings,
            &mut self.data.stopwords,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn hyper_params(&self) -> HyperParams {
        HyperParams {
            word_dim: self.model.word_dim,
            overlap_dim: self.model.overlap_dim,
            filters: self.model.filters,
            width: self.model.width,
            conv_mode: self.model.conv_mode,
            relational_mode: self.model.relational_mode,
            ..HyperParams::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            eval_interval: t.eval_interval,
            seed: t.seed,
            rho: t.rho,
            epsilon: t.epsilon,
            relational_mode: self.model.relational_mode,
            freeze_embeddings: t.freeze_embeddings,
            conv_mode: self.model.conv_mode,
        }
    }
}
