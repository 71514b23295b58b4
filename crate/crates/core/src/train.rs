//! Mini-batch training with Adadelta, dev-MAP model selection and early
//! stopping.

use std::fmt;
use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, QAPair};
use crate::eval::{evaluate, EvalError, FilterPolicy, RankedRun};
use crate::model::{Block, Gradients, ModelError, ModelParams, RelationalMode};
use crate::numeric::ConvMode;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set has no pairs")]
    EmptyTrainSet,
    #[error("dev set has no question with both a correct and an incorrect candidate")]
    DegenerateDev,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite gradient {value} in block {block} at index {index}")]
    NonFiniteGradient {
        block: &'static str,
        index: usize,
        value: f64,
    },
    #[error("optimizer state does not match block {0}")]
    StateShape(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdadeltaConfig {
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for AdadeltaConfig {
    fn default() -> Self {
        AdadeltaConfig {
            rho: 0.95,
            epsilon: 1e-6,
        }
    }
}

/// One Adadelta step on a single block. The gradient is checked first, so a
/// non-finite entry leaves block and accumulators untouched.
pub fn adadelta_update(
    block: &mut [f64],
    grad: &[f64],
    sq_grad: &mut [f64],
    sq_update: &mut [f64],
    cfg: AdadeltaConfig,
) -> Result<(), (usize, f64)> {
    assert!(
        block.len() == grad.len() && grad.len() == sq_grad.len() && grad.len() == sq_update.len(),
        "adadelta_update: length mismatch"
    );
    if let Some((i, &g)) = grad.iter().enumerate().find(|(_, g)| !g.is_finite()) {
        return Err((i, g));
    }
    let AdadeltaConfig { rho, epsilon } = cfg;
    for i in 0..grad.len() {
        let g = grad[i];
        sq_grad[i] = rho * sq_grad[i] + (1.0 - rho) * g * g;
        let delta = -((sq_update[i] + epsilon).sqrt() / (sq_grad[i] + epsilon).sqrt()) * g;
        sq_update[i] = rho * sq_update[i] + (1.0 - rho) * delta * delta;
        block[i] += delta;
    }
    Ok(())
}

/// Accumulators `E[g²]` and `E[Δ²]` for every parameter block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdadeltaState {
    pub config: AdadeltaConfig,
    pub sq_grad: Vec<Vec<f64>>,
    pub sq_update: Vec<Vec<f64>>,
}

impl AdadeltaState {
    pub fn new(params: &ModelParams, config: AdadeltaConfig) -> Self {
        let zeros: Vec<Vec<f64>> = Block::ALL
            .iter()
            .map(|&b| vec![0.0; params.block(b).len()])
            .collect();
        AdadeltaState {
            config,
            sq_grad: zeros.clone(),
            sq_update: zeros,
        }
    }

    /// Applies `grads` to every trainable block of `params`.
    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients) -> Result<(), TrainError> {
        for block in Block::ALL {
            if !params.is_trainable(block) {
                continue;
            }
            let Some(g) = grads.dense_block(block, params) else {
                continue;
            };
            let i = block.index();
            let (sq_g, sq_u) = (&mut self.sq_grad[i], &mut self.sq_update[i]);
            if sq_g.len() != g.len() || sq_u.len() != g.len() {
                return Err(TrainError::StateShape(block.name()));
            }
            adadelta_update(params.block_mut(block), &g, sq_g, sq_u, self.config).map_err(
                |(index, value)| TrainError::NonFiniteGradient {
                    block: block.name(),
                    index,
                    value,
                },
            )?;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.sq_grad
            .iter()
            .chain(&self.sq_update)
            .flatten()
            .all(|v| v.is_finite() && *v >= 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a new best dev MAP before stopping.
    pub patience: usize,
    /// Dev evaluation every this many batches (and at the end of each epoch).
    pub eval_interval: usize,
    pub seed: u64,
    pub rho: f64,
    pub epsilon: f64,
    pub relational_mode: RelationalMode,
    pub freeze_embeddings: bool,
    pub conv_mode: ConvMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 50,
            max_epochs: 25,
            patience: 5,
            eval_interval: 10,
            seed: 0,
            rho: 0.95,
            epsilon: 1e-6,
            relational_mode: RelationalMode::Emb,
            freeze_embeddings: true,
            conv_mode: ConvMode::Wide,
        }
    }
}

impl TrainConfig {
    pub fn adadelta(&self) -> AdadeltaConfig {
        AdadeltaConfig {
            rho: self.rho,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.eval_interval == 0 {
            return bad("eval_interval must be at least 1");
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad("rho must lie in (0, 1)");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxEpochs,
    Patience,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Event {
    Batch {
        step: usize,
        epoch: usize,
        loss: f64,
    },
    Eval {
        step: usize,
        epoch: usize,
        dev_map: f64,
        best: bool,
    },
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Event::Batch { step, epoch, loss } => write!(f, "{step}\t{epoch}\t{loss}"),
            Event::Eval {
                step,
                dev_map,
                best,
                ..
            } => write!(f, "{step}\t{dev_map}\t{}", u8::from(best)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub events: Vec<Event>,
    pub best_dev_map: Option<f64>,
    pub best_step: usize,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stop_reason: Option<StopReason>,
}

impl TrainHistory {
    pub fn batch_losses(&self) -> Vec<f64> {
        self.events
            .iter()
            .filter_map(|e| match e {
                Event::Batch { loss, .. } => Some(*loss),
                Event::Eval { .. } => None,
            })
            .collect()
    }

    pub fn dev_maps(&self) -> Vec<f64> {
        self.events
            .iter()
            .filter_map(|e| match e {
                Event::Eval { dev_map, .. } => Some(*dev_map),
                Event::Batch { .. } => None,
            })
            .collect()
    }

    /// One line per event: `step<TAB>epoch<TAB>loss` for batches and
    /// `step<TAB>dev_map<TAB>best_flag` for evaluations.
    pub fn write_log<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in &self.events {
            writeln!(w, "{e}")?;
        }
        w.flush()
    }
}

/// The `x_feat` argument for `pair` under the model's relational mode.
pub fn pair_features<'a>(params: &ModelParams, pair: &'a QAPair) -> Option<&'a [f64]> {
    if params.hyper().relational_mode.uses_features() {
        Some(pair.features.as_deref().unwrap_or(&[]))
    } else {
        None
    }
}

fn example_gradient(params: &ModelParams, pair: &QAPair) -> Result<(f64, Gradients), TrainError> {
    let cache = params.forward(&pair.question, &pair.answer, pair_features(params, pair))?;
    Ok(params.backward(&cache, pair.label)?)
}

/// Mean NLL over `batch` and the mean gradient. Examples are processed in
/// parallel and summed in batch order, so the result does not depend on the
/// thread count.
pub fn nll_loss(batch: &[&QAPair], params: &ModelParams) -> Result<(f64, Gradients), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let parts: Vec<(f64, Gradients)> = batch
        .par_iter()
        .map(|p| example_gradient(params, p))
        .collect::<Result<_, _>>()?;
    let mut total = Gradients::zeros(params);
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        total.accumulate(g);
    }
    let scale = 1.0 / batch.len() as f64;
    total.scale(scale);
    Ok((loss * scale, total))
}

/// Scores every pair of `ds` and ranks candidates per question.
pub fn rank_dataset(
    params: &ModelParams,
    ds: &Dataset,
    run_name: &str,
) -> Result<RankedRun, TrainError> {
    let pairs: Vec<&QAPair> = ds.pairs().collect();
    let scores: Vec<f64> = pairs
        .par_iter()
        .map(|p| params.score(&p.question, &p.answer, pair_features(params, p)))
        .collect::<Result<_, _>>()?;
    let mut run = RankedRun::new(run_name);
    for (p, s) in pairs.iter().zip(scores) {
        run.insert(&p.question_id, &p.candidate_id, s)?;
    }
    Ok(run)
}

/// MAP of `params` on `ds` under `policy`.
pub fn dataset_map(
    params: &ModelParams,
    ds: &Dataset,
    policy: FilterPolicy,
) -> Result<f64, TrainError> {
    let run = rank_dataset(params, ds, "eval")?;
    Ok(evaluate(&run, &ds.qrels(), policy)?.map)
}

/// Result of [`train`]: the parameters with the best dev MAP, the optimizer
/// state at that point and the full history.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub optimizer: AdadeltaState,
    pub history: TrainHistory,
}

/// Epoch-level early stopping on a strictly improving score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EarlyStopping {
    patience: usize,
    stale_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            stale_epochs: 0,
        }
    }

    /// Records the end of an epoch; returns true when training should stop.
    pub fn end_epoch(&mut self, improved: bool) -> bool {
        if improved {
            self.stale_epochs = 0;
        } else {
            self.stale_epochs += 1;
        }
        self.stale_epochs >= self.patience
    }
}

struct Selection {
    best: Option<(f64, ModelParams, AdadeltaState)>,
    improved_this_epoch: bool,
}

/// Trains `params` on `train`, selecting by dev MAP. `observe` sees every
/// event as it happens.
pub fn train_observed(
    train: &Dataset,
    dev: &Dataset,
    mut params: ModelParams,
    config: &TrainConfig,
    mut observe: impl FnMut(&Event),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let hyper = params.hyper();
    if hyper.relational_mode != config.relational_mode || hyper.conv_mode != config.conv_mode {
        return Err(TrainError::InvalidConfig(format!(
            "model was built for mode {}/{:?}, configuration asks for {}/{:?}",
            hyper.relational_mode, hyper.conv_mode, config.relational_mode, config.conv_mode
        )));
    }
    params.set_freeze_embeddings(config.freeze_embeddings);
    let mut pairs: Vec<&QAPair> = train.pairs().collect();
    if pairs.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let (dev, _) = dev.filter(FilterPolicy::AllPositiveOrAllNegative);
    if dev.is_empty() {
        return Err(TrainError::DegenerateDev);
    }
    let dev_qrels = dev.qrels();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = AdadeltaState::new(&params, config.adadelta());
    let mut history = TrainHistory::default();
    let mut stopping = EarlyStopping::new(config.patience);
    let mut sel = Selection {
        best: None,
        improved_this_epoch: false,
    };
    let mut step = 0usize;

    let mut record = |history: &mut TrainHistory, event: Event| {
        observe(&event);
        history.events.push(event);
    };
    let evaluate_dev = |params: &ModelParams,
                        optimizer: &AdadeltaState,
                        history: &mut TrainHistory,
                        sel: &mut Selection,
                        step: usize,
                        epoch: usize|
     -> Result<Event, TrainError> {
        let run = rank_dataset(params, &dev, "dev")?;
        let map = evaluate(&run, &dev_qrels, FilterPolicy::None)?.map;
        let best = sel.best.as_ref().is_none_or(|(b, _, _)| map > *b);
        if best {
            sel.best = Some((map, params.clone(), optimizer.clone()));
            sel.improved_this_epoch = true;
            history.best_dev_map = Some(map);
            history.best_step = step;
            history.best_epoch = epoch;
        }
        Ok(Event::Eval {
            step,
            epoch,
            dev_map: map,
            best,
        })
    };

    for epoch in 1..=config.max_epochs {
        pairs.shuffle(&mut rng);
        sel.improved_this_epoch = false;
        let mut evaluated_at = None;
        for batch in pairs.chunks(config.batch_size) {
            let (loss, grads) = nll_loss(batch, &params)?;
            optimizer.step(&mut params, &grads)?;
            step += 1;
            record(&mut history, Event::Batch { step, epoch, loss });
            if step.is_multiple_of(config.eval_interval) {
                let e = evaluate_dev(&params, &optimizer, &mut history, &mut sel, step, epoch)?;
                record(&mut history, e);
                evaluated_at = Some(step);
            }
        }
        if evaluated_at != Some(step) {
            let e = evaluate_dev(&params, &optimizer, &mut history, &mut sel, step, epoch)?;
            record(&mut history, e);
        }
        history.epochs_run = epoch;
        if stopping.end_epoch(sel.improved_this_epoch) {
            history.stop_reason = Some(StopReason::Patience);
            break;
        }
    }
    history.stop_reason.get_or_insert(StopReason::MaxEpochs);
    let (_, params, optimizer) = sel.best.expect("at least one dev evaluation per epoch");
    Ok(TrainOutcome {
        params,
        optimizer,
        history,
    })
}

pub fn train(
    train: &Dataset,
    dev: &Dataset,
    params: ModelParams,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    train_observed(train, dev, params, config, |_| {})
}
