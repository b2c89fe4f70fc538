//! Forecaster interface, the reference Chebyshev model and its training loop.

mod adam;
mod cheb;
mod params;

pub use adam::{adam_step, sgd_step, AdamState, LrSchedule, BETA1, BETA2, EPSILON};
pub use cheb::{chebyshev_basis, largest_eigenvalue, normalized_laplacian, scaled_laplacian, ChebModel};
pub use params::{average_params, read_checkpoint, write_checkpoint, ForecasterParams, ShapeTag};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One standardized training example on a subgraph.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `lookback × subgraph nodes`.
    pub input: DMatrix<f64>,
    /// `horizon × scored nodes`; the scored nodes are the first columns of
    /// the subgraph.
    pub target: DMatrix<f64>,
}

/// A model bound to one training subgraph. Parameters live outside the model
/// so that they can be averaged and exchanged between cloudlets.
pub trait Forecaster: Send + Sync {
    fn shape_tag(&self) -> ShapeTag;

    /// `lookback × nodes` in, `horizon × nodes` out.
    fn predict(&self, params: &ForecasterParams, input: &DMatrix<f64>) -> Result<DMatrix<f64>>;

    /// Mean absolute error over every target entry and its exact subgradient
    /// (`sign(0) = 0`).
    fn loss_and_grad(&self, params: &ForecasterParams, batch: &[&Sample]) -> Result<(f64, Vec<f64>)>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub passes: usize,
    pub weight_decay: f64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            passes: 1,
            weight_decay: 1e-5,
            optimizer: OptimizerKind::Adam,
        }
    }
}

/// Hyperparameters of the reference forecaster and its optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecasterConfig {
    /// Chebyshev order `K`.
    pub order: usize,
    pub lookback: usize,
    pub lr: f64,
    pub lr_decay: f64,
    /// Windows between learning-rate decays.
    pub decay_every: usize,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Passes over each window.
    pub passes: usize,
    /// Half-width of the uniform jitter added to the persistence start.
    pub init_noise: f64,
    pub optimizer: OptimizerKind,
}

impl Default for ForecasterConfig {
    fn default() -> Self {
        Self {
            order: 3,
            lookback: 12,
            lr: 1e-4,
            lr_decay: 0.7,
            decay_every: 5,
            weight_decay: 1e-5,
            batch_size: 32,
            passes: 1,
            init_noise: 0.01,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl ForecasterConfig {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            initial: self.lr,
            gamma: self.lr_decay,
            every: self.decay_every,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            passes: self.passes,
            weight_decay: self.weight_decay,
            optimizer: self.optimizer,
        }
    }

    /// Spatial receptive field of one Chebyshev layer, `K − 1` hops.
    pub fn receptive_hops(&self) -> usize {
        self.order.saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.order >= 1
            && self.lookback >= 1
            && self.batch_size >= 1
            && self.passes >= 1
            && self.decay_every >= 1;
        if !positive {
            return Err(Error::Config(
                "order, lookback, batch_size, passes and decay_every must be at least 1".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!(
                "need lr > 0 and 0 < lr_decay <= 1, got {} and {}",
                self.lr, self.lr_decay
            )));
        }
        if !(self.weight_decay >= 0.0) || !(self.init_noise >= 0.0) {
            return Err(Error::Config("weight_decay and init_noise must be non-negative".into()));
        }
        Ok(())
    }
}

/// Shuffled mini-batch passes over one window. Returns the mean mini-batch
/// loss seen during training, or `None` when the window is empty.
pub fn train_on_window<R: Rng + ?Sized>(
    model: &dyn Forecaster,
    params: &mut ForecasterParams,
    samples: &[Sample],
    state: &mut AdamState,
    cfg: &TrainConfig,
    lr: f64,
    rng: &mut R,
) -> Result<Option<f64>> {
    if samples.is_empty() {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut total = 0.0;
    let mut batches = 0usize;
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.passes {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| &samples[i]));
            let (loss, grad) = model.loss_and_grad(params, &batch)?;
            match cfg.optimizer {
                OptimizerKind::Adam => adam_step(params, &grad, state, lr, cfg.weight_decay),
                OptimizerKind::Sgd => sgd_step(params, &grad, lr),
            }
            total += loss;
            batches += 1;
        }
    }
    Ok((batches > 0).then(|| total / batches as f64))
}
