//! From-scratch binary classifiers and a tabular VAE, trained with Adam.

mod adam;
mod dense;
mod model;
mod vae;

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use model::{train_classifier, Model, Objective};
pub use vae::{train_vae, train_vae_with, VaeModel, VAE_HIDDEN, VAE_LATENT};

use crate::error::{Error, Result};
use crate::math::sigmoid;

/// Probability floor/ceiling used by losses and logit confidences.
pub const PROB_CLAMP: f64 = 1e-7;

/// Anything that maps a feature vector to a favorable-outcome score.
///
/// Implementations may assume `x.len() == self.input_dim()`; callers check.
pub trait Classifier {
    fn input_dim(&self) -> usize;

    /// Pre-sigmoid score.
    fn logit(&self, x: &[f64]) -> f64;

    fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }
}

/// A classifier whose logit is differentiable in its input.
pub trait Differentiable: Classifier {
    /// Returns the logit and writes `d logit / dx` into `grad`.
    fn logit_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

impl<T: Classifier + ?Sized> Classifier for &T {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn logit(&self, x: &[f64]) -> f64 {
        (**self).logit(x)
    }
}

impl<T: Differentiable + ?Sized> Differentiable for &T {
    fn logit_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        (**self).logit_grad(x, grad)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Minibatch size; datasets of at most 256 rows train full-batch.
    pub batch_size: usize,
    pub seed: u64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { learning_rate: 1e-4, epochs: 250, batch_size: 64, seed: 0, adam_betas: (0.9, 0.999), adam_eps: 1e-8 }
    }
}

impl TrainConfig {
    /// Defaults for the recourse VAE: 200 epochs at a 1e-3 step.
    pub fn vae_default() -> Self {
        TrainConfig { learning_rate: 1e-3, epochs: 200, ..Self::default() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::invalid("adam_betas", "must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::invalid("adam_eps", "must be positive"));
        }
        Ok(())
    }

    pub fn effective_batch(&self, n: usize) -> usize {
        if n <= 256 {
            n
        } else {
            self.batch_size.min(n)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Mean training loss per epoch, accumulated over the epoch's minibatches.
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}
