use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use super::adam::Adam;
use super::dense::{relu_in_place, relu_mask, Dense};
use super::{TrainConfig, TrainingMeta};
use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::math::exp;
use crate::seed;

pub const VAE_HIDDEN: usize = 20;
pub const VAE_LATENT: usize = 8;

/// Gaussian VAE: `d -> hidden -> (mean, log-variance)` and `latent -> hidden -> d`.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    input_dim: usize,
    hidden: usize,
    latent: usize,
    // encoder, mean head, log-variance head, decoder hidden, decoder output
    layers: [Dense; 5],
    params: Vec<f64>,
    pub meta: TrainingMeta,
}

fn layout(d: usize, h: usize, l: usize) -> ([Dense; 5], usize) {
    let mut offset = 0;
    let mut next = |input, output| {
        let layer = Dense { input, output, offset };
        offset += layer.len();
        layer
    };
    let layers = [next(d, h), next(h, l), next(h, l), next(l, h), next(h, d)];
    (layers, offset)
}

impl VaeModel {
    pub fn new(input_dim: usize, hidden: usize, latent: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden == 0 || latent == 0 {
            return Err(Error::invalid("architecture", "VAE widths must be positive"));
        }
        let (layers, n) = layout(input_dim, hidden, latent);
        let mut params = vec![0.0; n];
        for (i, layer) in layers.iter().enumerate() {
            layer.init(&mut params, seed::derive(seed, "vae-init", i as u64));
        }
        Ok(VaeModel { input_dim, hidden, latent, layers, params, meta: TrainingMeta::default() })
    }

    pub fn from_parts(input_dim: usize, hidden: usize, latent: usize, params: Vec<f64>, meta: TrainingMeta) -> Result<Self> {
        let mut vae = Self::new(input_dim, hidden, latent, 0)?;
        check_dim(vae.params.len(), params.len())?;
        vae.params = params;
        vae.meta = meta;
        Ok(vae)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn latent_dim(&self) -> usize {
        self.latent
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        self.layers.iter().flat_map(|l| [vec![l.input, l.output], vec![l.output]]).collect()
    }

    /// Encoder mean and log-variance.
    pub fn encode(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim(self.input_dim, x.len())?;
        let mut h = vec![0.0; self.hidden];
        self.layers[0].forward(&self.params, x, &mut h);
        relu_in_place(&mut h);
        let mut mean = vec![0.0; self.latent];
        let mut logvar = vec![0.0; self.latent];
        self.layers[1].forward(&self.params, &h, &mut mean);
        self.layers[2].forward(&self.params, &h, &mut logvar);
        Ok((mean, logvar))
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.latent, z.len())?;
        let mut h = vec![0.0; self.hidden];
        self.layers[3].forward(&self.params, z, &mut h);
        relu_in_place(&mut h);
        let mut x = vec![0.0; self.input_dim];
        self.layers[4].forward(&self.params, &h, &mut x);
        Ok(x)
    }

    /// `decode(encode_mean(x))`.
    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (mean, _) = self.encode(x)?;
        self.decode(&mean)
    }

    /// Negative ELBO of one batch (unit-variance Gaussian likelihood, KL to
    /// N(0, I)), averaged over rows; writes the parameter gradient.
    fn batch_gradient(&self, ws: &mut VaeWorkspace, rows: usize, grad: &mut [f64]) -> f64 {
        let (d, h, l) = (self.input_dim, self.hidden, self.latent);
        let p = &self.params;
        let x = &ws.x[..rows * d];
        let h1 = &mut ws.h1[..rows * h];
        self.layers[0].forward(p, x, h1);
        relu_in_place(h1);
        let mean = &mut ws.mean[..rows * l];
        let logvar = &mut ws.logvar[..rows * l];
        self.layers[1].forward(p, h1, mean);
        self.layers[2].forward(p, h1, logvar);
        let eps = &ws.eps[..rows * l];
        let z = &mut ws.z[..rows * l];
        for i in 0..rows * l {
            z[i] = mean[i] + exp(0.5 * logvar[i]) * eps[i];
        }
        let h2 = &mut ws.h2[..rows * h];
        self.layers[3].forward(p, z, h2);
        relu_in_place(h2);
        let xhat = &mut ws.xhat[..rows * d];
        self.layers[4].forward(p, h2, xhat);

        let scale = 1.0 / rows as f64;
        let mut loss = 0.0;
        let d_xhat = &mut ws.d_xhat[..rows * d];
        for i in 0..rows * d {
            let r = xhat[i] - x[i];
            loss += 0.5 * r * r;
            d_xhat[i] = r * scale;
        }
        for i in 0..rows * l {
            let ev = exp(logvar[i]);
            loss += -0.5 * (1.0 + logvar[i] - mean[i] * mean[i] - ev);
        }

        grad.iter_mut().for_each(|g| *g = 0.0);
        let d_h2 = &mut ws.d_h2[..rows * h];
        self.layers[4].backward(p, h2, d_xhat, grad, Some(&mut *d_h2));
        relu_mask(d_h2, h2);
        let d_z = &mut ws.d_z[..rows * l];
        self.layers[3].backward(p, z, d_h2, grad, Some(&mut *d_z));
        let d_mean = &mut ws.d_mean[..rows * l];
        let d_logvar = &mut ws.d_logvar[..rows * l];
        for i in 0..rows * l {
            let sd = exp(0.5 * logvar[i]);
            d_mean[i] = d_z[i] + mean[i] * scale;
            d_logvar[i] = d_z[i] * eps[i] * 0.5 * sd + 0.5 * (sd * sd - 1.0) * scale;
        }
        let d_h1 = &mut ws.d_h1[..rows * h];
        let d_h1b = &mut ws.d_h1b[..rows * h];
        self.layers[1].backward(p, h1, d_mean, grad, Some(&mut *d_h1));
        self.layers[2].backward(p, h1, d_logvar, grad, Some(&mut *d_h1b));
        for (a, b) in d_h1.iter_mut().zip(d_h1b.iter()) {
            *a += b;
        }
        relu_mask(d_h1, h1);
        self.layers[0].backward(p, x, d_h1, grad, None);
        loss * scale
    }
}

struct VaeWorkspace {
    x: Vec<f64>,
    h1: Vec<f64>,
    mean: Vec<f64>,
    logvar: Vec<f64>,
    eps: Vec<f64>,
    z: Vec<f64>,
    h2: Vec<f64>,
    xhat: Vec<f64>,
    d_xhat: Vec<f64>,
    d_h2: Vec<f64>,
    d_z: Vec<f64>,
    d_mean: Vec<f64>,
    d_logvar: Vec<f64>,
    d_h1: Vec<f64>,
    d_h1b: Vec<f64>,
}

impl VaeWorkspace {
    fn new(d: usize, h: usize, l: usize, b: usize) -> Self {
        VaeWorkspace {
            x: vec![0.0; b * d],
            h1: vec![0.0; b * h],
            mean: vec![0.0; b * l],
            logvar: vec![0.0; b * l],
            eps: vec![0.0; b * l],
            z: vec![0.0; b * l],
            h2: vec![0.0; b * h],
            xhat: vec![0.0; b * d],
            d_xhat: vec![0.0; b * d],
            d_h2: vec![0.0; b * h],
            d_z: vec![0.0; b * l],
            d_mean: vec![0.0; b * l],
            d_logvar: vec![0.0; b * l],
            d_h1: vec![0.0; b * h],
            d_h1b: vec![0.0; b * h],
        }
    }
}

/// Train a VAE with the default 20-unit hidden layers and 8 latent dimensions.
pub fn train_vae(data: &Dataset, config: &TrainConfig) -> Result<VaeModel> {
    train_vae_with(data, config, VAE_HIDDEN, VAE_LATENT)
}

pub fn train_vae_with(data: &Dataset, config: &TrainConfig, hidden: usize, latent: usize) -> Result<VaeModel> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let mut vae = VaeModel::new(data.d(), hidden, latent, seed::derive(config.seed, "init", 0))?;
    let (n, d) = (data.n(), data.d());
    let batch = config.effective_batch(n);
    let mut ws = VaeWorkspace::new(d, hidden, latent, batch);
    let mut adam = Adam::new(vae.params.len(), config.learning_rate, config.adam_betas, config.adam_eps);
    let mut grad = vec![0.0; vae.params.len()];
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = seed::rng(seed::derive(config.seed, "shuffle", 0));
    let mut noise_rng = seed::rng(seed::derive(config.seed, "reparam", 0));
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            for (slot, &i) in ws.x.chunks_exact_mut(d).zip(chunk) {
                slot.copy_from_slice(data.row(i));
            }
            for e in &mut ws.eps[..chunk.len() * latent] {
                *e = StandardNormal.sample(&mut noise_rng);
            }
            let loss = vae.batch_gradient(&mut ws, chunk.len(), &mut grad);
            total += loss * chunk.len() as f64;
            adam.step(&mut vae.params, &grad);
        }
        let epoch_loss = total / n as f64;
        if !epoch_loss.is_finite() || vae.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence { epoch: epoch + 1 });
        }
        epoch_losses.push(epoch_loss);
    }
    vae.meta = TrainingMeta {
        seed: config.seed,
        epochs: config.epochs,
        learning_rate: config.learning_rate,
        batch_size: batch,
        epoch_losses,
        train_accuracy: 0.0,
        test_accuracy: None,
    };
    Ok(vae)
}
