use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::adam::Adam;
use super::dense::{relu_in_place, relu_mask, Dense};
use super::{Classifier, Differentiable, TrainConfig, TrainingMeta, PROB_CLAMP};
use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::math::{ln, logit, sigmoid, softplus};
use crate::recourse::CostFn;
use crate::seed;

/// Fully connected ReLU network with a single sigmoid output.
///
/// An empty `hidden` list is logistic regression.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    input_dim: usize,
    hidden: Vec<usize>,
    layers: Vec<Dense>,
    params: Vec<f64>,
    pub meta: TrainingMeta,
}

/// Scalar objectives whose input gradient [`Model::input_gradient`] returns.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    /// Binary cross-entropy against a fixed label.
    BceToTarget(u8),
    /// `bce(f(x'), 1) + lambda * cost(anchor, x')`.
    Recourse { lambda: f64, cost: CostFn, anchor: &'a [f64] },
}

fn layout(input_dim: usize, hidden: &[usize]) -> (Vec<Dense>, usize) {
    let mut widths = Vec::with_capacity(hidden.len() + 2);
    widths.push(input_dim);
    widths.extend_from_slice(hidden);
    widths.push(1);
    Dense::stack(&widths, 0)
}

impl Model {
    /// Freshly initialized network. Layer `l` is seeded from `(seed, "init", l)`.
    pub fn new(input_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::invalid("input_dim", "must be at least 1"));
        }
        if hidden.contains(&0) {
            return Err(Error::invalid("architecture", "layer widths must be positive"));
        }
        let (layers, n_params) = layout(input_dim, hidden);
        let mut params = vec![0.0; n_params];
        for (l, layer) in layers.iter().enumerate() {
            layer.init(&mut params, seed::derive(seed, "init", l as u64));
        }
        Ok(Model { input_dim, hidden: hidden.to_vec(), layers, params, meta: TrainingMeta::default() })
    }

    /// Logistic regression with explicit weights.
    pub fn logistic(weights: &[f64], bias: f64) -> Result<Self> {
        let mut params = weights.to_vec();
        params.push(bias);
        Self::from_parts(weights.len(), &[], params, TrainingMeta::default())
    }

    /// Rebuild a model from its flat parameter vector.
    pub fn from_parts(input_dim: usize, hidden: &[usize], params: Vec<f64>, meta: TrainingMeta) -> Result<Self> {
        if input_dim == 0 || hidden.contains(&0) {
            return Err(Error::invalid("architecture", "layer widths must be positive"));
        }
        let (layers, n_params) = layout(input_dim, hidden);
        check_dim(n_params, params.len())?;
        Ok(Model { input_dim, hidden: hidden.to_vec(), layers, params, meta })
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// `(rows, cols)` of each weight matrix followed by its bias length, in storage order.
    pub fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        self.layers.iter().flat_map(|l| [vec![l.input, l.output], vec![l.output]]).collect()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.input_dim, x.len())?;
        Ok(self.probability(x))
    }

    pub fn predict(&self, x: &[f64]) -> Result<u8> {
        Ok(u8::from(self.predict_proba(x)? >= 0.5))
    }

    /// Probability assigned to label `y`, clamped to `[1e-7, 1 - 1e-7]`.
    fn clamped_label_probability(&self, x: &[f64], y: u8) -> Result<f64> {
        let p = self.predict_proba(x)?;
        let py = if y == 1 { p } else { 1.0 - p };
        Ok(py.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP))
    }

    pub fn bce_loss(&self, x: &[f64], y: u8) -> Result<f64> {
        Ok(-ln(self.clamped_label_probability(x, y)?))
    }

    /// `logit((f(x))_y)` with the same clamping as [`Model::bce_loss`].
    pub fn logit_confidence(&self, x: &[f64], y: u8) -> Result<f64> {
        Ok(logit(self.clamped_label_probability(x, y)?))
    }

    /// Gradient of `objective` with respect to the input.
    ///
    /// The cross-entropy term is differentiated in its unclamped softplus
    /// form, so the gradient stays informative on saturated points.
    pub fn input_gradient(&self, x: &[f64], objective: Objective<'_>) -> Result<Vec<f64>> {
        check_dim(self.input_dim, x.len())?;
        let mut grad = vec![0.0; self.input_dim];
        let z = self.logit_grad(x, &mut grad);
        let p = sigmoid(z);
        let (target, extra) = match objective {
            Objective::BceToTarget(t) => (f64::from(t), None),
            Objective::Recourse { lambda, cost, anchor } => {
                check_dim(self.input_dim, anchor.len())?;
                (1.0, Some((lambda, cost, anchor)))
            }
        };
        grad.iter_mut().for_each(|g| *g *= p - target);
        if let Some((lambda, cost, anchor)) = extra {
            let mut cg = vec![0.0; self.input_dim];
            cost.gradient(anchor, x, &mut cg);
            for (g, c) in grad.iter_mut().zip(cg) {
                *g += lambda * c;
            }
        }
        Ok(grad)
    }

    /// Fraction of rows whose thresholded prediction matches the label.
    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        check_dim(self.input_dim, data.d())?;
        if data.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        let correct = data.rows().zip(data.labels()).filter(|(x, &y)| u8::from(self.probability(x) >= 0.5) == y).count();
        Ok(correct as f64 / data.n() as f64)
    }

    fn forward_batch(&self, ws: &mut Workspace, rows: usize) {
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (head, tail) = ws.acts.split_at_mut(l + 1);
            let out = &mut tail[0][..rows * layer.output];
            layer.forward(&self.params, &head[l][..rows * layer.input], out);
            if l < last {
                relu_in_place(out);
            }
        }
    }

    /// Mean BCE over the batch held in `ws.acts[0]`; writes its parameter gradient.
    fn batch_gradient(&self, ws: &mut Workspace, targets: &[f64], grad: &mut [f64]) -> f64 {
        let rows = targets.len();
        self.forward_batch(ws, rows);
        let n_layers = self.layers.len();
        let logits = &ws.acts[n_layers][..rows];
        let mut loss = 0.0;
        let out_delta = &mut ws.deltas[n_layers - 1][..rows];
        for ((d, &z), &y) in out_delta.iter_mut().zip(logits).zip(targets) {
            loss += softplus(z) - y * z;
            *d = (sigmoid(z) - y) / rows as f64;
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        for l in (0..n_layers).rev() {
            let layer = self.layers[l];
            let x = &ws.acts[l][..rows * layer.input];
            let (below, here) = ws.deltas.split_at_mut(l);
            let delta = &here[0][..rows * layer.output];
            if l == 0 {
                layer.backward(&self.params, x, delta, grad, None);
            } else {
                let dx = &mut below[l - 1][..rows * layer.input];
                layer.backward(&self.params, x, delta, grad, Some(&mut *dx));
                relu_mask(dx, x);
            }
        }
        loss / rows as f64
    }
}

struct Workspace {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Workspace {
    fn new(model: &Model, batch: usize) -> Self {
        let mut acts = vec![vec![0.0; batch * model.input_dim]];
        let mut deltas = Vec::new();
        for layer in &model.layers {
            acts.push(vec![0.0; batch * layer.output]);
            deltas.push(vec![0.0; batch * layer.output]);
        }
        Workspace { acts, deltas }
    }
}

impl Classifier for Model {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn logit(&self, x: &[f64]) -> f64 {
        let last = self.layers.len() - 1;
        let mut cur = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.output];
            layer.forward(&self.params, &cur, &mut next);
            if l < last {
                relu_in_place(&mut next);
            }
            cur = next;
        }
        cur[0]
    }
}

impl Differentiable for Model {
    fn logit_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let last = self.layers.len() - 1;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.output];
            layer.forward(&self.params, &acts[l], &mut next);
            if l < last {
                relu_in_place(&mut next);
            }
            acts.push(next);
        }
        let z = acts[self.layers.len()][0];
        let mut delta = vec![1.0];
        for l in (0..self.layers.len()).rev() {
            let layer = self.layers[l];
            let mut dx = vec![0.0; layer.input];
            layer.backward_input(&self.params, &delta, &mut dx);
            if l > 0 {
                relu_mask(&mut dx, &acts[l]);
            }
            delta = dx;
        }
        grad.copy_from_slice(&delta);
        z
    }
}

/// Train with Adam on mean binary cross-entropy.
///
/// Initialization and per-epoch shuffling are seeded from `config.seed`, so
/// identical inputs give bit-identical parameters.
pub fn train_classifier(data: &Dataset, architecture: &[usize], config: &TrainConfig) -> Result<Model> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let mut model = Model::new(data.d(), architecture, seed::derive(config.seed, "init", 0))?;
    let n = data.n();
    let d = data.d();
    let batch = config.effective_batch(n);
    let mut ws = Workspace::new(&model, batch);
    let mut adam = Adam::new(model.params.len(), config.learning_rate, config.adam_betas, config.adam_eps);
    let mut grad = vec![0.0; model.params.len()];
    let mut targets = Vec::with_capacity(batch);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seed::rng(seed::derive(config.seed, "shuffle", 0));
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            targets.clear();
            for (slot, &i) in ws.acts[0].chunks_exact_mut(d).zip(chunk) {
                slot.copy_from_slice(data.row(i));
                targets.push(f64::from(data.label(i)));
            }
            let loss = model.batch_gradient(&mut ws, &targets, &mut grad);
            total += loss * chunk.len() as f64;
            adam.step(&mut model.params, &grad);
        }
        let epoch_loss = total / n as f64;
        if !epoch_loss.is_finite() || model.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence { epoch: epoch + 1 });
        }
        epoch_losses.push(epoch_loss);
    }

    let train_accuracy = model.accuracy(data)?;
    model.meta = TrainingMeta {
        seed: config.seed,
        epochs: config.epochs,
        learning_rate: config.learning_rate,
        batch_size: batch,
        epoch_losses,
        train_accuracy,
        test_accuracy: None,
    };
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::math::sigmoid;

    const SIGMA_1: f64 = 0.731_058_578_630_004_9;

    #[test]
    fn logistic_probabilities() {
        let zero = Model::logistic(&[0.0, 0.0], 0.0).unwrap();
        assert_eq!(zero.predict_proba(&[3.0, -7.0]).unwrap(), 0.5);
        let m = Model::logistic(&[1.0, 0.0], 0.0).unwrap();
        assert_eq!(m.predict_proba(&[0.0, 0.0]).unwrap(), 0.5);
        assert!((m.predict_proba(&[1.0, 0.0]).unwrap() - SIGMA_1).abs() < 1e-15);
        assert_eq!(m.predict(&[1.0, 0.0]).unwrap(), 1);
        assert_eq!(m.predict_proba(&[1.0]), Err(Error::DimensionMismatch { expected: 2, found: 1 }));
    }

    #[test]
    fn losses_and_confidences() {
        let m = Model::logistic(&[1.0, 0.0], 0.0).unwrap();
        assert!((m.bce_loss(&[0.0, 0.0], 1).unwrap() - core::f64::consts::LN_2).abs() < 1e-12);
        assert!((m.bce_loss(&[1.0, 0.0], 0).unwrap() - 1.313_261_687_518_222_8).abs() < 1e-9);
        assert_eq!(m.logit_confidence(&[0.0, 0.0], 1).unwrap(), 0.0);
        assert!((m.logit_confidence(&[1.0, 0.0], 1).unwrap() - 1.0).abs() < 1e-9);
        assert!((m.logit_confidence(&[-3.0, 0.0], 1).unwrap() + 3.0).abs() < 1e-9);
        // Saturation hits the clamp.
        let floor = -ln(1.0 - PROB_CLAMP);
        assert!((m.bce_loss(&[100.0, 0.0], 1).unwrap() - floor).abs() < 1e-15);
        assert!((m.bce_loss(&[100.0, 0.0], 0).unwrap() + ln(PROB_CLAMP)).abs() < 1e-9);
    }

    #[test]
    fn logistic_bce_gradient_is_residual_times_weights() {
        let w = [0.7, -1.3, 2.0];
        let m = Model::logistic(&w, 0.4).unwrap();
        let x = [0.3, 0.1, -0.5];
        let p = sigmoid(0.7 * 0.3 - 1.3 * 0.1 - 1.0 + 0.4);
        for target in [0u8, 1] {
            let g = m.input_gradient(&x, Objective::BceToTarget(target)).unwrap();
            for (gi, wi) in g.iter().zip(w) {
                assert!((gi - (p - f64::from(target)) * wi).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_lambda_recourse_gradient_equals_bce() {
        let m = Model::new(4, &[6, 5], 3).unwrap();
        let x = [0.2, -0.4, 1.1, 0.0];
        let anchor = [0.0; 4];
        let a = m.input_gradient(&x, Objective::BceToTarget(1)).unwrap();
        let b = m
            .input_gradient(&x, Objective::Recourse { lambda: 0.0, cost: CostFn::L1, anchor: &anchor })
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn logistic_regression_separates_blobs() {
        let mut spec = SyntheticSpec::new(2, 200, 4);
        spec.class_separation = 3.0;
        let data = generate_synthetic(&spec).unwrap();
        let cfg = TrainConfig { learning_rate: 0.05, epochs: 100, ..TrainConfig::default() };
        let m = train_classifier(&data, &[], &cfg).unwrap();
        assert!(m.meta.train_accuracy >= 0.99, "{}", m.meta.train_accuracy);
        assert!(m.meta.epoch_losses.last().unwrap() <= &m.meta.epoch_losses[0]);
    }

    #[test]
    fn mlp_solves_xor() {
        let data = Dataset::new(alloc::vec![0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0], alloc::vec![0, 1, 1, 0], 2).unwrap();
        let cfg = TrainConfig { learning_rate: 0.02, epochs: 3000, seed: 5, ..TrainConfig::default() };
        let m = train_classifier(&data, &[16], &cfg).unwrap();
        assert_eq!(m.meta.train_accuracy, 1.0);
    }

    #[test]
    fn training_is_deterministic() {
        let data = generate_synthetic(&SyntheticSpec::new(5, 300, 2)).unwrap();
        let cfg = TrainConfig { epochs: 3, seed: 9, ..TrainConfig::default() };
        let a = train_classifier(&data, &[8], &cfg).unwrap();
        let b = train_classifier(&data, &[8], &cfg).unwrap();
        assert_eq!(a.params(), b.params());
        let c = train_classifier(&data, &[8], &cfg.clone().with_seed(10)).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let mut spec = SyntheticSpec::new(3, 20, 1);
        spec.class_separation = 1e300;
        let data = generate_synthetic(&spec).unwrap();
        let cfg = TrainConfig { learning_rate: 1e300, epochs: 5, ..TrainConfig::default() };
        assert!(matches!(train_classifier(&data, &[4], &cfg), Err(Error::Divergence { epoch: 1 })));
    }

    #[test]
    fn rejects_bad_architecture() {
        assert!(Model::new(3, &[4, 0], 1).is_err());
        assert!(Model::from_parts(2, &[], alloc::vec![1.0], TrainingMeta::default()).is_err());
    }
}
