use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{require_unfavorable, Algorithm, CostFn, RecourseResult, Trace};
use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus};
use crate::nn::{Adam, Differentiable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScfeParams {
    pub lambda: f64,
    /// Multiplier applied to `lambda` after a failed attempt.
    pub lambda_decay: f64,
    pub max_iters: usize,
    pub step_size: f64,
    pub max_retries: usize,
    /// Feature indices that must not change.
    pub frozen: Vec<usize>,
}

impl Default for ScfeParams {
    fn default() -> Self {
        ScfeParams { lambda: 0.1, lambda_decay: 0.5, max_iters: 1000, step_size: 0.05, max_retries: 5, frozen: Vec::new() }
    }
}

impl ScfeParams {
    pub fn validate(&self, d: usize) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda", "must be positive"));
        }
        if !(self.lambda_decay > 0.0 && self.lambda_decay < 1.0) {
            return Err(Error::invalid("lambda_decay", "must lie in (0, 1)"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters", "must be at least 1"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid("step_size", "must be positive"));
        }
        if let Some(&i) = self.frozen.iter().find(|&&i| i >= d) {
            return Err(Error::invalid("frozen", alloc::format!("feature index {i} out of range for d={d}")));
        }
        Ok(())
    }
}

struct Best {
    objective: f64,
    point: Vec<f64>,
    iteration: usize,
}

/// Gradient-based recourse: Adam on `bce(f(x'), 1) + lambda * cost(x, x')`
/// starting from `x'= x`.
///
/// Each attempt runs `max_iters` Adam steps and keeps the valid iterate
/// (`f(x') >= 0.5`) with the lowest objective. An attempt with no valid
/// iterate multiplies `lambda` by `lambda_decay` and starts over, at most
/// `max_retries` times. With the ℓ1 cost a coordinate that would cross its
/// anchor value is stopped at the anchor, so sparse solutions stay sparse.
pub fn scfe(model: &impl Differentiable, x: &[f64], params: &ScfeParams, cost_fn: CostFn) -> Result<RecourseResult> {
    require_unfavorable(model, x)?;
    let d = x.len();
    params.validate(d)?;

    let mut grad = vec![0.0; d];
    let mut cost_grad = vec![0.0; d];
    let mut lambda = params.lambda;
    let mut current = x.to_vec();

    for retry in 0..=params.max_retries {
        current.copy_from_slice(x);
        let mut adam = Adam::new(d, params.step_size, (0.9, 0.999), 1e-8);
        let mut best: Option<Best> = None;

        for it in 0..=params.max_iters {
            let z = model.logit_grad(&current, &mut grad);
            if it > 0 && sigmoid(z) >= 0.5 {
                let objective = softplus(-z) + lambda * cost_fn.eval(x, &current);
                if best.as_ref().is_none_or(|b| objective < b.objective) {
                    best = Some(Best { objective, point: current.clone(), iteration: it });
                }
            }
            if it == params.max_iters {
                break;
            }

            let residual = sigmoid(z) - 1.0;
            cost_fn.gradient(x, &current, &mut cost_grad);
            for i in 0..d {
                let g = residual * grad[i];
                grad[i] = if cost_fn == CostFn::L1 && current[i] == x[i] {
                    if g.abs() <= lambda {
                        0.0
                    } else {
                        g - lambda * g.signum()
                    }
                } else {
                    g + lambda * cost_grad[i]
                };
            }
            for &i in &params.frozen {
                grad[i] = 0.0;
            }

            let before: Vec<f64> = if cost_fn == CostFn::L1 { current.clone() } else { Vec::new() };
            adam.step(&mut current, &grad);
            if cost_fn == CostFn::L1 {
                for i in 0..d {
                    let old = before[i] - x[i];
                    let new = current[i] - x[i];
                    if old != 0.0 && (new == 0.0 || new.signum() != old.signum()) {
                        current[i] = x[i];
                        adam.clear_momentum(i);
                    }
                }
            }
        }

        if let Some(b) = best {
            let cost = cost_fn.eval(x, &b.point);
            return Ok(RecourseResult {
                counterfactual: b.point,
                cost,
                cost_fn,
                valid: true,
                algorithm: Algorithm::Scfe,
                trace: Trace::Scfe { iterations: b.iteration, retries: retry, lambda, objective: b.objective },
                seed: 0,
            });
        }
        if retry < params.max_retries {
            lambda *= params.lambda_decay;
        }
    }

    let z = model.logit(&current);
    let objective = softplus(-z) + lambda * cost_fn.eval(x, &current);
    Ok(RecourseResult {
        cost: cost_fn.eval(x, &current),
        counterfactual: current,
        cost_fn,
        valid: false,
        algorithm: Algorithm::Scfe,
        trace: Trace::Scfe { iterations: params.max_iters, retries: params.max_retries, lambda, objective },
        seed: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{exp, ln};
    use crate::nn::{Classifier, Model};

    /// Minimizer over a grid of the same objective, restricted to valid points.
    fn grid_oracle(w: [f64; 2], b: f64, x: [f64; 2], lambda: f64, span: f64, steps: usize) -> (f64, f64) {
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=steps {
            for j in 0..=steps {
                let p = [x[0] - span + 2.0 * span * i as f64 / steps as f64, x[1] - span + 2.0 * span * j as f64 / steps as f64];
                let z = w[0] * p[0] + w[1] * p[1] + b;
                let prob = 1.0 / (1.0 + exp(-z));
                if prob < 0.5 {
                    continue;
                }
                let c = ((p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2)).sqrt();
                let obj = -ln(prob) + lambda * c;
                if obj < best.0 {
                    best = (obj, c);
                }
            }
        }
        best
    }

    fn trace_lambda(r: &RecourseResult) -> f64 {
        match r.trace {
            Trace::Scfe { lambda, .. } => lambda,
            _ => unreachable!(),
        }
    }

    #[test]
    fn matches_grid_oracle_on_axis_halfspace() {
        let m = Model::logistic(&[1.0, 0.0], -2.0).unwrap();
        let params = ScfeParams { lambda: 0.45, ..ScfeParams::default() };
        let r = scfe(&m, &[0.0, 0.0], &params, CostFn::L2).unwrap();
        assert!(r.valid);
        assert!(m.probability(&r.counterfactual) >= 0.5);
        assert!(r.counterfactual[0] > 2.0 && r.counterfactual[1].abs() < 0.05, "{:?}", r.counterfactual);
        let (_, oracle_cost) = grid_oracle([1.0, 0.0], -2.0, [0.0, 0.0], trace_lambda(&r), 4.0, 800);
        // Stationarity gives x1 = 2 + ln(11/9).
        assert!((oracle_cost - 2.2007).abs() < 0.02, "{oracle_cost}");
        assert!((r.cost - oracle_cost).abs() <= 0.05 * oracle_cost, "{} vs {oracle_cost}", r.cost);
    }

    #[test]
    fn default_lambda_lands_on_objective_minimizer() {
        let m = Model::logistic(&[1.0, 0.0], -2.0).unwrap();
        let r = scfe(&m, &[0.0, 0.0], &ScfeParams::default(), CostFn::L2).unwrap();
        // p = 1 - lambda at the minimizer, so x1 = 2 + ln 9.
        assert!((r.cost - (2.0 + ln(9.0))).abs() < 0.05 * (2.0 + ln(9.0)), "{}", r.cost);
        assert_eq!(r.cost, CostFn::L2.eval(&[0.0, 0.0], &r.counterfactual));
    }

    #[test]
    fn weak_model_forces_lambda_decay() {
        // |w| = 0.15 < 2 * lambda: the unconstrained minimizer is invalid.
        let m = Model::logistic(&[0.15, 0.0], -0.3).unwrap();
        let r = scfe(&m, &[0.0, 0.0], &ScfeParams::default(), CostFn::L2).unwrap();
        assert!(r.valid);
        assert!(m.probability(&r.counterfactual) >= 0.5);
        match r.trace {
            Trace::Scfe { retries, lambda, .. } => {
                assert!(retries >= 1);
                assert!(lambda < 0.1);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn l1_keeps_irrelevant_coordinates_fixed() {
        let m = Model::logistic(&[2.0, 0.1, 0.0], -3.0).unwrap();
        let x = [0.0, 0.5, -1.0];
        let r = scfe(&m, &x, &ScfeParams::default(), CostFn::L1).unwrap();
        assert!(r.valid);
        assert_eq!(r.counterfactual[1], 0.5);
        assert_eq!(r.counterfactual[2], -1.0);
    }

    #[test]
    fn frozen_features_do_not_move() {
        let m = Model::logistic(&[1.0, 1.0], -2.0).unwrap();
        let params = ScfeParams { frozen: alloc::vec![0], ..ScfeParams::default() };
        let r = scfe(&m, &[0.0, 0.0], &params, CostFn::L2).unwrap();
        assert!(r.valid);
        assert_eq!(r.counterfactual[0], 0.0);
        assert!(scfe(&m, &[0.0, 0.0], &ScfeParams { frozen: alloc::vec![2], ..ScfeParams::default() }, CostFn::L2).is_err());
    }

    #[test]
    fn mlp_recourse_is_valid_and_deterministic() {
        let m = Model::new(4, &[8], 11).unwrap();
        let x = (0..40)
            .map(|k| [k as f64 * 0.1 - 2.0, 0.3, -0.2 * k as f64 / 10.0, 1.0])
            .find(|x| m.probability(x) < 0.5)
            .unwrap();
        let a = scfe(&m, &x, &ScfeParams::default(), CostFn::L1).unwrap();
        let b = scfe(&m, &x, &ScfeParams::default(), CostFn::L1).unwrap();
        assert_eq!(a, b);
        if a.valid {
            assert!(m.probability(&a.counterfactual) >= 0.5);
        }
    }

    #[test]
    fn unreachable_target_reports_failure() {
        let m = Model::logistic(&[0.0, 0.0], -1.0).unwrap();
        let params = ScfeParams { max_iters: 20, max_retries: 1, ..ScfeParams::default() };
        let r = scfe(&m, &[0.0, 0.0], &params, CostFn::L2).unwrap();
        assert!(!r.valid);
        assert_eq!(r.cost, CostFn::L2.eval(&[0.0, 0.0], &r.counterfactual));
    }

    #[test]
    fn positive_input_is_rejected() {
        let m = Model::logistic(&[1.0, 0.0], 0.0).unwrap();
        assert!(matches!(scfe(&m, &[1.0, 0.0], &ScfeParams::default(), CostFn::L2), Err(Error::AlreadyPositive { .. })));
        assert!(scfe(&m, &[-1.0, 0.0], &ScfeParams { lambda_decay: 1.0, ..ScfeParams::default() }, CostFn::L2).is_err());
    }
}
