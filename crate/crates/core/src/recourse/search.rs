use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{require_unfavorable, sample_l1_ball_into, Algorithm, CostFn, RecourseResult, Trace};
use crate::error::{check_dim, Error, Result};
use crate::nn::{Classifier, VaeModel};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchParams {
    pub initial_radius: f64,
    pub radius_step: f64,
    pub samples_per_radius: usize,
    pub max_radius: f64,
    pub seed: u64,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams { initial_radius: 0.1, radius_step: 0.1, samples_per_radius: 500, max_radius: 10.0, seed: 0 }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("initial_radius", self.initial_radius), ("radius_step", self.radius_step), ("max_radius", self.max_radius)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        if self.samples_per_radius == 0 {
            return Err(Error::invalid("samples_per_radius", "must be at least 1"));
        }
        Ok(())
    }

    /// `initial_radius + k * radius_step` for `k = 0, 1, ...` up to `max_radius`.
    pub fn radii(&self) -> impl Iterator<Item = f64> + '_ {
        let limit = self.max_radius * (1.0 + 1e-12);
        (0u64..).map(|k| self.initial_radius + k as f64 * self.radius_step).take_while(move |&r| r <= limit)
    }
}

/// Growing ℓ1 balls around `center`; `evaluate` maps a sample to
/// `Some((cost, counterfactual))` when it is a valid recourse.
fn grow(
    center: &[f64],
    params: &SearchParams,
    mut evaluate: impl FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
) -> (Option<(f64, Vec<f64>, Vec<f64>)>, f64, usize) {
    let mut rng = seed::rng(params.seed);
    let mut buf = vec![0.0; center.len()];
    let mut drawn = 0;
    let mut last = params.initial_radius;
    for r in params.radii() {
        last = r;
        let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
        for _ in 0..params.samples_per_radius {
            sample_l1_ball_into(center, r, &mut rng, &mut buf);
            drawn += 1;
            if let Some((c, cf)) = evaluate(&buf) {
                if best.as_ref().is_none_or(|b| c < b.0) {
                    best = Some((c, cf, buf.clone()));
                }
            }
        }
        if best.is_some() {
            return (best, r, drawn);
        }
    }
    (None, last, drawn)
}

/// Random search in growing ℓ1 balls around `x`.
///
/// Returns the lowest-cost positively classified sample at the first radius
/// that has one, or `valid = false` with `counterfactual = x` when
/// `max_radius` is exhausted.
pub fn growing_spheres(model: &impl Classifier, x: &[f64], params: &SearchParams, cost_fn: CostFn) -> Result<RecourseResult> {
    require_unfavorable(model, x)?;
    params.validate()?;
    let (found, radius, samples) = grow(x, params, |p| (model.probability(p) >= 0.5).then(|| (cost_fn.eval(x, p), p.to_vec())));
    let trace = Trace::Search { radius, samples };
    Ok(match found {
        Some((cost, counterfactual, _)) => RecourseResult {
            counterfactual,
            cost,
            cost_fn,
            valid: true,
            algorithm: Algorithm::GrowingSpheres,
            trace,
            seed: params.seed,
        },
        None => RecourseResult {
            counterfactual: x.to_vec(),
            cost: 0.0,
            cost_fn,
            valid: false,
            algorithm: Algorithm::GrowingSpheres,
            trace,
            seed: params.seed,
        },
    })
}

/// Growing-ball search in the VAE latent space around the encoder mean of `x`.
///
/// Candidates are decoded before classification and costs are measured in
/// input space, so every counterfactual is `vae.decode(latent)` for the latent
/// code stored in the trace.
pub fn cchvae(model: &impl Classifier, vae: &VaeModel, x: &[f64], params: &SearchParams, cost_fn: CostFn) -> Result<RecourseResult> {
    require_unfavorable(model, x)?;
    check_dim(vae.input_dim(), x.len())?;
    params.validate()?;
    let (mean, _) = vae.encode(x)?;
    let (found, radius, samples) = grow(&mean, params, |z| {
        let cand = vae.decode(z).ok()?;
        (model.probability(&cand) >= 0.5).then(|| (cost_fn.eval(x, &cand), cand))
    });
    Ok(match found {
        Some((cost, counterfactual, latent)) => RecourseResult {
            counterfactual,
            cost,
            cost_fn,
            valid: true,
            algorithm: Algorithm::Cchvae,
            trace: Trace::Latent { radius, samples, latent },
            seed: params.seed,
        },
        None => RecourseResult {
            counterfactual: x.to_vec(),
            cost: 0.0,
            cost_fn,
            valid: false,
            algorithm: Algorithm::Cchvae,
            trace: Trace::Latent { radius, samples, latent: mean },
            seed: params.seed,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, standardize, SyntheticSpec};
    use crate::nn::{train_vae, Model, TrainConfig};

    struct AllButOrigin;

    impl Classifier for AllButOrigin {
        fn input_dim(&self) -> usize {
            3
        }
        fn logit(&self, x: &[f64]) -> f64 {
            if x.iter().all(|&v| v == 0.0) {
                -1.0
            } else {
                1.0
            }
        }
    }

    fn first_radius(r: &RecourseResult) -> f64 {
        match r.trace {
            Trace::Search { radius, .. } | Trace::Latent { radius, .. } => radius,
            _ => unreachable!(),
        }
    }

    #[test]
    fn halfspace_cost_is_bounded_by_boundary_and_radius() {
        // Positive iff x1 > 1.
        let m = Model::logistic(&[50.0, 0.0], -50.0).unwrap();
        for seed in 0..10 {
            let params = SearchParams { seed, ..SearchParams::default() };
            let r = growing_spheres(&m, &[0.0, 0.0], &params, CostFn::L1).unwrap();
            assert!(r.valid);
            assert!(r.cost >= 1.0 && r.cost <= first_radius(&r), "{} {}", r.cost, first_radius(&r));
            assert!(m.probability(&r.counterfactual) >= 0.5);
        }
    }

    #[test]
    fn succeeds_at_initial_radius_when_everything_else_is_positive() {
        let r = growing_spheres(&AllButOrigin, &[0.0; 3], &SearchParams::default(), CostFn::L1).unwrap();
        assert!(r.valid);
        assert_eq!(r.trace, Trace::Search { radius: 0.1, samples: 500 });
        assert!(r.cost <= 0.1);
    }

    #[test]
    fn exhausted_radius_is_a_failed_result() {
        let m = Model::logistic(&[1.0, 0.0], -100.0).unwrap();
        let params = SearchParams { max_radius: 1.0, samples_per_radius: 50, ..SearchParams::default() };
        let r = growing_spheres(&m, &[0.0, 0.0], &params, CostFn::L1).unwrap();
        assert!(!r.valid);
        assert_eq!(r.counterfactual, [0.0, 0.0]);
        assert!((first_radius(&r) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn radii_schedule() {
        let p = SearchParams { initial_radius: 0.5, radius_step: 0.25, max_radius: 1.5, ..SearchParams::default() };
        assert_eq!(p.radii().collect::<Vec<_>>(), [0.5, 0.75, 1.0, 1.25, 1.5]);
        assert_eq!(SearchParams::default().radii().count(), 100);
        assert!(SearchParams { samples_per_radius: 0, ..SearchParams::default() }.validate().is_err());
    }

    #[test]
    fn searches_are_deterministic_per_seed() {
        let m = Model::logistic(&[1.0, 1.0, 1.0], -2.0).unwrap();
        let p = SearchParams::default();
        let a = growing_spheres(&m, &[0.0; 3], &p, CostFn::L1).unwrap();
        assert_eq!(a, growing_spheres(&m, &[0.0; 3], &p, CostFn::L1).unwrap());
        let b = growing_spheres(&m, &[0.0; 3], &SearchParams { seed: 1, ..p }, CostFn::L1).unwrap();
        assert_ne!(a.counterfactual, b.counterfactual);
    }

    #[test]
    fn cchvae_counterfactual_is_decoded_latent() {
        let spec = SyntheticSpec::new(4, 100, 3);
        let (data, _) = standardize(&generate_synthetic(&spec).unwrap()).unwrap();
        let vae = train_vae(&data, &TrainConfig { epochs: 30, ..TrainConfig::vae_default() }).unwrap();
        let m = Model::logistic(&[1.0, 1.0, 1.0, 1.0], -0.5).unwrap();
        let x = data.rows().find(|x| m.probability(x) < 0.5).unwrap().to_vec();
        let r = cchvae(&m, &vae, &x, &SearchParams::default(), CostFn::L1).unwrap();
        assert!(r.valid);
        let Trace::Latent { latent, .. } = &r.trace else { unreachable!() };
        assert_eq!(vae.decode(latent).unwrap(), r.counterfactual);
        assert_eq!(r.cost, CostFn::L1.eval(&x, &r.counterfactual));
        assert!(m.probability(&r.counterfactual) >= 0.5);
        assert_eq!(r, cchvae(&m, &vae, &x, &SearchParams::default(), CostFn::L1).unwrap());

        let never = Model::logistic(&[0.0; 4], -1.0).unwrap();
        let small = SearchParams { max_radius: 0.3, samples_per_radius: 20, ..SearchParams::default() };
        assert!(!cchvae(&never, &vae, &x, &small, CostFn::L1).unwrap().valid);
    }
}
