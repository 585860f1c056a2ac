//! Counterfactual recourse generators and their cost functions.
//!
//! Three generators are provided: [`scfe`] (Adam on the recourse objective),
//! [`growing_spheres`] (random search in growing ℓ1 balls around the input)
//! and [`cchvae`] (the same search in a VAE's latent space). All of them are
//! deterministic given their inputs and seed.

mod scfe;
mod search;

use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

pub use scfe::{scfe, ScfeParams};
pub use search::{cchvae, growing_spheres, SearchParams};

use crate::error::{check_dim, Error, Result};
use crate::math::sqrt;
use crate::nn::{Classifier, Differentiable, TrainConfig, VaeModel};
use crate::seed;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostFn {
    #[default]
    L1,
    L2,
}

impl CostFn {
    /// Norm of `b - a`. Lengths must match.
    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        let diffs = a.iter().zip(b).map(|(x, y)| y - x);
        match self {
            CostFn::L1 => diffs.map(f64::abs).sum(),
            CostFn::L2 => sqrt(diffs.map(|v| v * v).sum()),
        }
    }

    /// A subgradient of `b -> cost(a, b)`, taking 0 where the norm is not
    /// differentiable.
    pub fn gradient(self, a: &[f64], b: &[f64], out: &mut [f64]) {
        match self {
            CostFn::L1 => {
                for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
                    let d = y - x;
                    *o = if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                }
            }
            CostFn::L2 => {
                let norm = self.eval(a, b);
                for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
                    *o = if norm > 0.0 { (y - x) / norm } else { 0.0 };
                }
            }
        }
    }
}

/// `c(x, x')` with a dimension check.
pub fn cost(x: &[f64], x_prime: &[f64], cost_fn: CostFn) -> Result<f64> {
    check_dim(x.len(), x_prime.len())?;
    Ok(cost_fn.eval(x, x_prime))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "scfe")]
    Scfe,
    #[serde(rename = "gs")]
    GrowingSpheres,
    #[serde(rename = "cchvae")]
    Cchvae,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Scfe => "scfe",
            Algorithm::GrowingSpheres => "gs",
            Algorithm::Cchvae => "cchvae",
        }
    }
}

/// How a generator arrived at its answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Trace {
    Scfe {
        /// Iteration (within the final attempt) of the returned iterate.
        iterations: usize,
        retries: usize,
        lambda: f64,
        objective: f64,
    },
    Search {
        radius: f64,
        samples: usize,
    },
    Latent {
        radius: f64,
        samples: usize,
        /// Latent code the counterfactual was decoded from.
        latent: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecourseResult {
    pub counterfactual: Vec<f64>,
    pub cost: f64,
    pub cost_fn: CostFn,
    /// `f(counterfactual) >= 0.5`.
    pub valid: bool,
    pub algorithm: Algorithm,
    pub trace: Trace,
    pub seed: u64,
}

pub(crate) fn require_unfavorable(model: &impl Classifier, x: &[f64]) -> Result<()> {
    check_dim(model.input_dim(), x.len())?;
    let p = model.probability(x);
    if p >= 0.5 {
        return Err(Error::AlreadyPositive { probability: p });
    }
    Ok(())
}

pub(crate) fn sample_l1_ball_into(center: &[f64], radius: f64, rng: &mut seed::Rng, out: &mut [f64]) {
    let d = center.len();
    loop {
        let mut total: f64 = Exp1.sample(rng);
        for o in out.iter_mut() {
            let e: f64 = Exp1.sample(rng);
            *o = e;
            total += e;
        }
        for o in out.iter_mut() {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            *o = sign * radius * (*o / total);
        }
        for (o, c) in out.iter_mut().zip(center) {
            *o += c;
        }
        // Rounding can push a point a few ulps outside; redraw it.
        let norm: f64 = out.iter().zip(center).map(|(p, c)| (p - c).abs()).sum();
        if norm <= radius || d == 0 {
            return;
        }
    }
}

/// `count` points drawn uniformly from the ℓ1 ball of `radius` around `center`.
///
/// Uses the Dirichlet construction: `d + 1` unit exponentials normalized by
/// their sum give a uniform point of the simplex; the first `d` coordinates
/// with random signs are uniform in the unit ℓ1 ball.
pub fn uniform_l1_ball_sample(center: &[f64], radius: f64, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid("radius", "must be positive"));
    }
    let mut rng = seed::rng(seed);
    Ok((0..count)
        .map(|_| {
            let mut p = alloc::vec![0.0; center.len()];
            sample_l1_ball_into(center, radius, &mut rng, &mut p);
            p
        })
        .collect())
}

/// Generator choice with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "lowercase", deny_unknown_fields)]
pub enum Method {
    Scfe(ScfeParams),
    #[serde(rename = "gs")]
    GrowingSpheres(SearchParams),
    Cchvae {
        #[serde(default)]
        search: SearchParams,
        /// Training setup for the VAE each model owner fits.
        #[serde(default = "TrainConfig::vae_default")]
        vae: TrainConfig,
    },
}

impl Method {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            Method::Scfe(_) => Algorithm::Scfe,
            Method::GrowingSpheres(_) => Algorithm::GrowingSpheres,
            Method::Cchvae { .. } => Algorithm::Cchvae,
        }
    }

    pub fn needs_vae(&self) -> bool {
        matches!(self, Method::Cchvae { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecourseConfig {
    pub method: Method,
    pub cost: CostFn,
}

impl Default for RecourseConfig {
    /// SCFE with its defaults and the ℓ1 cost.
    fn default() -> Self {
        RecourseConfig { method: Method::Scfe(ScfeParams::default()), cost: CostFn::L1 }
    }
}

impl RecourseConfig {
    /// Run the configured generator for `x`. Search-based methods use `seed`;
    /// CCHVAE requires `vae`.
    pub fn generate<M: Differentiable>(&self, model: &M, vae: Option<&VaeModel>, x: &[f64], seed: u64) -> Result<RecourseResult> {
        match &self.method {
            Method::Scfe(p) => {
                let mut r = scfe(model, x, p, self.cost)?;
                r.seed = seed;
                Ok(r)
            }
            Method::GrowingSpheres(p) => growing_spheres(model, x, &SearchParams { seed, ..*p }, self.cost),
            Method::Cchvae { search, .. } => {
                let vae = vae.ok_or_else(|| Error::invalid("vae", "CCHVAE needs a trained VAE"))?;
                cchvae(model, vae, x, &SearchParams { seed, ..*search }, self.cost)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn cost_values() {
        assert_eq!(cost(&[1.0, 2.0], &[1.0, 2.0], CostFn::L1).unwrap(), 0.0);
        assert_eq!(cost(&[0.0, 0.0], &[1.0, 1.0], CostFn::L1).unwrap(), 2.0);
        assert_eq!(cost(&[0.0, 0.0], &[1.0, 1.0], CostFn::L2).unwrap(), core::f64::consts::SQRT_2);
        assert!(cost(&[0.0], &[1.0, 1.0], CostFn::L2).is_err());
    }

    proptest! {
        #[test]
        fn norm_inequalities(pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..20)) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let l1 = cost(&a, &b, CostFn::L1).unwrap();
            let l2 = cost(&a, &b, CostFn::L2).unwrap();
            let root_d = sqrt(a.len() as f64);
            prop_assert!(l2 <= l1 + 1e-12);
            prop_assert!(l1 <= root_d * l2 + 1e-9);
            prop_assert_eq!(l1, cost(&b, &a, CostFn::L1).unwrap());
        }

        #[test]
        fn triangle_inequality(v in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 1..8)) {
            let a: Vec<f64> = v.iter().map(|t| t.0).collect();
            let b: Vec<f64> = v.iter().map(|t| t.1).collect();
            let c: Vec<f64> = v.iter().map(|t| t.2).collect();
            for f in [CostFn::L1, CostFn::L2] {
                prop_assert!(f.eval(&a, &c) <= f.eval(&a, &b) + f.eval(&b, &c) + 1e-12);
            }
        }
    }

    #[test]
    fn ball_samples_respect_radius() {
        let center = vec![0.3, -1.0, 2.0, 0.0, 5.0];
        for p in uniform_l1_ball_sample(&center, 0.7, 2000, 3).unwrap() {
            assert!(cost(&center, &p, CostFn::L1).unwrap() <= 0.7);
        }
        assert_eq!(uniform_l1_ball_sample(&center, 0.7, 5, 3).unwrap(), uniform_l1_ball_sample(&center, 0.7, 5, 3).unwrap());
        assert!(uniform_l1_ball_sample(&center, 0.0, 5, 3).is_err());
    }

    #[test]
    fn ball_is_uniform_in_one_dimension() {
        // The 1-d ball is an interval, so E|p - c| = r / 2.
        let pts = uniform_l1_ball_sample(&[1.0], 2.0, 100_000, 8).unwrap();
        let mean = pts.iter().map(|p| (p[0] - 1.0).abs()).sum::<f64>() / pts.len() as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
    }

    #[test]
    fn ball_volume_scales_with_radius_squared() {
        let pts = uniform_l1_ball_sample(&[0.0, 0.0], 1.0, 100_000, 9).unwrap();
        let inner = pts.iter().filter(|p| p[0].abs() + p[1].abs() <= 0.5).count() as f64 / pts.len() as f64;
        assert!((inner - 0.25).abs() < 0.02 * 0.25, "{inner}");
    }
}
