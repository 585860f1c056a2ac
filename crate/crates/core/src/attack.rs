//! Membership-inference attacks: counterfactual-distance thresholding, its
//! shadow-model likelihood-ratio variant, and the loss-based baselines.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::math::{exp, ln, normal_cdf, normal_quantile, softplus, sqrt};
use crate::nn::{train_classifier, train_vae, Classifier, Model, TrainConfig, VaeModel};
use crate::recourse::{RecourseConfig, RecourseResult};
use crate::seed;

/// Smallest distance the CFD statistic reports.
pub const CFD_FLOOR: f64 = 1e-12;

/// Variance below which a fit is treated as a point mass.
pub const DEGENERATE_VARIANCE: f64 = 1e-18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Guess {
    #[serde(rename = "MEMBER")]
    Member,
    #[serde(rename = "NON-MEMBER")]
    NonMember,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AttackKind {
    #[serde(rename = "CFD")]
    Cfd,
    #[serde(rename = "CFD-LRT")]
    CfdLrt,
    #[serde(rename = "Loss")]
    Loss,
    #[serde(rename = "Loss-LRT")]
    LossLrt,
}

impl AttackKind {
    pub const ALL: [AttackKind; 4] = [AttackKind::Cfd, AttackKind::CfdLrt, AttackKind::Loss, AttackKind::LossLrt];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Cfd => "CFD",
            AttackKind::CfdLrt => "CFD-LRT",
            AttackKind::Loss => "Loss",
            AttackKind::LossLrt => "Loss-LRT",
        }
    }

    /// Lowercase form used in file names.
    pub fn slug(self) -> &'static str {
        match self {
            AttackKind::Cfd => "cfd",
            AttackKind::CfdLrt => "cfd-lrt",
            AttackKind::Loss => "loss",
            AttackKind::LossLrt => "loss-lrt",
        }
    }

    /// Whether the attack needs shadow models.
    pub fn uses_shadows(self) -> bool {
        matches!(self, AttackKind::CfdLrt | AttackKind::LossLrt)
    }

    /// Whether the attack reads the recourse only (no labels, no model queries).
    pub fn recourse_only(self) -> bool {
        matches!(self, AttackKind::Cfd | AttackKind::CfdLrt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackScore {
    pub point_id: String,
    pub attack: AttackKind,
    pub statistic: f64,
    pub higher_means_member: bool,
}

/// Recourse cost as a membership statistic, floored at [`CFD_FLOOR`].
pub fn cfd_statistic(x: &[f64], recourse: &RecourseResult) -> Result<f64> {
    check_dim(x.len(), recourse.counterfactual.len())?;
    if !recourse.valid {
        return Err(Error::InvalidRecourse);
    }
    Ok(recourse.cost.max(CFD_FLOOR))
}

/// Threshold rule; equality always counts as MEMBER.
pub fn threshold_attack(statistic: f64, tau: f64, higher_means_member: bool) -> Guess {
    let member = if higher_means_member { statistic >= tau } else { statistic <= tau };
    if member {
        Guess::Member
    } else {
        Guess::NonMember
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalFit {
    pub mu: f64,
    pub sigma2: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalFit {
    pub mu: f64,
    pub sigma2: f64,
    pub n: usize,
}

fn mean_and_population_variance(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let (sum, n) = values.clone().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    let mu = sum / n as f64;
    let var = values.map(|v| (mu - v) * (mu - v)).sum::<f64>() / n as f64;
    (mu, var, n)
}

/// Maximum-likelihood log-normal fit: mean and population variance of the logs.
pub fn fit_lognormal_mle(samples: &[f64]) -> Result<LogNormalFit> {
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    if let Some((index, &value)) = samples.iter().enumerate().find(|(_, &v)| !(v > 0.0 && v.is_finite())) {
        return Err(Error::NonPositiveSample { index, value });
    }
    let (mu, sigma2, n) = mean_and_population_variance(samples.iter().map(|&v| ln(v)));
    Ok(LogNormalFit { mu, sigma2, n })
}

/// Maximum-likelihood normal fit with population variance.
pub fn fit_normal_mle(samples: &[f64]) -> Result<NormalFit> {
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("samples", "must be finite"));
    }
    let (mu, sigma2, n) = mean_and_population_variance(samples.iter().copied());
    Ok(NormalFit { mu, sigma2, n })
}

/// `exp(mu + sigma * Φ⁻¹(q))`, or `exp(mu)` for a degenerate fit.
pub fn lognormal_quantile(fit: &LogNormalFit, q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::ProbabilityOutOfRange(q));
    }
    if fit.sigma2 < DEGENERATE_VARIANCE {
        return Ok(exp(fit.mu));
    }
    Ok(exp(fit.mu + sqrt(fit.sigma2) * normal_quantile(q)))
}

/// Shadow-model test on one point.
///
/// Forward: NON-MEMBER iff `t0` exceeds the `1 - alpha` quantile of the
/// fitted OUT distribution. Reversed: MEMBER iff `t0` is below the `alpha`
/// quantile.
pub fn cfd_lrt_decide(t0: f64, fit: &LogNormalFit, alpha: f64, reverse: bool) -> Result<Guess> {
    Ok(if reverse {
        if t0 < lognormal_quantile(fit, alpha)? {
            Guess::Member
        } else {
            Guess::NonMember
        }
    } else if t0 > lognormal_quantile(fit, 1.0 - alpha)? {
        Guess::NonMember
    } else {
        Guess::Member
    })
}

fn standardized_cdf(value: f64, mu: f64, sigma2: f64) -> f64 {
    if sigma2 < DEGENERATE_VARIANCE {
        return match value.partial_cmp(&mu) {
            Some(core::cmp::Ordering::Greater) => 1.0,
            Some(core::cmp::Ordering::Less) => 0.0,
            _ => 0.5,
        };
    }
    normal_cdf((value - mu) / sqrt(sigma2))
}

/// OUT-distribution CDF at `t0`: `Φ((ln t0 - mu) / sigma)`.
pub fn cfd_lrt_score(t0: f64, fit: &LogNormalFit) -> Result<f64> {
    if !(t0 > 0.0 && t0.is_finite()) {
        return Err(Error::NonPositiveSample { index: 0, value: t0 });
    }
    Ok(standardized_cdf(ln(t0), fit.mu, fit.sigma2))
}

/// `Φ((conf - mu) / sigma)` against the OUT confidences.
pub fn loss_lrt_score(conf: f64, out_fit: &NormalFit) -> f64 {
    standardized_cdf(conf, out_fit.mu, out_fit.sigma2)
}

/// Clamped cross-entropy of the model on `(x, y)`; lower means member.
pub fn loss_attack_score(model: &Model, x: &[f64], y: u8) -> Result<f64> {
    model.bce_loss(x, y)
}

/// `softplus(-conf)`, the loss implied by a logit confidence.
pub fn loss_from_confidence(conf: f64) -> f64 {
    softplus(-conf)
}

/// `ln pdf_in(t0) - ln pdf_out(t0)` for two log-normal fits.
///
/// Variances are floored at 1e-12 so point-mass fits stay finite.
pub fn two_sided_llr(t0: f64, in_fit: &LogNormalFit, out_fit: &LogNormalFit) -> f64 {
    let l = ln(t0);
    let log_pdf = |f: &LogNormalFit| {
        let v = f.sigma2.max(1e-12);
        -0.5 * ln(v) - (l - f.mu) * (l - f.mu) / (2.0 * v)
    };
    log_pdf(in_fit) - log_pdf(out_fit)
}

#[derive(Debug, Clone)]
pub struct ShadowMember {
    pub model: Model,
    /// Present when the recourse method searches a latent space.
    pub vae: Option<VaeModel>,
    /// Rows of the shadow pool this member trained on.
    pub rows: Vec<usize>,
}

/// Shadow models trained once and reused for every evaluation point.
#[derive(Debug, Clone)]
pub struct ShadowEnsemble {
    pub members: Vec<ShadowMember>,
    pub architecture: Vec<usize>,
    pub trainer_config: TrainConfig,
    pub recourse_config: RecourseConfig,
    pub seed: u64,
}

/// Per-point outcome of querying every shadow member.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowDistances {
    pub distances: Vec<f64>,
    /// Members that already classify the point positively.
    pub skipped_positive: usize,
    /// Members whose recourse search failed.
    pub failed: usize,
}

/// Train shadow member `i` on a uniform half of `pool`.
///
/// The subsample, classifier and VAE seeds are all derived from `(seed, i)`.
pub fn train_shadow_member(
    pool: &Dataset,
    architecture: &[usize],
    trainer_config: &TrainConfig,
    recourse_config: &RecourseConfig,
    seed: u64,
    i: usize,
) -> Result<ShadowMember> {
    let half = pool.n() / 2;
    if half == 0 {
        return Err(Error::Empty("shadow pool"));
    }
    let mut rng = seed::rng(seed::derive(seed, "shadow-subsample", i as u64));
    let mut rows = index::sample(&mut rng, pool.n(), half).into_vec();
    rows.sort_unstable();
    let data = pool.subset(&rows);
    let cfg = trainer_config.clone().with_seed(seed::derive(seed, "shadow-train", i as u64));
    let model = train_classifier(&data, architecture, &cfg)?;
    let vae = match &recourse_config.method {
        crate::recourse::Method::Cchvae { vae, .. } => {
            Some(train_vae(&data, &vae.clone().with_seed(seed::derive(seed, "shadow-vae", i as u64)))?)
        }
        _ => None,
    };
    Ok(ShadowMember { model, vae, rows })
}

impl ShadowEnsemble {
    pub fn from_members(
        members: Vec<ShadowMember>,
        architecture: Vec<usize>,
        trainer_config: TrainConfig,
        recourse_config: RecourseConfig,
        seed: u64,
    ) -> Self {
        ShadowEnsemble { members, architecture, trainer_config, recourse_config, seed }
    }

    /// Train `n` members one after another.
    pub fn train(
        pool: &Dataset,
        n: usize,
        architecture: &[usize],
        trainer_config: &TrainConfig,
        recourse_config: &RecourseConfig,
        seed: u64,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n_shadows", "must be at least 1"));
        }
        let members = (0..n)
            .map(|i| train_shadow_member(pool, architecture, trainer_config, recourse_config, seed, i))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_members(members, architecture.to_vec(), trainer_config.clone(), recourse_config.clone(), seed))
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Recourse for `x` under member `i`; `None` when the member already
    /// classifies `x` positively.
    pub fn recourse_from(&self, i: usize, x: &[f64], point_seed: u64) -> Result<Option<RecourseResult>> {
        let m = &self.members[i];
        check_dim(m.model.input_dim(), x.len())?;
        if m.model.probability(x) >= 0.5 {
            return Ok(None);
        }
        let s = seed::derive(point_seed, "shadow-recourse", i as u64);
        self.recourse_config.generate(&m.model, m.vae.as_ref(), x, s).map(Some)
    }

    /// Logit confidence of every member on `(x, y)`.
    pub fn confidences(&self, x: &[f64], y: u8) -> Result<Vec<f64>> {
        self.members.iter().map(|m| m.model.logit_confidence(x, y)).collect()
    }
}

/// Counterfactual distances of `x` under each shadow member.
///
/// Members that classify `x` positively or fail to find a recourse are
/// skipped; fewer than two surviving distances is an error.
pub fn build_shadow_distances(x: &[f64], ensemble: &ShadowEnsemble, point_seed: u64) -> Result<ShadowDistances> {
    let mut out = ShadowDistances { distances: Vec::with_capacity(ensemble.len()), skipped_positive: 0, failed: 0 };
    for i in 0..ensemble.len() {
        match ensemble.recourse_from(i, x, point_seed)? {
            None => out.skipped_positive += 1,
            Some(r) if !r.valid => out.failed += 1,
            Some(r) => out.distances.push(cfd_statistic(x, &r)?),
        }
    }
    if out.distances.len() < 2 {
        return Err(Error::TooFewShadowSamples { got: out.distances.len() });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::recourse::{CostFn, Method, SearchParams};
    use alloc::vec;
    use core::f64::consts::E;
    use rand::Rng;
    use rand_distr::{Distribution, LogNormal};

    fn fit(mu: f64, sigma2: f64) -> LogNormalFit {
        LogNormalFit { mu, sigma2, n: 10 }
    }

    #[test]
    fn cfd_statistic_passes_cost_through() {
        let mut r = RecourseResult {
            counterfactual: vec![2.0, 0.0],
            cost: 2.0,
            cost_fn: CostFn::L1,
            valid: true,
            algorithm: crate::recourse::Algorithm::GrowingSpheres,
            trace: crate::recourse::Trace::Search { radius: 2.0, samples: 1 },
            seed: 0,
        };
        assert_eq!(cfd_statistic(&[0.0, 0.0], &r).unwrap(), 2.0);
        assert_eq!(cfd_statistic(&[0.0, 0.0], &r).unwrap(), CostFn::L1.eval(&[0.0, 0.0], &r.counterfactual));
        r.cost = 0.0;
        assert_eq!(cfd_statistic(&[0.0, 0.0], &r).unwrap(), 1e-12);
        r.valid = false;
        assert_eq!(cfd_statistic(&[0.0, 0.0], &r), Err(Error::InvalidRecourse));
    }

    #[test]
    fn threshold_rules() {
        assert_eq!(threshold_attack(5.0, 3.0, true), Guess::Member);
        assert_eq!(threshold_attack(3.0, 3.0, false), Guess::Member);
        assert_eq!(threshold_attack(3.0, 3.0, true), Guess::Member);
        assert_eq!(threshold_attack(2.0, 3.0, true), Guess::NonMember);
        assert_eq!(threshold_attack(4.0, 3.0, false), Guess::NonMember);
    }

    #[test]
    fn lognormal_fits() {
        let f = fit_lognormal_mle(&[E, E, E]).unwrap();
        assert!((f.mu - 1.0).abs() < 1e-15 && f.sigma2 < 1e-30);
        assert_eq!(fit_lognormal_mle(&[1.0]).unwrap(), LogNormalFit { mu: 0.0, sigma2: 0.0, n: 1 });
        let f = fit_lognormal_mle(&[1.0, E * E]).unwrap();
        assert!((f.mu - 1.0).abs() < 1e-15 && (f.sigma2 - 1.0).abs() < 1e-15);
        assert_eq!(fit_lognormal_mle(&[1.0, 0.0]), Err(Error::NonPositiveSample { index: 1, value: 0.0 }));
        assert!(fit_lognormal_mle(&[]).is_err());
    }

    #[test]
    fn quantiles() {
        assert_eq!(lognormal_quantile(&fit(0.0, 3.0), 0.5).unwrap(), 1.0);
        assert!((lognormal_quantile(&fit(0.0, 1.0), 0.975).unwrap() - 7.099_071_384_231_335).abs() < 1e-9);
        assert!((lognormal_quantile(&fit(1.0, 0.0), 0.99).unwrap() - E).abs() < 1e-15);
        assert!(lognormal_quantile(&fit(0.0, 1.0), 1.0).is_err());
        let mut prev = 0.0;
        for k in 1..100 {
            let q = lognormal_quantile(&fit(0.3, 0.7), k as f64 / 100.0).unwrap();
            assert!(q >= prev);
            prev = q;
        }
    }

    #[test]
    fn fitted_quantiles_cover_their_samples() {
        let mut rng = seed::rng(21);
        let dist = LogNormal::new(0.4, 0.8).unwrap();
        let draws: Vec<f64> = (0..10_000).map(|_| dist.sample(&mut rng)).collect();
        let f = fit_lognormal_mle(&draws).unwrap();
        for q in [0.05, 0.25, 0.5, 0.75, 0.95] {
            let z = lognormal_quantile(&f, q).unwrap();
            let frac = draws.iter().filter(|&&v| v < z).count() as f64 / draws.len() as f64;
            assert!((frac - q).abs() < 0.02, "{q} {frac}");
        }
    }

    #[test]
    fn degenerate_decisions() {
        let f = fit(1.0, 0.0);
        for alpha in [0.01, 0.1, 0.5] {
            assert_eq!(cfd_lrt_decide(E + 0.1, &f, alpha, false).unwrap(), Guess::NonMember);
            assert_eq!(cfd_lrt_decide(E - 0.1, &f, alpha, false).unwrap(), Guess::Member);
            assert_eq!(cfd_lrt_decide(E - 0.1, &f, alpha, true).unwrap(), Guess::Member);
            assert_eq!(cfd_lrt_decide(E + 0.1, &f, alpha, true).unwrap(), Guess::NonMember);
        }
        assert_eq!(cfd_lrt_score(E + 0.1, &f).unwrap(), 1.0);
        assert_eq!(cfd_lrt_score(E - 0.1, &f).unwrap(), 0.0);
        assert_eq!(cfd_lrt_score(1.0, &fit(0.0, 0.0)).unwrap(), 0.5);
    }

    #[test]
    fn scores() {
        assert_eq!(cfd_lrt_score(exp(0.7), &fit(0.7, 2.0)).unwrap(), 0.5);
        assert!((cfd_lrt_score(E, &fit(0.0, 1.0)).unwrap() - 0.841_344_746_068_542_9).abs() < 1e-12);
        let n = NormalFit { mu: 0.0, sigma2: 4.0, n: 5 };
        assert!((loss_lrt_score(2.0, &n) - 0.841_344_746_068_542_9).abs() < 1e-12);
        assert_eq!(loss_lrt_score(0.0, &n), 0.5);
        let mut prev = 0.0;
        for k in -50..50 {
            let s = loss_lrt_score(k as f64 * 0.2, &n);
            assert!(s >= prev);
            prev = s;
        }
        assert!(cfd_lrt_score(0.0, &fit(0.0, 1.0)).is_err());
    }

    #[test]
    fn score_threshold_reproduces_decisions() {
        let mut rng = seed::rng(77);
        for _ in 0..100 {
            let f = fit(rng.random_range(-2.0..2.0), rng.random_range(0.01..3.0));
            let t0 = exp(rng.random_range(-4.0..4.0));
            let alpha = rng.random_range(0.001..0.5);
            let member = cfd_lrt_score(t0, &f).unwrap() <= 1.0 - alpha;
            assert_eq!(cfd_lrt_decide(t0, &f, alpha, false).unwrap() == Guess::Member, member);
        }
    }

    #[test]
    fn loss_statistics() {
        let m = Model::logistic(&[1.0, 0.0], 0.0).unwrap();
        assert!((loss_attack_score(&m, &[0.0, 0.0], 1).unwrap() - core::f64::consts::LN_2).abs() < 1e-15);
        let sure = Model::logistic(&[100.0], 0.0).unwrap();
        assert!(loss_attack_score(&sure, &[1.0], 1).unwrap() < 1e-6);
        for x in [-3.0, -0.5, 0.0, 0.4, 2.5] {
            for y in [0u8, 1] {
                let conf = m.logit_confidence(&[x, 0.0], y).unwrap();
                assert!((loss_attack_score(&m, &[x, 0.0], y).unwrap() - loss_from_confidence(conf)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn two_sided_llr_prefers_closer_fit() {
        let a = fit(0.0, 1.0);
        let b = fit(2.0, 1.0);
        assert!(two_sided_llr(1.0, &a, &b) > 0.0);
        assert!(two_sided_llr(exp(2.0), &a, &b) < 0.0);
        assert!((two_sided_llr(E, &a, &b)).abs() < 1e-12);
    }

    fn small_ensemble(method: Method, seed: u64) -> (Dataset, ShadowEnsemble) {
        let mut spec = SyntheticSpec::new(3, 100, 5);
        spec.class_separation = 1.0;
        let pool = generate_synthetic(&spec).unwrap();
        let cfg = TrainConfig { learning_rate: 0.05, epochs: 40, ..TrainConfig::default() };
        let rc = RecourseConfig { method, cost: CostFn::L1 };
        let e = ShadowEnsemble::train(&pool, 8, &[], &cfg, &rc, seed).unwrap();
        (pool, e)
    }

    #[test]
    fn shadow_distances_are_deterministic() {
        let (_, e) = small_ensemble(Method::GrowingSpheres(SearchParams::default()), 3);
        let x = [-1.0, -1.0, -1.0];
        let a = build_shadow_distances(&x, &e, 42).unwrap();
        assert!(a.distances.len() <= 8 && a.distances.len() + a.skipped_positive + a.failed == 8);
        assert!(a.distances.iter().all(|&d| d > 0.0));
        assert_eq!(a, build_shadow_distances(&x, &e, 42).unwrap());
        let (_, e2) = small_ensemble(Method::GrowingSpheres(SearchParams::default()), 3);
        assert_eq!(a, build_shadow_distances(&x, &e2, 42).unwrap());
        for m in &e.members {
            assert_eq!(m.rows.len(), 100);
        }
    }

    #[test]
    fn halfspace_shadows_match_their_boundaries() {
        // Each member is a steep halfspace w.x + b = 0; the ℓ1 boundary
        // distance from x is |w.x + b| / max|w_i|.
        let mut rng = seed::rng(12);
        let members: Vec<ShadowMember> = (0..6)
            .map(|_| {
                let w = [rng.random_range(0.5..1.5) * 40.0, rng.random_range(-0.5..0.5) * 40.0];
                let b = rng.random_range(1.0..2.0) * 40.0;
                ShadowMember { model: Model::logistic(&w, -b).unwrap(), vae: None, rows: vec![] }
            })
            .collect();
        let oracle: Vec<f64> = members
            .iter()
            .map(|m| {
                let p = m.model.params();
                p[2].abs() / p[0].abs().max(p[1].abs())
            })
            .collect();
        let rc = RecourseConfig { method: Method::GrowingSpheres(SearchParams::default()), cost: CostFn::L1 };
        let e = ShadowEnsemble::from_members(members, vec![], TrainConfig::default(), rc, 0);
        let d = build_shadow_distances(&[0.0, 0.0], &e, 9).unwrap();
        assert_eq!(d.distances.len(), 6);
        for (got, want) in d.distances.iter().zip(oracle) {
            assert!(*got >= want - 1e-12 && *got <= 1.5 * want, "{got} vs {want}");
        }
    }

    #[test]
    fn too_few_shadow_samples() {
        let members = vec![ShadowMember { model: Model::logistic(&[1.0], 0.0).unwrap(), vae: None, rows: vec![] }];
        let rc = RecourseConfig { method: Method::GrowingSpheres(SearchParams::default()), cost: CostFn::L1 };
        let e = ShadowEnsemble::from_members(members, vec![], TrainConfig::default(), rc, 0);
        assert_eq!(build_shadow_distances(&[-1.0], &e, 0), Err(Error::TooFewShadowSamples { got: 1 }));
        assert_eq!(build_shadow_distances(&[1.0], &e, 0), Err(Error::TooFewShadowSamples { got: 0 }));
    }
}
