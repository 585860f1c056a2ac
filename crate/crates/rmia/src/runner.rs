//! The recourse membership-inference game end to end: data, owner model,
//! game sampling, recourses, shadow ensembles, attacks, metrics and reports.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use rayon::prelude::*;
use rmia_core::attack::{
    build_shadow_distances, cfd_lrt_decide, cfd_lrt_score, cfd_statistic, fit_lognormal_mle, fit_normal_mle, loss_lrt_score,
    threshold_attack, train_shadow_member, AttackKind, Guess, LogNormalFit, ShadowEnsemble,
};
use rmia_core::data::{generate_synthetic, split, standardize, Dataset, ScalerParams, SplitBundle, SyntheticSpec};
use rmia_core::metrics::{alpha_key, roc, threshold_at_fpr, MetricsReport, RocCurve};
use rmia_core::nn::{train_classifier, train_vae, Classifier, Differentiable, Model, VaeModel};
use rmia_core::recourse::{Algorithm, Method, RecourseResult};
use rmia_core::seed::derive;
use serde::{Deserialize, Serialize};

use crate::config::{DataConfig, ExperimentConfig};
use crate::error::{Error, Result, StageExt};
use crate::io::{export_log_roc, write_jsonl, ScoreRecord};

pub const SCHEMA_VERSION: u32 = 1;

/// Summary CSV header.
pub const SUMMARY_HEADER: &str = "experiment_id,attack,direction,auc,ba,tpr_at_0.1,tpr_at_0.01";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// The attack's declared direction.
    Forward,
    Reversed,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Reversed => "reversed",
        }
    }
}

/// Owner model wrapper that counts every query it answers.
pub struct QueryCounter<'a> {
    model: &'a Model,
    count: AtomicU64,
}

impl<'a> QueryCounter<'a> {
    pub fn new(model: &'a Model) -> Self {
        QueryCounter { model, count: AtomicU64::new(0) }
    }

    pub fn queries(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }

    fn tick(&self) {
        self.count.fetch_add(1, Ordering::Relaxed);
    }

    pub fn bce_loss(&self, x: &[f64], y: u8) -> rmia_core::Result<f64> {
        self.tick();
        self.model.bce_loss(x, y)
    }

    pub fn logit_confidence(&self, x: &[f64], y: u8) -> rmia_core::Result<f64> {
        self.tick();
        self.model.logit_confidence(x, y)
    }
}

impl Classifier for QueryCounter<'_> {
    fn input_dim(&self) -> usize {
        self.model.input_dim()
    }
    fn logit(&self, x: &[f64]) -> f64 {
        self.tick();
        self.model.logit(x)
    }
}

impl Differentiable for QueryCounter<'_> {
    fn logit_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.tick();
        self.model.logit_grad(x, grad)
    }
}

/// Everything the owner side of the game needs.
pub struct Prepared {
    pub config: ExperimentConfig,
    pub data: Dataset,
    pub scaler: Option<ScalerParams>,
    pub split: SplitBundle,
    pub owner: Model,
    pub owner_vae: Option<VaeModel>,
    pub test_accuracy: f64,
}

/// Generate or load the configured data and standardize it if asked.
pub fn load_data(config: &ExperimentConfig) -> Result<(Dataset, Option<ScalerParams>)> {
    let (raw, standardize_it) = match &config.data {
        DataConfig::Synthetic { d, n_per_class, class_separation, standardize } => {
            let n = n_per_class.unwrap_or_else(|| config.split.total().div_ceil(2));
            let spec = SyntheticSpec { d: *d, n_per_class: n, seed: derive(config.seed, "data", 0), class_separation: *class_separation };
            (generate_synthetic(&spec).stage("data")?, *standardize)
        }
        DataConfig::File { path, label_column, label_rule, standardize } => {
            (crate::io::load_tabular(path, label_column, *label_rule)?, *standardize)
        }
    };
    if standardize_it {
        let (scaled, params) = standardize(&raw).stage("data")?;
        Ok((scaled, Some(params)))
    } else {
        Ok((raw, None))
    }
}

/// Train the owner classifier and, for latent-space recourse, its VAE.
pub fn train_owner(config: &ExperimentConfig, train: &Dataset) -> Result<(Model, Option<VaeModel>)> {
    let cfg = config.model.train.clone().with_seed(derive(config.seed, "owner", 0));
    let model = train_classifier(train, &config.model.architecture, &cfg).stage("owner training")?;
    let vae = match &config.recourse.method {
        Method::Cchvae { vae, .. } => {
            Some(train_vae(train, &vae.clone().with_seed(derive(config.seed, "owner-vae", 0))).stage("owner vae training")?)
        }
        _ => None,
    };
    Ok((model, vae))
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let (data, scaler) = load_data(config)?;
    let s = &config.split;
    let bundle = split(&data, s.owner_n, s.shadow_n, s.eval_out_n, derive(config.seed, "split", 0)).stage("split")?;
    assert_disjoint(&bundle);
    let (owner, owner_vae) = train_owner(config, &bundle.owner_train)?;
    let mut owner = owner;
    let test_accuracy = owner.accuracy(&bundle.eval_out).stage("owner evaluation")?;
    owner.meta.test_accuracy = Some(test_accuracy);
    Ok(Prepared { config: config.clone(), data, scaler, split: bundle, owner, owner_vae, test_accuracy })
}

fn assert_disjoint(bundle: &SplitBundle) {
    let mut seen = std::collections::HashSet::new();
    for r in bundle.owner_rows.iter().chain(&bundle.shadow_rows).chain(&bundle.eval_out_rows) {
        assert!(seen.insert(*r), "split row {r} appears in more than one part");
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameSample {
    pub point_id: String,
    pub point: Vec<f64>,
    /// True label, used only by the loss baselines.
    pub label: u8,
    pub membership: Guess,
    pub recourse: RecourseResult,
}

impl GameSample {
    pub fn is_member(&self) -> bool {
        self.membership == Guess::Member
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameSummary {
    pub candidates_in: usize,
    pub candidates_out: usize,
    pub drawn_per_side: usize,
    pub valid_in: usize,
    pub valid_out: usize,
    pub failed_in: usize,
    pub failed_out: usize,
    /// Set when recourse failures leave the classes more than 10% apart.
    pub imbalance_flagged: bool,
}

#[derive(Debug, Clone)]
pub struct GameOutcome {
    /// Samples with a valid recourse, members first.
    pub samples: Vec<GameSample>,
    pub summary: GameSummary,
}

/// Draw the game's points and issue one recourse each.
///
/// MEMBER points come from the owner's training set and NON-MEMBER points
/// from held-out data, both restricted to points the owner classifies
/// negatively.
pub fn play_game_with(prep: &Prepared, owner: &QueryCounter<'_>) -> Result<GameOutcome> {
    let cfg = &prep.config;
    let negative = |data: &Dataset, rows: &mut dyn Iterator<Item = usize>| -> Vec<usize> {
        rows.filter(|&i| owner.probability(data.row(i)) < 0.5).collect()
    };
    let mut cand_in = negative(&prep.split.owner_train, &mut prep.split.eval_in.iter().copied());
    let mut cand_out = negative(&prep.split.eval_out, &mut (0..prep.split.eval_out.n()));
    let available = cand_in.len().min(cand_out.len());
    let n = cfg.game.n_per_side.unwrap_or(available);
    if n == 0 || n > available {
        return Err(Error::Game {
            candidates_in: cand_in.len(),
            candidates_out: cand_out.len(),
            reason: format!("need {} negatively classified points per side", n.max(1)),
        });
    }
    use rand::seq::SliceRandom;
    cand_in.shuffle(&mut rmia_core::seed::rng(derive(cfg.seed, "game", 0)));
    cand_out.shuffle(&mut rmia_core::seed::rng(derive(cfg.seed, "game", 1)));
    let (candidates_in, candidates_out) = (cand_in.len(), cand_out.len());
    cand_in.truncate(n);
    cand_out.truncate(n);

    let picks: Vec<(String, &[f64], u8, Guess)> = cand_in
        .iter()
        .map(|&i| (format!("in-{i}"), prep.split.owner_train.row(i), prep.split.owner_train.label(i), Guess::Member))
        .chain(cand_out.iter().map(|&i| (format!("out-{i}"), prep.split.eval_out.row(i), prep.split.eval_out.label(i), Guess::NonMember)))
        .collect();

    let recourses: Vec<RecourseResult> = picks
        .par_iter()
        .enumerate()
        .map(|(k, (_, x, _, _))| cfg.recourse.generate(owner, prep.owner_vae.as_ref(), x, derive(cfg.seed, "recourse", k as u64)))
        .collect::<rmia_core::Result<_>>()
        .stage("recourse")?;

    let mut samples = Vec::with_capacity(picks.len());
    let (mut failed_in, mut failed_out) = (0, 0);
    for ((point_id, x, label, membership), recourse) in picks.into_iter().zip(recourses) {
        if !recourse.valid {
            match membership {
                Guess::Member => failed_in += 1,
                Guess::NonMember => failed_out += 1,
            }
            continue;
        }
        samples.push(GameSample { point_id, point: x.to_vec(), label, membership, recourse });
    }
    let (valid_in, valid_out) = (n - failed_in, n - failed_out);
    let larger = valid_in.max(valid_out).max(1) as f64;
    let imbalance_flagged = (valid_in as f64 - valid_out as f64).abs() / larger > 0.1;
    if valid_in == 0 || valid_out == 0 {
        return Err(Error::Game {
            candidates_in,
            candidates_out,
            reason: format!("no valid recourses left on one side ({valid_in} members, {valid_out} non-members)"),
        });
    }
    Ok(GameOutcome {
        samples,
        summary: GameSummary {
            candidates_in,
            candidates_out,
            drawn_per_side: n,
            valid_in,
            valid_out,
            failed_in,
            failed_out,
            imbalance_flagged,
        },
    })
}

/// Prepare the owner side from `config` and play the game.
pub fn play_game(config: &ExperimentConfig) -> Result<GameOutcome> {
    let prep = prepare(config)?;
    let owner = QueryCounter::new(&prep.owner);
    play_game_with(&prep, &owner)
}

/// Train the adversary's shadow ensemble on the shadow pool, one task per member.
pub fn train_shadows(config: &ExperimentConfig, pool: &Dataset) -> Result<ShadowEnsemble> {
    let seed = derive(config.seed, "shadows", 0);
    let members = (0..config.attack.n_shadows)
        .into_par_iter()
        .map(|i| train_shadow_member(pool, &config.model.architecture, &config.model.train, &config.recourse, seed, i))
        .collect::<rmia_core::Result<Vec<_>>>()
        .stage("shadow training")?;
    Ok(ShadowEnsemble::from_members(
        members,
        config.model.architecture.clone(),
        config.model.train.clone(),
        config.recourse.clone(),
        seed,
    ))
}

/// Per-point attack output before direction handling.
#[derive(Debug, Clone)]
pub struct PointScore {
    pub sample: usize,
    pub statistic: f64,
    /// Value ranked in the attack's declared direction.
    pub score: f64,
    /// CFD-LRT only: the OUT fit behind `score`.
    pub fit: Option<LogNormalFit>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ShadowSummary {
    pub n_models: usize,
    /// Shadow recourse queries skipped because the member classified the point positively.
    pub skipped_positive: usize,
    pub failed: usize,
    /// Points left out of CFD-LRT for lack of two shadow distances.
    pub points_without_lrt: usize,
}

/// CFD: the recourse cost itself. Reads only the recourses.
pub fn cfd_scores(samples: &[GameSample]) -> Result<Vec<PointScore>> {
    samples
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let t = cfd_statistic(&s.point, &s.recourse).stage("CFD")?;
            Ok(PointScore { sample: k, statistic: t, score: t, fit: None })
        })
        .collect()
}

/// CFD-LRT: each point's distance against a log-normal fit of its shadow
/// distances. Reads only the recourses and the shadow ensemble.
pub fn cfd_lrt_scores(samples: &[GameSample], ensemble: &ShadowEnsemble, seed: u64) -> Result<(Vec<PointScore>, ShadowSummary)> {
    let per_point: Vec<rmia_core::Result<Option<(PointScore, usize, usize)>>> = samples
        .par_iter()
        .enumerate()
        .map(|(k, s)| {
            let t0 = cfd_statistic(&s.point, &s.recourse)?;
            match build_shadow_distances(&s.point, ensemble, derive(seed, "shadow-point", k as u64)) {
                Ok(d) => {
                    let fit = fit_lognormal_mle(&d.distances)?;
                    let score = cfd_lrt_score(t0, &fit)?;
                    Ok(Some((PointScore { sample: k, statistic: t0, score, fit: Some(fit) }, d.skipped_positive, d.failed)))
                }
                Err(rmia_core::Error::TooFewShadowSamples { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut scores = Vec::new();
    let mut summary = ShadowSummary { n_models: ensemble.len(), ..ShadowSummary::default() };
    for r in per_point {
        match r.stage("CFD-LRT")? {
            Some((p, skipped, failed)) => {
                summary.skipped_positive += skipped;
                summary.failed += failed;
                scores.push(p);
            }
            None => summary.points_without_lrt += 1,
        }
    }
    Ok((scores, summary))
}

/// Loss baseline: cross-entropy of the owner model on the true label.
pub fn loss_scores(samples: &[GameSample], owner: &QueryCounter<'_>) -> Result<Vec<PointScore>> {
    samples
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let l = owner.bce_loss(&s.point, s.label).stage("Loss")?;
            Ok(PointScore { sample: k, statistic: l, score: l, fit: None })
        })
        .collect()
}

/// Offline Loss-LRT: owner confidence against a normal fit of the shadow
/// models' confidences on the same point.
pub fn loss_lrt_scores(samples: &[GameSample], owner: &QueryCounter<'_>, ensemble: &ShadowEnsemble) -> Result<Vec<PointScore>> {
    samples
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let conf = owner.logit_confidence(&s.point, s.label).stage("Loss-LRT")?;
            let out = ensemble.confidences(&s.point, s.label).stage("Loss-LRT")?;
            let fit = fit_normal_mle(&out).stage("Loss-LRT")?;
            Ok(PointScore { sample: k, statistic: conf, score: loss_lrt_score(conf, &fit), fit: None })
        })
        .collect()
}

/// Declared direction of each attack: CFD statistics grow with membership,
/// losses shrink.
pub fn declared_higher_means_member(kind: AttackKind) -> bool {
    kind != AttackKind::Loss
}

/// Direction each attack is conventionally read in for a given recourse algorithm.
pub fn conventional_direction(kind: AttackKind, algorithm: Algorithm) -> Direction {
    if algorithm == Algorithm::Cchvae && kind.recourse_only() {
        Direction::Reversed
    } else {
        Direction::Forward
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub attack: AttackKind,
    pub direction: Direction,
    /// Whether larger raw scores were ranked as MEMBER.
    pub higher_means_member: bool,
    pub conventional: bool,
    /// Max-AUC direction for this attack.
    pub selected: bool,
    pub n_member: usize,
    pub n_non_member: usize,
    pub metrics: MetricsReport,
    #[serde(skip)]
    pub curve: Option<RocCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub architecture: Vec<usize>,
    pub n_params: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub final_train_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QuerySummary {
    pub game_and_recourse: u64,
    /// Always 0: enforced at run time.
    pub recourse_only_attacks: u64,
    pub loss_attacks: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub version: String,
    pub experiment_id: String,
    pub config: ExperimentConfig,
    pub model: ModelSummary,
    pub game: GameSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shadows: Option<ShadowSummary>,
    pub owner_queries: QuerySummary,
    pub attacks: Vec<AttackReport>,
    pub timing_seconds: BTreeMap<String, f64>,
}

impl ExperimentReport {
    pub fn attack(&self, kind: AttackKind, direction: Direction) -> Option<&AttackReport> {
        self.attacks.iter().find(|a| a.attack == kind && a.direction == direction)
    }

    /// Report for the max-AUC direction of `kind`.
    pub fn selected(&self, kind: AttackKind) -> Option<&AttackReport> {
        self.attacks.iter().find(|a| a.attack == kind && a.selected)
    }
}

/// A finished run: the report plus its per-point score records.
pub struct RunOutput {
    pub report: ExperimentReport,
    pub records: Vec<ScoreRecord>,
    pub game: GameOutcome,
}

/// Per-direction metrics and score records for one attack.
fn evaluate_attack(
    kind: AttackKind,
    scores: &[PointScore],
    samples: &[GameSample],
    alphas: &[f64],
    algorithm: Algorithm,
) -> Result<(Vec<AttackReport>, Vec<ScoreRecord>)> {
    let membership: Vec<bool> = scores.iter().map(|p| samples[p.sample].is_member()).collect();
    let declared = declared_higher_means_member(kind);
    let mut reports = Vec::new();
    let mut records = Vec::new();
    for direction in [Direction::Forward, Direction::Reversed] {
        let higher = if direction == Direction::Forward { declared } else { !declared };
        let raw: Vec<f64> = scores.iter().map(|p| p.score).collect();
        let curve = roc(&raw, &membership, higher).stage(kind.name())?;
        let metrics = MetricsReport::from_curve(&curve, alphas).stage(kind.name())?;

        let mut guesses: Vec<BTreeMap<String, Guess>> = vec![BTreeMap::new(); scores.len()];
        for &alpha in alphas {
            let key = alpha_key(alpha);
            let tau = threshold_at_fpr(&raw, &membership, higher, alpha).stage(kind.name())?;
            for (g, p) in guesses.iter_mut().zip(scores) {
                let guess = match (kind, direction) {
                    (AttackKind::CfdLrt, Direction::Forward) => {
                        if p.score >= 1.0 - alpha {
                            Guess::Member
                        } else {
                            Guess::NonMember
                        }
                    }
                    (AttackKind::CfdLrt, Direction::Reversed) => {
                        cfd_lrt_decide(p.statistic, p.fit.as_ref().expect("CFD-LRT scores carry fits"), alpha, true).stage("CFD-LRT")?
                    }
                    _ => threshold_attack(p.score, tau, higher),
                };
                g.insert(key.clone(), guess);
            }
        }
        for (p, guess_at) in scores.iter().zip(guesses) {
            records.push(ScoreRecord {
                point_id: samples[p.sample].point_id.clone(),
                attack: kind,
                statistic: p.statistic,
                score: if higher { p.score } else { -p.score },
                direction,
                guess_at,
            });
        }
        reports.push(AttackReport {
            attack: kind,
            direction,
            higher_means_member: higher,
            conventional: conventional_direction(kind, algorithm) == direction,
            selected: false,
            n_member: curve.n_pos,
            n_non_member: curve.n_neg,
            metrics,
            curve: Some(curve),
        });
    }
    let best = if reports[1].metrics.auc > reports[0].metrics.auc { 1 } else { 0 };
    reports[best].selected = true;
    Ok((reports, records))
}

type AttackScores = Vec<(AttackKind, Vec<PointScore>)>;

/// Scores of every configured recourse-only attack. Nothing here can reach
/// the owner model.
fn recourse_only_scores(
    config: &ExperimentConfig,
    samples: &[GameSample],
    ensemble: Option<&ShadowEnsemble>,
) -> Result<(AttackScores, Option<ShadowSummary>)> {
    let mut out = Vec::new();
    let mut summary = None;
    for &kind in config.attack.kinds.iter().filter(|k| k.recourse_only()) {
        let scores = match kind {
            AttackKind::Cfd => cfd_scores(samples)?,
            _ => {
                let e = ensemble.expect("ensemble trained for LRT attacks");
                let (s, sm) = cfd_lrt_scores(samples, e, derive(config.seed, "cfd-lrt", 0))?;
                summary = Some(sm);
                s
            }
        };
        out.push((kind, scores));
    }
    Ok((out, summary))
}

/// The adversary's data: the shadow pool of the configured split.
pub fn shadow_pool(config: &ExperimentConfig) -> Result<Dataset> {
    config.validate()?;
    let (data, _) = load_data(config)?;
    let s = &config.split;
    Ok(split(&data, s.owner_n, s.shadow_n, s.eval_out_n, derive(config.seed, "split", 0)).stage("split")?.shadow_pool)
}

pub struct AttackOutput {
    pub attacks: Vec<AttackReport>,
    pub records: Vec<ScoreRecord>,
    pub shadows: Option<ShadowSummary>,
}

/// Run the configured recourse-only attacks on an already played game.
/// Only the published recourses and the adversary's own shadow models are used.
pub fn attack_game(config: &ExperimentConfig, samples: &[GameSample], workers: usize) -> Result<AttackOutput> {
    let kinds: Vec<AttackKind> = config.attack.kinds.iter().copied().filter(|k| k.recourse_only()).collect();
    if kinds.is_empty() {
        return Err(Error::Config("attack on a saved game supports only CFD and CFD-LRT".into()));
    }
    if !samples.iter().any(GameSample::is_member) || samples.iter().all(GameSample::is_member) {
        return Err(Error::Game {
            candidates_in: samples.iter().filter(|s| s.is_member()).count(),
            candidates_out: samples.iter().filter(|s| !s.is_member()).count(),
            reason: "a saved game needs both members and non-members".into(),
        });
    }
    let mut config = config.clone();
    config.attack.kinds = kinds;
    thread_pool(workers)?.install(|| {
        let ensemble = if config.attack.kinds.contains(&AttackKind::CfdLrt) {
            Some(train_shadows(&config, &shadow_pool(&config)?)?)
        } else {
            None
        };
        let (scores, shadows) = recourse_only_scores(&config, samples, ensemble.as_ref())?;
        let alphas = config.report_alphas();
        let algorithm = config.recourse.method.algorithm();
        let mut attacks = Vec::new();
        let mut records = Vec::new();
        for (kind, s) in &scores {
            let (a, r) = evaluate_attack(*kind, s, samples, &alphas, algorithm)?;
            attacks.extend(a);
            records.extend(r);
        }
        Ok(AttackOutput { attacks, records, shadows })
    })
}

fn run_stages(config: &ExperimentConfig) -> Result<RunOutput> {
    let mut timing = BTreeMap::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timing: &mut BTreeMap<String, f64>| {
        timing.insert(name.to_string(), clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };

    let prep = prepare(config)?;
    lap("prepare", &mut timing);
    let owner = QueryCounter::new(&prep.owner);
    let game = play_game_with(&prep, &owner)?;
    lap("game", &mut timing);

    let kinds = &config.attack.kinds;
    let ensemble = if kinds.iter().any(|k| k.uses_shadows()) {
        let e = train_shadows(config, &prep.split.shadow_pool)?;
        lap("shadows", &mut timing);
        Some(e)
    } else {
        None
    };

    let mut queries = QuerySummary { game_and_recourse: owner.queries(), ..QuerySummary::default() };
    let mut per_attack: Vec<(AttackKind, Vec<PointScore>)> = Vec::new();

    // Recourse-only attacks: no owner access allowed.
    let before = owner.queries();
    let (scores, summary) = recourse_only_scores(config, &game.samples, ensemble.as_ref())?;
    per_attack.extend(scores);
    let mut shadow_summary = summary;
    let during = owner.queries() - before;
    if during != 0 {
        return Err(Error::OwnerQueried(during));
    }
    lap("recourse_only_attacks", &mut timing);

    let before = owner.queries();
    for &kind in kinds.iter().filter(|k| !k.recourse_only()) {
        let scores = match kind {
            AttackKind::Loss => loss_scores(&game.samples, &owner)?,
            _ => loss_lrt_scores(&game.samples, &owner, ensemble.as_ref().expect("ensemble trained for LRT attacks"))?,
        };
        per_attack.push((kind, scores));
    }
    queries.loss_attacks = owner.queries() - before;
    if shadow_summary.is_none() {
        shadow_summary = ensemble.as_ref().map(|e| ShadowSummary { n_models: e.len(), ..ShadowSummary::default() });
    }
    lap("loss_attacks", &mut timing);

    // Report in configured order.
    per_attack.sort_by_key(|(k, _)| kinds.iter().position(|c| c == k));
    let alphas = config.report_alphas();
    let algorithm = config.recourse.method.algorithm();
    let mut attacks = Vec::new();
    let mut records = Vec::new();
    for (kind, scores) in &per_attack {
        let (reports, recs) = evaluate_attack(*kind, scores, &game.samples, &alphas, algorithm)?;
        attacks.extend(reports);
        records.extend(recs);
    }
    lap("metrics", &mut timing);

    let report = ExperimentReport {
        schema_version: SCHEMA_VERSION,
        version: env!("CARGO_PKG_VERSION").to_string(),
        experiment_id: config.id.clone(),
        config: config.clone(),
        model: ModelSummary {
            architecture: config.model.architecture.clone(),
            n_params: prep.owner.params().len(),
            train_accuracy: prep.owner.meta.train_accuracy,
            test_accuracy: prep.test_accuracy,
            final_train_loss: prep.owner.meta.epoch_losses.last().copied().unwrap_or(f64::NAN),
        },
        game: game.summary.clone(),
        shadows: shadow_summary,
        owner_queries: queries,
        attacks,
        timing_seconds: timing,
    };
    Ok(RunOutput { report, records, game })
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}

/// Run one experiment on `workers` threads. Results do not depend on `workers`.
pub fn run_experiment(config: &ExperimentConfig, workers: usize) -> Result<RunOutput> {
    thread_pool(workers)?.install(|| run_stages(config))
}

/// Write `report.json`, `scores.jsonl`, `game.jsonl`, one ROC table per
/// attack and direction, and a one-experiment `summary.csv` into `dir`.
pub fn persist(output: &RunOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let report_path = dir.join("report.json");
    fs::write(&report_path, serde_json::to_vec_pretty(&output.report)?).map_err(Error::io(&report_path))?;
    write_jsonl(&dir.join("scores.jsonl"), &output.records)?;
    write_jsonl(&dir.join("game.jsonl"), &output.game.samples)?;
    for a in &output.report.attacks {
        if let Some(curve) = &a.curve {
            export_log_roc(curve, &dir.join(format!("roc_{}_{}.csv", a.attack.slug(), a.direction.name())))?;
        }
    }
    emit_summary(std::slice::from_ref(&output.report), &dir.join("summary.csv"))
}

/// Summary rows, the selected direction of each attack first.
pub fn summary_rows(reports: &[ExperimentReport]) -> Vec<String> {
    let mut rows = Vec::new();
    for r in reports {
        let mut attacks: Vec<&AttackReport> = r.attacks.iter().collect();
        attacks.sort_by_key(|a| {
            let kind_pos = r.config.attack.kinds.iter().position(|k| *k == a.attack).unwrap_or(usize::MAX);
            (kind_pos, !a.selected, a.direction)
        });
        for a in attacks {
            let tpr = |alpha: f64| a.metrics.tpr(alpha).map(|v| v.to_string()).unwrap_or_default();
            rows.push(format!(
                "{},{},{},{},{},{},{}",
                r.experiment_id,
                a.attack.name(),
                a.direction.name(),
                a.metrics.auc,
                a.metrics.balanced_accuracy,
                tpr(0.1),
                tpr(0.01)
            ));
        }
    }
    rows
}

pub fn emit_summary(reports: &[ExperimentReport], path: &Path) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::Config("summary needs at least one report".into()));
    }
    let mut text = String::from(SUMMARY_HEADER);
    text.push('\n');
    for row in summary_rows(reports) {
        text.push_str(&row);
        text.push('\n');
    }
    fs::write(path, text).map_err(Error::io(path))
}

/// Run every grid point of the config's sweep into `out/<id>/` and write a
/// combined `out/summary.csv`.
pub fn run_sweep(config: &ExperimentConfig, workers: usize, out: &Path) -> Result<Vec<ExperimentReport>> {
    let mut reports = Vec::new();
    for c in config.expand_sweep()? {
        let output = run_experiment(&c, workers)?;
        persist(&output, &out.join(&c.id))?;
        reports.push(output.report);
    }
    emit_summary(&reports, &out.join("summary.csv"))?;
    Ok(reports)
}

/// Load a `report.json`.
pub fn read_report(path: &Path) -> Result<ExperimentReport> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    Ok(serde_json::from_slice(&bytes)?)
}
