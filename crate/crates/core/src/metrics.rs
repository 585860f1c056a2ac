//! ROC curves and the summary numbers derived from them.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// FPR used in place of 0 when a curve is prepared for log axes.
pub const LOG_FPR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` from the strictest threshold to the loosest.
    pub points: Vec<(f64, f64)>,
    /// True when larger scores are evidence of membership.
    pub higher_means_member: bool,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// Sweep every distinct score as a threshold.
///
/// Equal scores form one step, so ties move the curve diagonally. With
/// `higher_means_member = false` the sweep runs from the lowest score up.
pub fn roc(scores: &[f64], membership: &[bool], higher_means_member: bool) -> Result<RocCurve> {
    check_dim(scores.len(), membership.len())?;
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::invalid("scores", format!("non-finite score {bad}")));
    }
    let n_pos = membership.iter().filter(|&&m| m).count();
    let n_neg = membership.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass { positives: n_pos, negatives: n_neg });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        let ord = scores[a].total_cmp(&scores[b]);
        if higher_means_member {
            ord.reverse()
        } else {
            ord
        }
    });

    let mut points = Vec::with_capacity(scores.len() + 1);
    points.push((0.0, 0.0));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if membership[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    Ok(RocCurve { points, higher_means_member, n_pos, n_neg })
}

/// Score threshold of the sweep point with the largest FPR not above `alpha`.
///
/// Guessing MEMBER for scores on the member side of the returned value (ties
/// included) reproduces that point. Returns an infinity that admits nothing
/// when even the strictest distinct score exceeds `alpha`.
pub fn threshold_at_fpr(scores: &[f64], membership: &[bool], higher_means_member: bool, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha", "must lie in (0, 1)"));
    }
    let curve = roc(scores, membership, higher_means_member)?;
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(|a, b| if higher_means_member { b.total_cmp(a) } else { a.total_cmp(b) });
    distinct.dedup();
    let mut tau = if higher_means_member { f64::INFINITY } else { f64::NEG_INFINITY };
    for (p, &s) in curve.points[1..].iter().zip(&distinct) {
        if p.0 > alpha {
            break;
        }
        tau = s;
    }
    Ok(tau)
}

/// Trapezoidal area under the curve.
pub fn auc(curve: &RocCurve) -> f64 {
    curve.points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
}

/// Best `(tpr + 1 - fpr) / 2` over the curve's thresholds.
pub fn balanced_accuracy(curve: &RocCurve) -> f64 {
    curve.points.iter().map(|&(f, t)| (t + 1.0 - f) / 2.0).fold(0.0, f64::max)
}

/// TPR at the largest achieved FPR not above `alpha`, without interpolation.
pub fn tpr_at_fpr(curve: &RocCurve, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha", "must lie in (0, 1)"));
    }
    Ok(curve.points.iter().filter(|p| p.0 <= alpha).map(|p| p.1).fold(0.0, f64::max))
}

/// `(fpr clamped to LOG_FPR_FLOOR, tpr, raw fpr)` for each curve point.
pub fn log_rows(curve: &RocCurve) -> Vec<(f64, f64, f64)> {
    curve.points.iter().map(|&(f, t)| (if f == 0.0 { LOG_FPR_FLOOR } else { f }, t, f)).collect()
}

/// Key used for an FPR level in [`MetricsReport::tpr_at_fpr`].
pub fn alpha_key(alpha: f64) -> String {
    format!("{alpha}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: f64,
    pub balanced_accuracy: f64,
    pub tpr_at_fpr: BTreeMap<String, f64>,
}

impl MetricsReport {
    pub fn from_curve(curve: &RocCurve, alphas: &[f64]) -> Result<Self> {
        let mut tpr = BTreeMap::new();
        for &a in alphas {
            tpr.insert(alpha_key(a), tpr_at_fpr(curve, a)?);
        }
        Ok(MetricsReport { auc: auc(curve), balanced_accuracy: balanced_accuracy(curve), tpr_at_fpr: tpr })
    }

    pub fn tpr(&self, alpha: f64) -> Option<f64> {
        self.tpr_at_fpr.get(&alpha_key(alpha)).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::Rng;

    fn curve(points: Vec<(f64, f64)>) -> RocCurve {
        RocCurve { points, higher_means_member: true, n_pos: 1, n_neg: 1 }
    }

    fn pairwise_auc(scores: &[f64], members: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &mi) in members.iter().enumerate() {
            if !mi {
                continue;
            }
            for (j, &mj) in members.iter().enumerate() {
                if mj {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn perfect_and_reversed() {
        let c = roc(&[0.9, 0.1], &[true, false], true).unwrap();
        assert!(c.points.contains(&(0.0, 1.0)));
        assert_eq!(auc(&c), 1.0);
        assert_eq!(balanced_accuracy(&c), 1.0);
        assert_eq!(tpr_at_fpr(&c, 0.01).unwrap(), 1.0);
        assert_eq!(auc(&roc(&[0.1, 0.9], &[true, false], true).unwrap()), 0.0);
        assert_eq!(auc(&roc(&[0.1, 0.9], &[true, false], false).unwrap()), 1.0);
    }

    #[test]
    fn all_ties_give_the_diagonal() {
        let c = roc(&[0.3; 6], &[true, false, true, false, false, true], true).unwrap();
        assert_eq!(c.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(auc(&c), 0.5);
        assert_eq!(balanced_accuracy(&c), 0.5);
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(matches!(roc(&[1.0, 2.0], &[true, true], true), Err(Error::SingleClass { positives: 2, negatives: 0 })));
        assert!(roc(&[1.0], &[true, false], true).is_err());
        assert!(roc(&[f64::NAN, 1.0], &[true, false], true).is_err());
    }

    #[test]
    fn hand_built_curves() {
        assert!((balanced_accuracy(&curve(vec![(0.0, 0.0), (0.2, 0.8), (1.0, 1.0)])) - 0.8).abs() < 1e-15);
        let c = curve(vec![(0.0, 0.0), (0.05, 0.4), (0.2, 0.9), (1.0, 1.0)]);
        assert_eq!(tpr_at_fpr(&c, 0.1).unwrap(), 0.4);
        assert!(tpr_at_fpr(&c, 0.0).is_err());
        assert!(tpr_at_fpr(&c, 1.0).is_err());
    }

    #[test]
    fn trapezoid_matches_pairwise_oracle() {
        let mut rng = seed::rng(4);
        for _ in 0..100 {
            // Coarse scores force plenty of ties.
            let scores: Vec<f64> = (0..200).map(|_| f64::from(rng.random_range(0..40u32)) / 4.0).collect();
            let members: Vec<bool> = (0..200).map(|_| rng.random()).collect();
            let c = roc(&scores, &members, true).unwrap();
            assert!((auc(&c) - pairwise_auc(&scores, &members)).abs() < 1e-9);
        }
    }

    #[test]
    fn random_scores_are_calibrated() {
        let mut rng = seed::rng(10);
        let scores: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        let members: Vec<bool> = (0..10_000).map(|i| i % 2 == 0).collect();
        let c = roc(&scores, &members, true).unwrap();
        let t = tpr_at_fpr(&c, 0.1).unwrap();
        assert!((0.07..=0.13).contains(&t), "{t}");
        assert!((auc(&c) - 0.5).abs() < 0.03);
    }

    #[test]
    fn log_rows_clamp_zero_fpr() {
        let c = curve(vec![(0.0, 0.0), (0.0, 0.5), (0.5, 1.0), (1.0, 1.0)]);
        let rows = log_rows(&c);
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[1], (LOG_FPR_FLOOR, 0.5, 0.0));
        assert_eq!(rows[2], (0.5, 1.0, 0.5));
    }

    #[test]
    fn report_keys() {
        let c = roc(&[3.0, 2.0, 1.0, 0.0], &[true, false, true, false], true).unwrap();
        let r = MetricsReport::from_curve(&c, &[0.1, 0.01]).unwrap();
        assert_eq!(r.tpr(0.1), Some(0.5));
        assert_eq!(r.tpr_at_fpr.keys().collect::<Vec<_>>(), ["0.01", "0.1"]);
        assert_eq!(r.auc, 0.75);
    }

    #[test]
    fn thresholds_reproduce_curve_points() {
        let scores = [5.0, 4.0, 4.0, 3.0, 2.0, 1.0];
        let members = [true, false, true, true, false, false];
        // FPRs along the sweep: 0, 1/3, 1/3, 2/3, 1.
        assert_eq!(threshold_at_fpr(&scores, &members, true, 0.2).unwrap(), 5.0);
        assert_eq!(threshold_at_fpr(&scores, &members, true, 0.5).unwrap(), 3.0);
        assert_eq!(threshold_at_fpr(&scores, &members, false, 0.5).unwrap(), 1.0);
        let all_neg_first = [true, false];
        assert_eq!(threshold_at_fpr(&[1.0, 2.0], &all_neg_first, true, 0.5).unwrap(), f64::INFINITY);
    }

    proptest! {
        #[test]
        fn curve_invariants(pairs in prop::collection::vec((-100i32..100, any::<bool>()), 2..80)) {
            let scores: Vec<f64> = pairs.iter().map(|p| f64::from(p.0)).collect();
            let mut members: Vec<bool> = pairs.iter().map(|p| p.1).collect();
            members[0] = true;
            members[1] = false;
            let c = roc(&scores, &members, true).unwrap();
            prop_assert_eq!(c.points[0], (0.0, 0.0));
            prop_assert_eq!(*c.points.last().unwrap(), (1.0, 1.0));
            for w in c.points.windows(2) {
                prop_assert!(w[0].0 <= w[1].0 && w[0].1 <= w[1].1);
            }
            prop_assert!(balanced_accuracy(&c) >= 0.5);

            let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
            let n = roc(&negated, &members, true).unwrap();
            prop_assert!((auc(&c) + auc(&n) - 1.0).abs() < 1e-12);
            prop_assert_eq!(&roc(&negated, &members, false).unwrap().points, &c.points);

            let transformed: Vec<f64> = scores.iter().map(|s| (s / 50.0).exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(&roc(&transformed, &members, true).unwrap().points, &c.points);

            let mut last = 0.0;
            for a in [0.01, 0.05, 0.1, 0.3, 0.5, 0.9] {
                let t = tpr_at_fpr(&c, a).unwrap();
                prop_assert!(t >= last);
                last = t;
            }
        }
    }
}
