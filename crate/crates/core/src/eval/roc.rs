use serde::{Deserialize, Serialize};

use super::GroundTruth;
use crate::error::{Error, Result};
use crate::interactions::InteractionEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Pairs with `m̂/√v̂ ≥ threshold` are called significant, i.e. the CI
    /// multiplier sits just below `threshold`.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// From (0, 0) at an infinite multiplier to (1, 1).
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Signal-to-noise statistic `m̂/√v̂` compared against the CI multiplier.
pub fn z_score(e: &InteractionEstimate) -> f64 {
    let sd = e.sd();
    if sd > 0.0 {
        e.mean / sd
    } else if e.mean > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// Exact ROC over all distinct score thresholds, AUC by the trapezoid rule.
pub fn roc_from_scores(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    crate::error::check_dim(scores.len(), labels.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid(format!(
            "ROC undefined: {pos} true and {neg} false pairs; both must be present"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let t = scores[order[k]];
        while k < order.len() && scores[order[k]] == t {
            if labels[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum();
    Ok(RocCurve { points, auc })
}

/// Pooled ROC of the significance rule across datasets with known truth.
pub fn roc_curve(batches: &[(&[InteractionEstimate], &GroundTruth)]) -> Result<RocCurve> {
    if batches.len() < 2 {
        return Err(Error::invalid("ROC needs at least 2 datasets"));
    }
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (est, truth) in batches {
        for e in *est {
            scores.push(z_score(e));
            labels.push(truth.contains(e.pair.0, e.pair.1));
        }
    }
    roc_from_scores(&scores, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::RngStream;
    use rand::Rng;

    #[test]
    fn perfect_separation() {
        let c = roc_from_scores(&[3.0, 2.5, 1.0, 0.2], &[true, true, false, false]).unwrap();
        assert!((c.auc - 1.0).abs() < 1e-15);
        assert_eq!(c.points.last().map(|p| (p.fpr, p.tpr)), Some((1.0, 1.0)));
    }

    #[test]
    fn inverted_and_tied_scores() {
        let c = roc_from_scores(&[0.0, 1.0], &[true, false]).unwrap();
        assert_eq!(c.auc, 0.0);
        let c = roc_from_scores(&[1.0, 1.0], &[true, false]).unwrap();
        assert_eq!(c.auc, 0.5);
    }

    #[test]
    fn auc_equals_pairwise_concordance() {
        let mut r = RngStream::new(2).rng();
        let scores: Vec<f64> = (0..60).map(|_| (r.random_range(0..10) as f64) / 3.0).collect();
        let labels: Vec<bool> = (0..60).map(|_| r.random_bool(0.4)).collect();
        let mut num = 0.0;
        let mut den = 0.0;
        for (a, la) in scores.iter().zip(&labels) {
            for (b, lb) in scores.iter().zip(&labels) {
                if *la && !*lb {
                    den += 1.0;
                    num += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
                }
            }
        }
        let c = roc_from_scores(&scores, &labels).unwrap();
        assert!((c.auc - num / den).abs() < 1e-12);
    }

    #[test]
    fn random_scores_average_half() {
        let mut aucs = 0.0;
        for s in 0..100 {
            let mut r = RngStream::new(100 + s).rng();
            let scores: Vec<f64> = (0..28).map(|_| r.random::<f64>()).collect();
            let labels: Vec<bool> = (0..28).map(|k| k < 7).collect();
            aucs += roc_from_scores(&scores, &labels).unwrap().auc;
        }
        assert!((aucs / 100.0 - 0.5).abs() < 0.1);
    }

    #[test]
    fn missing_class_is_an_error() {
        assert!(roc_from_scores(&[1.0, 2.0], &[true, true]).is_err());
        assert!(roc_from_scores(&[1.0, 2.0], &[false, false]).is_err());
    }

    #[test]
    fn pooled_over_datasets() {
        let truth = GroundTruth::new([(0, 1)]);
        let est = vec![
            InteractionEstimate::from_moments((0, 1), 2.0, 0.25),
            InteractionEstimate::from_moments((0, 2), 0.1, 0.25),
            InteractionEstimate::from_moments((1, 2), 0.0, 0.0),
        ];
        let c = roc_curve(&[(&est, &truth), (&est, &truth)]).unwrap();
        assert_eq!(c.auc, 1.0);
        assert!(roc_curve(&[(&est, &truth)]).is_err());
    }
}
