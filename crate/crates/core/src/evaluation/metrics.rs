use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One operating point: transactions scoring at least `threshold` are
/// flagged as fraud.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub true_positives: usize,
    pub false_positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// Ascending threshold; recall is non-increasing along the list.
    pub points: Vec<PrPoint>,
    pub average_precision: f64,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestF1 {
    pub f1: f64,
    pub threshold: f64,
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Precision and recall of the fraud class at every distinct score, and
/// average precision `sum_k (R_k - R_{k-1}) P_k` taken from the highest
/// threshold down with `R_0 = 0`.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<PrCurve> {
    if scores.len() != labels.len() {
        return Err(Error::dimension("pr_curve labels", scores.len(), labels.len()));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Data(format!("score {s} is not finite")));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Data("pr_curve needs both fraud and legitimate labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            threshold,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / positives as f64,
            true_positives: tp,
            false_positives: fp,
        });
    }
    let mut average_precision = 0.0;
    let mut prev_recall = 0.0;
    for p in &points {
        average_precision += (p.recall - prev_recall) * p.precision;
        prev_recall = p.recall;
    }
    points.reverse();
    Ok(PrCurve {
        points,
        average_precision,
        positives,
        negatives,
    })
}

/// Highest F1 over the points; ties go to the lower threshold.
pub fn best_f1(points: &[PrPoint]) -> Result<BestF1> {
    let mut best: Option<BestF1> = None;
    for p in points {
        let f1 = f1_score(p.precision, p.recall);
        let better = match best {
            None => true,
            Some(b) => f1 > b.f1 || (f1 == b.f1 && p.threshold < b.threshold),
        };
        if better {
            best = Some(BestF1 {
                f1,
                threshold: p.threshold,
            });
        }
    }
    best.ok_or_else(|| Error::Precondition("best_f1 needs at least one point".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(threshold: f64, precision: f64, recall: f64) -> PrPoint {
        PrPoint {
            threshold,
            precision,
            recall,
            true_positives: 0,
            false_positives: 0,
        }
    }

    #[test]
    fn four_item_example() {
        let c = pr_curve(&[0.9, 0.8, 0.3, 0.1], &[true, false, true, false]).unwrap();
        let at = c.points.iter().find(|p| p.threshold == 0.3).unwrap();
        assert_eq!(at.precision, 2.0 / 3.0);
        assert_eq!(at.recall, 1.0);
        assert!(c
            .points
            .windows(2)
            .all(|w| w[0].threshold < w[1].threshold && w[0].recall >= w[1].recall));
    }

    #[test]
    fn perfect_and_reversed_rankings() {
        let labels = [true, false, true, false];
        let perfect = pr_curve(&[1.0, 0.0, 1.0, 0.0], &labels).unwrap();
        assert_eq!(perfect.average_precision, 1.0);
        let reversed = pr_curve(&[0.0, 1.0, 0.0, 1.0], &labels).unwrap();
        assert_eq!(reversed.average_precision, 0.5);
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(pr_curve(&[0.1, 0.2], &[true, true]).is_err());
        assert!(pr_curve(&[0.1, f64::NAN], &[true, false]).is_err());
        assert!(best_f1(&[]).is_err());
    }

    #[test]
    fn best_f1_examples() {
        assert_eq!(best_f1(&[point(0.5, 1.0, 1.0)]).unwrap().f1, 1.0);
        assert_eq!(best_f1(&[point(0.5, 0.5, 0.5), point(0.7, 1.0, 0.0)]).unwrap().f1, 0.5);
        assert_eq!(best_f1(&[point(0.5, 1.0, 0.0)]).unwrap().f1, 0.0);
        let tie = best_f1(&[point(0.7, 0.5, 0.5), point(0.2, 0.5, 0.5)]).unwrap();
        assert_eq!(tie.threshold, 0.2);
    }
}
