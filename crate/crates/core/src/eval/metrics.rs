use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("need at least one positive and one negative example (got {n_pos} / {n_neg})")]
    SingleClass { n_pos: usize, n_neg: usize },
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("scores must be finite")]
    NonFinite,
}

fn check(scores: &[f64], labels: &[u8]) -> Result<(usize, usize), MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass { n_pos, n_neg });
    }
    Ok((n_pos, n_neg))
}

/// Mann–Whitney AUC: tied scores get their average rank, so a tied
/// positive/negative pair counts one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    let (n_pos, n_neg) = check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_run = order[i..=j].iter().filter(|&&k| labels[k] == 1).count();
        pos_rank_sum += mid * pos_in_run as f64;
        i = j + 1;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// `(TP/(TP+FN), TN/(TN+FP))`, predicting positive iff `score >= threshold`.
pub fn sensitivity_specificity(scores: &[f64], labels: &[u8], threshold: f64) -> Result<(f64, f64), MetricError> {
    let (n_pos, n_neg) = check(scores, labels)?;
    let (mut tp, mut tn) = (0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            _ => {}
        }
    }
    Ok((tp as f64 / n_pos as f64, tn as f64 / n_neg as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub auc: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub threshold: f64,
}

impl MetricSet {
    pub fn evaluate(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Self, MetricError> {
        let (n_pos, n_neg) = check(scores, labels)?;
        let (sensitivity, specificity) = sensitivity_specificity(scores, labels, threshold)?;
        Ok(MetricSet {
            auc: auc(scores, labels)?,
            sensitivity,
            specificity,
            n_pos,
            n_neg,
            threshold,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Arithmetic mean and sample standard deviation (`n-1`; zero for one
    /// value). An empty input yields zeros.
    pub fn of(values: &[f64]) -> MeanStd {
        let n = values.len();
        if n == 0 {
            return MeanStd { mean: 0.0, std: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub auc: MeanStd,
    pub sensitivity: MeanStd,
    pub specificity: MeanStd,
}

pub fn summarize(sets: &[MetricSet]) -> Summary {
    let col = |f: fn(&MetricSet) -> f64| MeanStd::of(&sets.iter().map(f).collect::<Vec<_>>());
    Summary {
        auc: col(|m| m.auc),
        sensitivity: col(|m| m.sensitivity),
        specificity: col(|m| m.specificity),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_extremes() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[1, 1, 0, 0]).unwrap(), 0.0);
        assert_eq!(auc(&[0.4; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        // one tied pair out of four
        assert_eq!(auc(&[0.1, 0.5, 0.5, 0.9], &[0, 0, 1, 1]).unwrap(), 0.875);
    }

    #[test]
    fn single_class_is_an_error() {
        assert_eq!(auc(&[0.1, 0.2], &[1, 1]), Err(MetricError::SingleClass { n_pos: 2, n_neg: 0 }));
        assert!(sensitivity_specificity(&[0.1], &[0], 0.5).is_err());
        assert!(auc(&[0.1], &[0, 1]).is_err());
    }

    #[test]
    fn hand_counted_operating_point() {
        let s = [0.9, 0.8, 0.4, 0.3, 0.2, 0.1];
        let l = [1, 1, 1, 0, 0, 0];
        let (sens, spec) = sensitivity_specificity(&s, &l, 0.5).unwrap();
        assert!((sens - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(spec, 1.0);
        assert_eq!(sensitivity_specificity(&s, &l, 0.0).unwrap().0, 1.0);
        assert_eq!(sensitivity_specificity(&s, &l, 0.95).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn auc_invariant_under_monotone_transform() {
        let s: Vec<f64> = (0..200).map(|i| ((i * 7919) % 101) as f64 / 101.0).collect();
        let l: Vec<u8> = (0..200).map(|i| ((i * 31) % 5 == 0) as u8).collect();
        let t: Vec<f64> = s.iter().map(|v| 2.0 * v + 1.0).collect();
        assert_eq!(auc(&s, &l).unwrap(), auc(&t, &l).unwrap());
    }

    #[test]
    fn summary_statistics() {
        let m = |auc| MetricSet { auc, sensitivity: 0.2, specificity: 0.9, n_pos: 1, n_neg: 1, threshold: 0.5 };
        let one = summarize(&[m(0.6)]);
        assert_eq!(one.auc, MeanStd { mean: 0.6, std: 0.0 });
        let two = summarize(&[m(0.6), m(0.7)]);
        assert!((two.auc.mean - 0.65).abs() < 1e-15);
        assert!((two.auc.std - 0.070_710_678_118_654_75).abs() < 1e-12);
        assert_eq!(summarize(&[m(0.7), m(0.6)]).auc.mean, two.auc.mean);
        assert_eq!(two.sensitivity.std, 0.0);
    }
}
