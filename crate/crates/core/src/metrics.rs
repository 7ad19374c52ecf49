//! AUC-ROC with Mann-Whitney tie handling, plus the quadratic pairwise oracle.

use crate::error::{Error, Result};

/// Scores paired with binary labels (1 = positive/abnormal).
#[derive(Debug, Clone)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Contract(format!(
                "{} scores vs {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::Contract("labels must be 0 or 1".into()));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("scores contain NaN/Inf".into()));
        }
        Ok(ScoredSet { scores, labels })
    }

    fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&l| l == 1).count();
        (pos, self.labels.len() - pos)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Rank-based AUC: average ranks over tie groups, then the Mann-Whitney U
/// statistic normalized by the number of positive/negative pairs.
pub fn auc_roc(s: &ScoredSet) -> Result<f64> {
    let (pos, neg) = s.class_counts();
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes; got {pos} positive and {neg} negative"
        )));
    }
    let n = s.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        s.scores[a]
            .partial_cmp(&s.scores[b])
            .expect("scores validated finite")
    });
    // average rank within exact-tie groups (1-indexed ranks)
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && s.scores[order[j]] == s.scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if s.labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (pos as f64) * (pos as f64 + 1.0) / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Oracle: explicit loop over (positive, negative) pairs counting wins plus
/// half-credit ties. Quadratic; capped at 10^4 samples.
pub fn auc_bruteforce(s: &ScoredSet) -> Result<f64> {
    if s.len() > 10_000 {
        return Err(Error::Contract(format!(
            "brute-force AUC capped at 10000 samples, got {}",
            s.len()
        )));
    }
    let (pos, neg) = s.class_counts();
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes; got {pos} positive and {neg} negative"
        )));
    }
    let mut credit = 0.0f64;
    for (i, &li) in s.labels.iter().enumerate() {
        if li != 1 {
            continue;
        }
        for (j, &lj) in s.labels.iter().enumerate() {
            if lj != 0 {
                continue;
            }
            if s.scores[i] > s.scores[j] {
                credit += 1.0;
            } else if s.scores[i] == s.scores[j] {
                credit += 0.5;
            }
        }
    }
    Ok(credit / (pos as f64 * neg as f64))
}
