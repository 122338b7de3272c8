use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Prediction scores paired with binary outcomes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoredLabels {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl ScoredLabels {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} scores for {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::NonFinite("score".into()));
        }
        Ok(ScoredLabels { scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y).count()
    }
}

/// Indices sorted by descending score; equal scores share a group.
fn descending(scored: &ScoredLabels) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scored.len()).collect();
    idx.sort_by(|&a, &b| scored.scores[b].total_cmp(&scored.scores[a]));
    idx
}

/// Mann-Whitney estimate of `P(score+ > score-)`, ties counting one half.
pub fn auroc(scored: &ScoredLabels) -> Result<f64> {
    let pos = scored.positives();
    let neg = scored.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    // midranks in ascending order
    let mut idx: Vec<usize> = (0..scored.len()).collect();
    idx.sort_by(|&a, &b| scored.scores[a].total_cmp(&scored.scores[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && scored.scores[idx[end]] == scored.scores[idx[start]] {
            end += 1;
        }
        let midrank = (start + end + 1) as f64 / 2.0;
        let tied_pos = idx[start..end].iter().filter(|&&i| scored.labels[i]).count();
        rank_sum += midrank * tied_pos as f64;
        start = end;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Order used by the precision-recall computations: seeded shuffle, then a
/// stable sort by descending score.
fn pr_order(scored: &ScoredLabels, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scored.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.sort_by(|&a, &b| scored.scores[b].total_cmp(&scored.scores[a]));
    idx
}

/// Step-wise average precision.
pub fn auprc(scored: &ScoredLabels, seed: u64) -> Result<f64> {
    let pos = scored.positives();
    if pos == 0 {
        return Err(Error::NoPositives);
    }
    let mut tp = 0usize;
    let mut ap = 0.0;
    for (rank, &i) in pr_order(scored, seed).iter().enumerate() {
        if scored.labels[i] {
            tp += 1;
            ap += tp as f64 / (rank + 1) as f64;
        }
    }
    Ok(ap / pos as f64)
}

/// `(false positive rate, true positive rate)` at every distinct threshold,
/// from `(0, 0)` to `(1, 1)`.
pub fn roc_curve(scored: &ScoredLabels) -> Result<Vec<(f64, f64)>> {
    let pos = scored.positives();
    let neg = scored.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let idx = descending(scored);
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (n, &i) in idx.iter().enumerate() {
        if scored.labels[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        let group_ends = idx
            .get(n + 1)
            .is_none_or(|&next| scored.scores[next] != scored.scores[i]);
        if group_ends {
            points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        }
    }
    Ok(points)
}

/// `(recall, precision)` after each ranked patient, in the same order as
/// [`auprc`].
pub fn pr_curve(scored: &ScoredLabels, seed: u64) -> Result<Vec<(f64, f64)>> {
    let pos = scored.positives();
    if pos == 0 {
        return Err(Error::NoPositives);
    }
    let mut tp = 0usize;
    Ok(pr_order(scored, seed)
        .iter()
        .enumerate()
        .map(|(rank, &i)| {
            if scored.labels[i] {
                tp += 1;
            }
            (tp as f64 / pos as f64, tp as f64 / (rank + 1) as f64)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sl(scores: &[f64], labels: &[bool]) -> ScoredLabels {
        ScoredLabels::new(scores.to_vec(), labels.to_vec()).unwrap()
    }

    #[test]
    fn perfect_and_reversed() {
        let s = sl(&[0.9, 0.8, 0.3, 0.1], &[true, true, false, false]);
        assert_eq!(auroc(&s).unwrap(), 1.0);
        assert_eq!(auprc(&s, 0).unwrap(), 1.0);
        let r = sl(&[0.1, 0.2, 0.8, 0.9], &[true, true, false, false]);
        assert_eq!(auroc(&r).unwrap(), 0.0);
    }

    #[test]
    fn ties_count_half() {
        let s = sl(&[0.5, 0.5], &[true, false]);
        assert_eq!(auroc(&s).unwrap(), 0.5);
        // 3 pairs: (0.7 > 0.2), (0.7 = 0.7 -> 1/2), (0.2 = 0.2 -> 1/2) over 2x2
        let s = sl(&[0.7, 0.2, 0.7, 0.2], &[true, true, false, false]);
        assert_eq!(auroc(&s).unwrap(), (1.0 + 0.5 + 0.5) / 4.0);
    }

    #[test]
    fn single_positive_first() {
        let s = sl(&[0.9, 0.5, 0.4, 0.1], &[true, false, false, false]);
        assert_eq!(auprc(&s, 3).unwrap(), 1.0);
    }

    #[test]
    fn hand_computed_average_precision() {
        // ranks: + - + -  -> (1/1 + 2/3) / 2
        let s = sl(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]);
        assert!((auprc(&s, 0).unwrap() - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(matches!(auroc(&sl(&[0.1, 0.2], &[true, true])), Err(Error::SingleClass)));
        assert!(matches!(auprc(&sl(&[0.1, 0.2], &[false, false]), 0), Err(Error::NoPositives)));
        assert!(ScoredLabels::new(vec![0.1], vec![]).is_err());
    }

    #[test]
    fn curves_have_endpoints() {
        let s = sl(&[0.9, 0.5, 0.5, 0.1], &[true, false, true, false]);
        let roc = roc_curve(&s).unwrap();
        assert_eq!(roc.first(), Some(&(0.0, 0.0)));
        assert_eq!(roc.last(), Some(&(1.0, 1.0)));
        // the tied pair is a single step
        assert_eq!(roc.len(), 4);
        let pr = pr_curve(&s, 1).unwrap();
        assert_eq!(pr.len(), 4);
        assert_eq!(pr.last().unwrap().0, 1.0);
    }
}
