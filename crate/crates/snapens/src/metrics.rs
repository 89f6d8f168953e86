//! Accuracy metrics shared by the base models and the ensembles.
//!
//! Ranking metrics follow the leave-one-out protocol: each held-out item
//! is ranked against a fixed set of sampled negatives, and the metric is
//! averaged over users. With a single relevant item the ideal DCG is 1,
//! so NDCG@n reduces to 1/log2(rank+1) inside the cutoff.

/// Root mean squared error between predictions and ground truth.
pub fn rmse(preds: &[f64], truths: &[f64]) -> f64 {
    assert_eq!(preds.len(), truths.len());
    assert!(!preds.is_empty(), "rmse over an empty set");
    let sq: f64 = preds
        .iter()
        .zip(truths)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    (sq / preds.len() as f64).sqrt()
}

/// 1-based rank of `target` among the scored candidates, score descending.
/// Equal scores rank the smaller item id first, so ranks are deterministic
/// whatever order the candidates arrive in. The target must be present.
pub fn rank_in(scored: &[(u32, f64)], target: u32) -> usize {
    let t_score = scored
        .iter()
        .find(|(id, _)| *id == target)
        .map(|(_, s)| *s)
        .expect("target must be among the scored candidates");
    1 + scored
        .iter()
        .filter(|(id, s)| *s > t_score || (*s == t_score && *id < target))
        .count()
}

/// Hit ratio contribution of one example: 1 if the item ranked inside the
/// cutoff, else 0.
pub fn hr_at_n(rank: usize, n: usize) -> f64 {
    if rank <= n {
        1.0
    } else {
        0.0
    }
}

/// NDCG contribution of one example under leave-one-out.
pub fn ndcg_at_n(rank: usize, n: usize) -> f64 {
    if rank <= n {
        1.0 / ((rank as f64) + 1.0).log2()
    } else {
        0.0
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "mean over an empty set");
    xs.iter().sum::<f64>() / xs.len() as f64
}
