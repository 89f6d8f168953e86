use crate::mat::softmax;

/// Soft supervision target for one training example.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabel {
    /// Simplex over snapshots, peaked at the optimal one.
    pub y: Vec<f64>,
    /// Tag of the optimal snapshot.
    pub e_o: u32,
    /// Unnormalized closeness scores (kept for inspection).
    pub x: Vec<f64>,
}

/// Tag of the snapshot whose prediction is closest to the target; ties go
/// to the smaller tag. `tags` must be sorted ascending, as stored sets are.
pub fn optimal_tag(tags: &[u32], preds: &[f64], target: f64) -> u32 {
    assert_eq!(tags.len(), preds.len());
    assert!(!tags.is_empty(), "need at least one snapshot");
    let mut best = 0usize;
    let mut best_err = (preds[0] - target).abs();
    for (s, &p) in preds.iter().enumerate().skip(1) {
        let err = (p - target).abs();
        if err < best_err {
            best = s;
            best_err = err;
        }
    }
    tags[best]
}

/// Closeness-weighted soft labels: x_s = (|e_s - e_o| + 1)^(-alpha),
/// y = softmax(x). Tag distance is measured on the tag axis itself, so
/// snapshots captured near the optimal one share credit.
pub fn soft_labels(tags: &[u32], e_o: u32, alpha: f64) -> SoftLabel {
    assert!(!tags.is_empty(), "need at least one snapshot");
    let x: Vec<f64> = tags
        .iter()
        .map(|&t| {
            let dist = (t as f64 - e_o as f64).abs();
            (dist + 1.0).powf(-alpha)
        })
        .collect();
    let y = softmax(&x);
    SoftLabel { y, e_o, x }
}

/// KL(y || y_hat) with the 0 ln 0 = 0 convention on the label side.
pub fn kl_loss(y: &[f64], y_hat: &[f64]) -> f64 {
    assert_eq!(y.len(), y_hat.len());
    y.iter()
        .zip(y_hat)
        .filter(|(yi, _)| **yi > 0.0)
        .map(|(yi, pi)| yi * (yi.ln() - pi.ln()))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optimal_tag_picks_closest() {
        let tags = [10, 20, 30];
        assert_eq!(optimal_tag(&tags, &[3.0, 3.9, 5.0], 4.0), 20);
        assert_eq!(optimal_tag(&tags, &[4.0, 3.0, 2.0], 4.0), 10);
        assert_eq!(optimal_tag(&tags, &[1.0, 2.0, 3.9], 4.0), 30);
    }

    #[test]
    fn optimal_tag_tie_takes_smaller_tag() {
        // Predictions 3.5 and 4.5 are both 0.5 from target 4.0.
        assert_eq!(optimal_tag(&[10, 20], &[3.5, 4.5], 4.0), 10);
        assert_eq!(optimal_tag(&[10, 20, 30], &[1.0, 3.5, 4.5], 4.0), 20);
    }

    #[test]
    fn labels_form_simplex_peaked_at_optimal() {
        let sl = soft_labels(&[10, 20, 30, 40], 20, 1.0);
        let sum: f64 = sl.y.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        let peak = sl
            .y
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(peak, 1);
        // Symmetric tag distances give symmetric mass.
        assert!((sl.y[0] - sl.y[2]).abs() < 1e-12);
        assert!(sl.y[2] > sl.y[3]);
    }

    #[test]
    fn frozen_three_snapshot_oracle() {
        // Hand-derived for tags {10,20,30}, e_o = 20, alpha = 1:
        // x = (1/11, 1, 1/11), y = softmax(x)
        //   = (0.223111441070, 0.553777117860, 0.223111441070).
        let sl = soft_labels(&[10, 20, 30], 20, 1.0);
        assert!((sl.y[0] - 0.223_111_441_070).abs() < 1e-9);
        assert!((sl.y[1] - 0.553_777_117_860).abs() < 1e-9);
        assert!((sl.y[2] - 0.223_111_441_070).abs() < 1e-9);
        assert_eq!(sl.x[1], 1.0);
        assert!((sl.x[0] - 1.0 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn alpha_zero_is_uniform() {
        let sl = soft_labels(&[10, 20, 30], 20, 0.0);
        for yi in &sl.y {
            assert!((yi - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn larger_alpha_sharpens() {
        let soft = soft_labels(&[10, 20, 30], 20, 1.0);
        let sharp = soft_labels(&[10, 20, 30], 20, 4.0);
        assert!(sharp.y[1] > soft.y[1]);
    }

    #[test]
    fn single_snapshot_label_is_unit() {
        let sl = soft_labels(&[40], 40, 1.0);
        assert_eq!(sl.y, vec![1.0]);
    }

    #[test]
    fn kl_basics() {
        let y = [0.5, 0.5];
        assert!(kl_loss(&y, &y) < 1e-15);
        // KL(y||p) for p = (0.9, 0.1): 0.5 ln(0.5/0.9) + 0.5 ln(0.5/0.1).
        let expect = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!((kl_loss(&y, &[0.9, 0.1]) - expect).abs() < 1e-12);
        assert!(kl_loss(&y, &[0.9, 0.1]) > 0.0);
        // Zero label mass contributes nothing.
        assert_eq!(kl_loss(&[1.0, 0.0], &[1.0, 1e-12]), 0.0);
    }
}
