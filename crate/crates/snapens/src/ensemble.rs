//! Baseline strategies for combining a snapshot set: pick the best single
//! snapshot, average them all, or learn a gating MLP over the snapshot
//! outputs (HSE, the hidden stacking ensemble). Averaging a cyclic-capture
//! set (SE) reuses the same mean; only snapshot provenance differs.
//!
//! The gating MLP trains with the same soft-label KL objective and Adam
//! settings as the attention network, so accuracy comparisons are about
//! architecture rather than objective.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{SplitDataset, Task};
use crate::error::SnapError;
use crate::mat::{axpy, dot, softmax, Mat};
use crate::neuse::prepare_examples;
use crate::rng::{stream_rng, Stream};
use crate::snapshot::SnapshotSet;

/// Index of the snapshot with the best recorded validation metric. Pass
/// `higher_better = false` for RMSE-style metrics, `true` for hit ratios.
/// Ties keep the earlier snapshot (smaller tag, since tags are sorted).
pub fn single_select(set: &SnapshotSet, higher_better: bool) -> Result<usize, SnapError> {
    if set.n_m() == 0 {
        return Err(SnapError::Config("cannot select from an empty snapshot set".into()));
    }
    let mut best: Option<(usize, f64)> = None;
    for (idx, meta) in set.metas.iter().enumerate() {
        let metric = meta.val_metric.ok_or_else(|| {
            SnapError::Config(format!(
                "snapshot tag {} has no validation metric recorded",
                meta.tag
            ))
        })?;
        let better = match best {
            None => true,
            Some((_, cur)) => {
                if higher_better {
                    metric > cur
                } else {
                    metric < cur
                }
            }
        };
        if better {
            best = Some((idx, metric));
        }
    }
    Ok(best.expect("non-empty set").0)
}

/// Arithmetic mean of the snapshot predictions for one pair.
pub fn average_combine(q_p: &[f64]) -> f64 {
    assert!(!q_p.is_empty(), "average over an empty snapshot vector");
    q_p.iter().sum::<f64>() / q_p.len() as f64
}

/// Mean over a cyclic-capture snapshot set. Identical arithmetic to
/// [`average_combine`]; the distinct name marks that the set must come
/// from a cyclic learning-rate schedule (one snapshot per cycle end).
pub fn se_combine(cyclic_set: &SnapshotSet, user: u32, item: u32) -> Result<f64, SnapError> {
    Ok(average_combine(cyclic_set.expect(user, item)?))
}

/// Gating MLP hyperparameters. Training knobs default to the attention
/// network's, keeping the two learned ensembles directly comparable.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HseConfig {
    pub hidden: usize,
    pub alpha: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub init_std: f64,
    pub max_epochs: u32,
    pub seed: u64,
}

impl Default for HseConfig {
    fn default() -> Self {
        HseConfig {
            hidden: 32,
            alpha: 1.0,
            lr: 0.01,
            batch_size: 128,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            init_std: 0.01,
            max_epochs: 10,
            seed: 0,
        }
    }
}

impl HseConfig {
    pub fn validate(&self) -> Result<(), SnapError> {
        if self.hidden < 1 {
            return Err(SnapError::Config("hse hidden width must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(SnapError::Config("hse batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(SnapError::Config("hse lr must be positive".into()));
        }
        if self.alpha < 0.0 {
            return Err(SnapError::Config("hse alpha must be >= 0".into()));
        }
        Ok(())
    }
}

/// One-hidden-layer gate: snapshot outputs in, softmax snapshot weights
/// out. Prediction is the weighted mean of the same snapshot outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct HseModel {
    /// n_m x hidden input projection.
    pub w1: Mat,
    pub b1: Vec<f64>,
    /// hidden x n_m output projection.
    pub w2: Mat,
    pub b2: Vec<f64>,
}

struct HseTrace {
    pre: Vec<f64>,
    z: Vec<f64>,
    weights: Vec<f64>,
}

impl HseModel {
    pub fn init(n_m: usize, config: &HseConfig) -> HseModel {
        let mut rng = stream_rng(config.seed, Stream::HseInit, 0);
        if config.init_std == 0.0 {
            return HseModel {
                w1: Mat::zeros(n_m, config.hidden),
                b1: vec![0.0; config.hidden],
                w2: Mat::zeros(config.hidden, n_m),
                b2: vec![0.0; n_m],
            };
        }
        let normal = Normal::new(0.0, config.init_std).expect("init_std must be finite");
        let mut w1 = Mat::zeros(n_m, config.hidden);
        let mut w2 = Mat::zeros(config.hidden, n_m);
        let mut b1 = vec![0.0; config.hidden];
        let mut b2 = vec![0.0; n_m];
        for group in [&mut w1.data, &mut b1, &mut w2.data, &mut b2] {
            for v in group.iter_mut() {
                *v = normal.sample(&mut rng);
            }
        }
        HseModel { w1, b1, w2, b2 }
    }

    fn trace(&self, q_p: &[f64]) -> HseTrace {
        let mut pre = self.w1.matvec_t(q_p);
        axpy(&mut pre, &self.b1, 1.0);
        let z: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
        let mut logits = self.w2.matvec_t(&z);
        axpy(&mut logits, &self.b2, 1.0);
        let weights = softmax(&logits);
        HseTrace { pre, z, weights }
    }

    /// Softmax ensemble weights for one pair's snapshot outputs.
    pub fn weights(&self, q_p: &[f64]) -> Vec<f64> {
        assert_eq!(q_p.len(), self.w1.rows);
        self.trace(q_p).weights
    }

    pub fn predict(&self, q_p: &[f64]) -> f64 {
        dot(&self.weights(q_p), q_p)
    }
}

/// Dense gradient of KL(y || weights) for one example, plus the loss.
/// Exposed shape mirrors the model so tests can line the two up.
pub struct HseGrad {
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
    pub loss: f64,
}

pub fn hse_backward(model: &HseModel, q_p: &[f64], y: &[f64]) -> HseGrad {
    let trace = model.trace(q_p);
    let loss = crate::neuse::kl_loss(y, &trace.weights);
    let g_logits: Vec<f64> = trace.weights.iter().zip(y).map(|(w, t)| w - t).collect();
    let mut g_w2 = Mat::zeros(model.w2.rows, model.w2.cols);
    g_w2.add_outer(&trace.z, &g_logits, 1.0);
    let g_z = model.w2.matvec(&g_logits);
    let g_pre: Vec<f64> = g_z
        .iter()
        .zip(&trace.pre)
        .map(|(g, p)| if *p > 0.0 { *g } else { 0.0 })
        .collect();
    let mut g_w1 = Mat::zeros(model.w1.rows, model.w1.cols);
    g_w1.add_outer(q_p, &g_pre, 1.0);
    HseGrad { w1: g_w1, b1: g_pre, w2: g_w2, b2: g_logits, loss }
}

fn adam_update(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    config: &HseConfig,
) {
    let bc1 = 1.0 - config.beta1.powi(t as i32);
    let bc2 = 1.0 - config.beta2.powi(t as i32);
    for k in 0..p.len() {
        m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g[k];
        v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g[k] * g[k];
        p[k] -= config.lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + config.eps);
    }
}

/// Result of gate training, with the per-epoch mean KL for diagnostics.
#[derive(Debug, Clone)]
pub struct TrainedHse {
    pub model: HseModel,
    pub epoch_kl: Vec<f64>,
}

/// Mini-batch Adam on the soft-label KL, full pass over the train split
/// each epoch. Deterministic under `config.seed`.
pub fn hse_train(
    set: &SnapshotSet,
    split: &SplitDataset,
    task: Task,
    config: &HseConfig,
) -> Result<TrainedHse, SnapError> {
    config.validate()?;
    let examples = prepare_examples(set, split, task, config.alpha, config.seed)?;
    let mut model = HseModel::init(set.n_m(), config);
    let mut epoch_kl = Vec::with_capacity(config.max_epochs as usize);
    if examples.is_empty() {
        return Ok(TrainedHse { model, epoch_kl });
    }

    let mut mom = HseModel {
        w1: Mat::zeros(model.w1.rows, model.w1.cols),
        b1: vec![0.0; model.b1.len()],
        w2: Mat::zeros(model.w2.rows, model.w2.cols),
        b2: vec![0.0; model.b2.len()],
    };
    let mut vel = mom.clone();
    let mut t = 0u64;

    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut stream_rng(config.seed, Stream::HseShuffle, epoch as u64));
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut acc = HseGrad {
                w1: Mat::zeros(model.w1.rows, model.w1.cols),
                b1: vec![0.0; model.b1.len()],
                w2: Mat::zeros(model.w2.rows, model.w2.cols),
                b2: vec![0.0; model.b2.len()],
                loss: 0.0,
            };
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let ex = &examples[i];
                let q_p = set.expect(ex.user, ex.item)?;
                let g = hse_backward(&model, q_p, &ex.y);
                axpy(&mut acc.w1.data, &g.w1.data, scale);
                axpy(&mut acc.b1, &g.b1, scale);
                axpy(&mut acc.w2.data, &g.w2.data, scale);
                axpy(&mut acc.b2, &g.b2, scale);
                loss_sum += g.loss;
            }
            t += 1;
            adam_update(&mut model.w1.data, &acc.w1.data, &mut mom.w1.data, &mut vel.w1.data, t, config);
            adam_update(&mut model.b1, &acc.b1, &mut mom.b1, &mut vel.b1, t, config);
            adam_update(&mut model.w2.data, &acc.w2.data, &mut mom.w2.data, &mut vel.w2.data, t, config);
            adam_update(&mut model.b2, &acc.b2, &mut mom.b2, &mut vel.b2, t, config);
        }
        let kl = loss_sum / examples.len() as f64;
        if !kl.is_finite() {
            return Err(SnapError::Diverged { epoch, what: "mean gate KL".into() });
        }
        epoch_kl.push(kl);
    }
    Ok(TrainedHse { model, epoch_kl })
}

/// Convenience: gate prediction for one pair of a snapshot set.
pub fn hse_predict(model: &HseModel, q_p: &[f64]) -> f64 {
    model.predict(q_p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cf::{Predict, Tagged};
    use crate::dataset::{chronological_leave_one_out, Interaction, RatingDataset};
    use crate::neuse::kl_loss;
    use crate::snapshot::{materialize, SnapshotMeta};

    struct Offset(f64);

    impl Predict for Offset {
        fn predict(&self, user: u32, item: u32) -> f64 {
            1.0 + ((user + item) % 4) as f64 + self.0
        }
    }

    fn toy_set(val: &[f64]) -> SnapshotSet {
        let models = vec![
            Tagged { tag: 10, model: Offset(0.0) },
            Tagged { tag: 20, model: Offset(0.3) },
            Tagged { tag: 30, model: Offset(0.6) },
        ];
        let pairs: Vec<(u32, u32)> =
            (0..5u32).flat_map(|u| (0..6u32).map(move |i| (u, i))).collect();
        let mut set = materialize(&models, "toy", &pairs, (1.0, 5.0), (5, 6)).unwrap();
        set.set_val_metrics(val);
        set
    }

    fn toy_split() -> SplitDataset {
        let mut interactions = Vec::new();
        for u in 0..5u32 {
            for k in 0..5u32 {
                let item = (u + k) % 6;
                interactions.push(Interaction {
                    user: u,
                    item,
                    rating: 1.0 + ((u + item) % 4) as f64,
                    ts: (k + 1) as i64,
                });
            }
        }
        chronological_leave_one_out(&RatingDataset {
            interactions,
            num_users: 5,
            num_items: 6,
            rating_scale: (1.0, 5.0),
        })
    }

    #[test]
    fn single_select_argmin_and_argmax() {
        let set = toy_set(&[1.2, 1.1, 1.3]);
        assert_eq!(single_select(&set, false).unwrap(), 1);
        assert_eq!(single_select(&set, true).unwrap(), 2);
    }

    #[test]
    fn single_select_tie_keeps_smaller_tag() {
        let set = toy_set(&[1.1, 1.1, 1.5]);
        assert_eq!(single_select(&set, false).unwrap(), 0);
        let set = toy_set(&[0.7, 0.7, 0.2]);
        assert_eq!(single_select(&set, true).unwrap(), 0);
    }

    #[test]
    fn single_select_is_monotone_invariant() {
        // argmin is unchanged by any strictly increasing transform.
        let raw = [1.4, 0.9, 2.2];
        let set_a = toy_set(&raw);
        let transformed: Vec<f64> = raw.iter().map(|v| (3.0 * v + 1.0).exp()).collect();
        let set_b = toy_set(&transformed);
        assert_eq!(
            single_select(&set_a, false).unwrap(),
            single_select(&set_b, false).unwrap()
        );
    }

    #[test]
    fn single_select_requires_metrics() {
        let models = vec![Tagged { tag: 10, model: Offset(0.0) }];
        let set = materialize(&models, "toy", &[(0, 0)], (1.0, 5.0), (5, 6)).unwrap();
        assert!(matches!(single_select(&set, false), Err(SnapError::Config(_))));
    }

    #[test]
    fn average_is_mean() {
        assert_eq!(average_combine(&[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(average_combine(&[2.5]), 2.5);
        assert_eq!(average_combine(&[4.0, 4.0]), 4.0);
    }

    #[test]
    fn se_is_average_on_the_set() {
        let set = toy_set(&[1.0, 1.0, 1.0]);
        let q_p = set.get(2, 3).unwrap();
        assert_eq!(se_combine(&set, 2, 3).unwrap(), average_combine(q_p));
        assert!(matches!(
            se_combine(&set, 9, 0).unwrap_err(),
            SnapError::MissingPair { user: 9, item: 0 }
        ));
    }

    #[test]
    fn zero_output_layer_weights_are_uniform() {
        let config = HseConfig::default();
        let mut model = HseModel::init(3, &config);
        model.w2 = Mat::zeros(config.hidden, 3);
        model.b2 = vec![0.0; 3];
        let q_p = [2.0, 3.0, 4.0];
        let w = model.weights(&q_p);
        for wi in &w {
            assert!((wi - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((model.predict(&q_p) - average_combine(&q_p)).abs() < 1e-12);
    }

    fn slot(m: &mut HseModel, gi: usize, k: usize) -> &mut f64 {
        match gi {
            0 => &mut m.w1.data[k],
            1 => &mut m.b1[k],
            2 => &mut m.w2.data[k],
            _ => &mut m.b2[k],
        }
    }

    fn central_diff(model: &mut HseModel, q_p: &[f64], y: &[f64], gi: usize, k: usize) -> f64 {
        let step = 1e-6;
        let orig = *slot(model, gi, k);
        *slot(model, gi, k) = orig + step;
        let up = kl_loss(y, &model.weights(q_p));
        *slot(model, gi, k) = orig - step;
        let down = kl_loss(y, &model.weights(q_p));
        *slot(model, gi, k) = orig;
        (up - down) / (2.0 * step)
    }

    #[test]
    fn hse_gradcheck_vs_finite_differences() {
        let config = HseConfig { hidden: 5, init_std: 0.1, seed: 3, ..Default::default() };
        let mut model = HseModel::init(3, &config);
        let q_p = [3.0, 3.4, 4.1];
        let y = [0.2, 0.5, 0.3];
        let grad = hse_backward(&model, &q_p, &y);

        let mut max_rel = 0.0f64;
        for gi in 0..4 {
            let len = match gi {
                0 => model.w1.data.len(),
                1 => model.b1.len(),
                2 => model.w2.data.len(),
                _ => model.b2.len(),
            };
            for k in 0..len {
                let an = match gi {
                    0 => grad.w1.data[k],
                    1 => grad.b1[k],
                    2 => grad.w2.data[k],
                    _ => grad.b2[k],
                };
                let fd = central_diff(&mut model, &q_p, &y, gi, k);
                let denom = fd.abs().max(an.abs());
                if denom > 1e-8 {
                    max_rel = max_rel.max((fd - an).abs() / denom);
                } else {
                    assert!((fd - an).abs() < 1e-8);
                }
            }
        }
        assert!(max_rel < 1e-4, "max relative gradient error {max_rel}");
    }

    #[test]
    fn hse_training_is_deterministic_and_learns() {
        let split = toy_split();
        let set = toy_set(&[1.0, 1.1, 1.2]);
        let config = HseConfig { max_epochs: 12, seed: 9, ..Default::default() };
        let a = hse_train(&set, &split, Task::Rating, &config).unwrap();
        let b = hse_train(&set, &split, Task::Rating, &config).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.epoch_kl, b.epoch_kl);
        // Snapshot 1 (tag 10) reproduces every rating here, so the labels
        // are constant and learnable.
        assert!(
            a.epoch_kl.last().unwrap() < &a.epoch_kl[0],
            "kl {:?}",
            a.epoch_kl
        );
        let c = hse_train(&set, &split, Task::Rating, &HseConfig { seed: 10, ..config }).unwrap();
        assert_ne!(a.model, c.model);
    }

    #[test]
    fn hse_prediction_stays_in_hull() {
        let split = toy_split();
        let set = toy_set(&[1.0, 1.1, 1.2]);
        let config = HseConfig { max_epochs: 4, seed: 11, ..Default::default() };
        let trained = hse_train(&set, &split, Task::Rating, &config).unwrap();
        for &(u, i) in set.pairs() {
            let q_p = set.get(u, i).unwrap();
            let pred = hse_predict(&trained.model, q_p);
            let lo = q_p.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = q_p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(pred >= lo - 1e-12 && pred <= hi + 1e-12);
        }
    }

    #[test]
    fn meta_ordering_is_validated_by_store() {
        // Guard: toy sets built here keep strictly increasing tags, the
        // invariant single_select leans on for its tie rule.
        let set = toy_set(&[1.0, 1.0, 1.0]);
        let tags: Vec<u32> = set.metas.iter().map(|m: &SnapshotMeta| m.tag).collect();
        assert!(tags.windows(2).all(|w| w[0] < w[1]));
    }
}
