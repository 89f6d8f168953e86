use crate::dataset::{RatingDataset, Task};
use crate::error::SnapError;
use crate::mat::{dot, Mat};
use crate::rng::{stream_rng, Stream};

use super::rsvd::TrainRun;
use super::{epoch_examples, mean_target, Predict, SgdConfig, SnapshotSchedule, Tagged};

/// Factorization machine over the (user, item) one-hot pair: with exactly
/// two active features the second-order term reduces to one factor dot.
/// Feature layout: users first, then items offset by num_users.
#[derive(Debug, Clone)]
pub struct FmModel {
    pub factors: usize,
    pub num_users: u32,
    pub w0: f64,
    pub w: Vec<f64>,
    pub v: Mat,
}

impl FmModel {
    #[inline]
    fn item_feat(&self, item: u32) -> usize {
        self.num_users as usize + item as usize
    }
}

impl Predict for FmModel {
    fn predict(&self, user: u32, item: u32) -> f64 {
        let (a, b) = (user as usize, self.item_feat(item));
        self.w0 + self.w[a] + self.w[b] + dot(self.v.row(a), self.v.row(b))
    }
}

/// SGD on squared error; L2 on linear weights and factors, none on w0.
pub fn train_fm_sgd(
    train: &RatingDataset,
    task: Task,
    cfg: &SgdConfig,
    schedule: &SnapshotSchedule,
) -> Result<TrainRun<FmModel>, SnapError> {
    schedule.validate()?;
    let num_feats = (train.num_users + train.num_items) as usize;
    let mut rng = stream_rng(cfg.seed, Stream::BaseInit, 1);
    let mut model = FmModel {
        factors: cfg.factors,
        num_users: train.num_users,
        w0: mean_target(train, task),
        w: vec![0.0; num_feats],
        v: Mat::randn(num_feats, cfg.factors, 0.01, &mut rng),
    };

    let mut snapshots = Vec::with_capacity(schedule.num_snapshots());
    let mut epoch_rmse = Vec::with_capacity(schedule.max_epoch() as usize);
    let mut va_old = vec![0.0; cfg.factors];

    for epoch in 1..=schedule.max_epoch() {
        let lr = schedule.lr_at(epoch - 1, cfg.lr);
        let examples = epoch_examples(train, task, cfg.seed, epoch);
        let mut sq_sum = 0.0;
        for &(u, i, r) in &examples {
            let (a, b) = (u as usize, model.item_feat(i));
            let e = r - (model.w0 + model.w[a] + model.w[b] + dot(model.v.row(a), model.v.row(b)));
            sq_sum += e * e;
            model.w0 += lr * e;
            model.w[a] += lr * (e - cfg.reg * model.w[a]);
            model.w[b] += lr * (e - cfg.reg * model.w[b]);
            va_old.copy_from_slice(model.v.row(a));
            let vb = model.v.row(b).to_vec();
            let va = model.v.row_mut(a);
            for f in 0..cfg.factors {
                va[f] += lr * (e * vb[f] - cfg.reg * va[f]);
            }
            let vb = model.v.row_mut(b);
            for f in 0..cfg.factors {
                vb[f] += lr * (e * va_old[f] - cfg.reg * vb[f]);
            }
        }
        let rmse = (sq_sum / examples.len() as f64).sqrt();
        if !rmse.is_finite() {
            return Err(SnapError::Diverged {
                epoch,
                what: "non-finite training error".into(),
            });
        }
        epoch_rmse.push(rmse);
        if schedule.captures_at(epoch) {
            snapshots.push(Tagged {
                tag: epoch,
                model: model.clone(),
            });
        }
    }

    Ok(TrainRun {
        snapshots,
        epoch_rmse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Interaction;

    fn single_pair(rating: f64) -> RatingDataset {
        RatingDataset {
            interactions: vec![Interaction { user: 0, item: 0, rating, ts: 1 }],
            num_users: 1,
            num_items: 1,
            rating_scale: (1.0, 5.0),
        }
    }

    #[test]
    fn zero_interaction_model_predicts_w0() {
        let model = FmModel {
            factors: 4,
            num_users: 3,
            w0: 3.7,
            w: vec![0.0; 8],
            v: Mat::zeros(8, 4),
        };
        assert_eq!(model.predict(1, 2), 3.7);
        assert_eq!(model.predict(0, 4), 3.7);
    }

    #[test]
    fn snapshot_count_follows_schedule() {
        let ds = single_pair(4.0);
        let schedule = SnapshotSchedule::EveryDeltaT { delta_t: 10, max_epoch: 50 };
        let run = train_fm_sgd(&ds, Task::Rating, &SgdConfig::default(), &schedule).unwrap();
        assert_eq!(run.snapshots.len(), 5);
        assert_eq!(run.snapshots[4].tag, 50);
    }

    #[test]
    fn overfits_single_pair() {
        let ds = single_pair(2.0);
        let cfg = SgdConfig { lr: 0.1, reg: 0.0, seed: 5, ..SgdConfig::default() };
        let schedule = SnapshotSchedule::EveryDeltaT { delta_t: 200, max_epoch: 200 };
        let run = train_fm_sgd(&ds, Task::Rating, &cfg, &schedule).unwrap();
        let p = run.snapshots[0].model.predict(0, 0);
        assert!((p - 2.0).abs() < 1e-3, "prediction {p}");
    }

    #[test]
    fn ranking_task_trains_toward_positive_scores() {
        let mut interactions = Vec::new();
        for u in 0..4u32 {
            for i in 0..3u32 {
                interactions.push(Interaction {
                    user: u,
                    item: u + i,
                    rating: 1.0,
                    ts: (u + i) as i64,
                });
            }
        }
        let ds = RatingDataset {
            interactions,
            num_users: 4,
            num_items: 12,
            rating_scale: (1.0, 1.0),
        };
        let cfg = SgdConfig { lr: 0.05, seed: 2, ..SgdConfig::default() };
        let schedule = SnapshotSchedule::EveryDeltaT { delta_t: 60, max_epoch: 60 };
        let run = train_fm_sgd(&ds, Task::Ranking, &cfg, &schedule).unwrap();
        let model = &run.snapshots[0].model;
        // Observed pairs should outscore the never-drawn-positive items.
        let pos = model.predict(0, 0);
        let neg = model.predict(0, 11);
        assert!(pos > neg, "pos {pos} <= neg {neg}");
    }
}
