use crate::dataset::{RatingDataset, Task};
use crate::error::SnapError;
use crate::mat::{dot, Mat};
use crate::rng::{stream_rng, Stream};

use super::{epoch_examples, mean_target, Predict, SgdConfig, SnapshotSchedule, Tagged};

/// Biased matrix factorization: mu + b_u + b_i + U_u . V_i.
#[derive(Debug, Clone)]
pub struct MfModel {
    pub factors: usize,
    pub global_mean: f64,
    pub user_bias: Vec<f64>,
    pub item_bias: Vec<f64>,
    pub user_factors: Mat,
    pub item_factors: Mat,
}

impl Predict for MfModel {
    fn predict(&self, user: u32, item: u32) -> f64 {
        self.global_mean
            + self.user_bias[user as usize]
            + self.item_bias[item as usize]
            + dot(
                self.user_factors.row(user as usize),
                self.item_factors.row(item as usize),
            )
    }
}

/// A finished SGD run: the scheduled snapshots plus per-epoch training RMSE
/// (pre-update residuals) for descent checks.
#[derive(Debug, Clone)]
pub struct TrainRun<M> {
    pub snapshots: Vec<Tagged<M>>,
    pub epoch_rmse: Vec<f64>,
}

/// SGD on squared error with L2 on factors and biases. Snapshots are deep
/// copies taken at schedule epochs.
pub fn train_rsvd(
    train: &RatingDataset,
    task: Task,
    cfg: &SgdConfig,
    schedule: &SnapshotSchedule,
) -> Result<TrainRun<MfModel>, SnapError> {
    schedule.validate()?;
    let mut rng = stream_rng(cfg.seed, Stream::BaseInit, 0);
    let mut model = MfModel {
        factors: cfg.factors,
        global_mean: mean_target(train, task),
        user_bias: vec![0.0; train.num_users as usize],
        item_bias: vec![0.0; train.num_items as usize],
        user_factors: Mat::randn(train.num_users as usize, cfg.factors, 0.01, &mut rng),
        item_factors: Mat::randn(train.num_items as usize, cfg.factors, 0.01, &mut rng),
    };

    let mut snapshots = Vec::with_capacity(schedule.num_snapshots());
    let mut epoch_rmse = Vec::with_capacity(schedule.max_epoch() as usize);
    let mut v_old = vec![0.0; cfg.factors];

    for epoch in 1..=schedule.max_epoch() {
        let lr = schedule.lr_at(epoch - 1, cfg.lr);
        let examples = epoch_examples(train, task, cfg.seed, epoch);
        let mut sq_sum = 0.0;
        for &(u, i, r) in &examples {
            let (u, i) = (u as usize, i as usize);
            let e = r - (model.global_mean
                + model.user_bias[u]
                + model.item_bias[i]
                + dot(model.user_factors.row(u), model.item_factors.row(i)));
            sq_sum += e * e;
            model.user_bias[u] += lr * (e - cfg.reg * model.user_bias[u]);
            model.item_bias[i] += lr * (e - cfg.reg * model.item_bias[i]);
            v_old.copy_from_slice(model.item_factors.row(i));
            let pu = model.user_factors.row_mut(u);
            for f in 0..cfg.factors {
                let puf = pu[f];
                pu[f] += lr * (e * v_old[f] - cfg.reg * puf);
            }
            let qi = model.item_factors.row_mut(i);
            let pu = model.user_factors.row(u);
            for f in 0..cfg.factors {
                // Uses the updated user factor; classic in-place SGD order.
                qi[f] += lr * (e * pu[f] - cfg.reg * qi[f]);
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
