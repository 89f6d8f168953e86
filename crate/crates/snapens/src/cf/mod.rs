//! Base collaborative-filtering models and snapshot capture.
//!
//! The SGD trainers (RSVD, FM) walk a fixed schedule and deep-copy the model
//! at capture epochs; KNN "snapshots" are one model per neighbor count over
//! a shared similarity table. Downstream only the predictions matter, so
//! snapshots expose nothing beyond [`Predict`].

mod fm;
mod knn;
mod rsvd;
mod schedule;

pub use fm::{train_fm_sgd, FmModel};
pub use knn::{
    build_sim_table, build_sim_table_seq, cosine_similarity, knn_snapshots, KnnKind, KnnModel,
    SimTable, TrainView,
};
pub use rsvd::{train_rsvd, MfModel, TrainRun};
pub use schedule::{cyclic_lr, SnapshotSchedule};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dataset::{RatingDataset, Task};
use crate::rng::{stream_rng, Stream};

/// Negatives drawn per positive when a trainer runs in ranking mode.
pub const NEG_PER_POS: usize = 4;

/// Anything that scores a user-item pair.
pub trait Predict {
    fn predict(&self, user: u32, item: u32) -> f64;
}

/// A captured model and its tag: the epoch it was copied at for SGD
/// trainers, the neighbor count for KNN.
#[derive(Debug, Clone)]
pub struct Tagged<M> {
    pub tag: u32,
    pub model: M,
}

/// Shared SGD hyperparameters.
#[derive(Debug, Clone)]
pub struct SgdConfig {
    pub factors: usize,
    pub lr: f64,
    pub reg: f64,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            factors: 8,
            lr: 0.005,
            reg: 0.02,
            seed: 0,
        }
    }
}

/// Examples for one training epoch, shuffled. Rating task: the observed
/// triples. Ranking task: each observed pair with target 1.0 plus
/// [`NEG_PER_POS`] fresh unobserved items with target 0.0; negatives are
/// redrawn every epoch (only train-set interactions are excluded, since
/// trainers never see the other partitions).
pub fn epoch_examples(
    train: &RatingDataset,
    task: Task,
    seed: u64,
    epoch: u32,
) -> Vec<(u32, u32, f64)> {
    let mut examples: Vec<(u32, u32, f64)> = match task {
        Task::Rating => train
            .interactions
            .iter()
            .map(|it| (it.user, it.item, it.rating))
            .collect(),
        Task::Ranking => {
            let mut rated: Vec<std::collections::HashSet<u32>> =
                vec![std::collections::HashSet::new(); train.num_users as usize];
            for it in &train.interactions {
                rated[it.user as usize].insert(it.item);
            }
            let mut rng = stream_rng(seed, Stream::BaseNegatives, epoch as u64);
            let mut out = Vec::with_capacity(train.interactions.len() * (1 + NEG_PER_POS));
            for it in &train.interactions {
                out.push((it.user, it.item, 1.0));
                let seen = &rated[it.user as usize];
                let mut drawn = 0;
                while drawn < NEG_PER_POS {
                    let j = rng.gen_range(0..train.num_items);
                    if !seen.contains(&j) {
                        out.push((it.user, j, 0.0));
                        drawn += 1;
                    }
                }
            }
            out
        }
    };
    let mut rng = stream_rng(seed, Stream::BaseShuffle, epoch as u64);
    examples.shuffle(&mut rng);
    examples
}

/// Mean training target: the global rating mean, or the positive fraction
/// under ranking negative sampling.
pub fn mean_target(train: &RatingDataset, task: Task) -> f64 {
    match task {
        Task::Rating => train.global_mean(),
        Task::Ranking => 1.0 / (1.0 + NEG_PER_POS as f64),
    }
}
