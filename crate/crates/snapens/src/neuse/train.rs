use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::cf::NEG_PER_POS;
use crate::dataset::{negatives_for, NeighborIndex, SplitDataset, Task};
use crate::error::SnapError;
use crate::mat::dot;
use crate::metrics::{hr_at_n, mean, rank_in, rmse};
use crate::parallel::{map_slice, map_slice_seq};
use crate::rng::{example_rng, stream_rng, sub_seed, Stream};
use crate::snapshot::SnapshotSet;

use super::adam::{adam_step, AdamState};
use super::backward::{backward, PairGrad};
use super::config::{Dims, NeuSEConfig};
use super::forward::{forward, Mode};
use super::params::{init_params, NeuSEParams};
use super::soft_label::{optimal_tag, soft_labels};

/// Negatives ranked against each validation positive when tracking the
/// best epoch on ranking tasks.
pub const VAL_NEGATIVES: usize = 99;
const VAL_CUTOFF: usize = 20;

/// One training example with its soft label frozen up front; `idx` is the
/// example's stable position, which keys its per-epoch dropout stream.
#[derive(Debug, Clone)]
pub struct PreparedExample {
    pub user: u32,
    pub item: u32,
    pub y: Vec<f64>,
    pub idx: u64,
}

/// Fixed ranking negatives, `NEG_PER_POS` per train positive, keyed by the
/// positive's position in the train interaction list. Example preparation
/// and snapshot materialization both call this, so the pairs they see are
/// identical by construction.
pub fn ranking_negatives(split: &SplitDataset, seed: u64) -> Result<Vec<Vec<u32>>, SnapError> {
    let num_items = split.train.num_items;
    let mut interacted: Vec<HashSet<u32>> =
        vec![HashSet::new(); split.train.num_users as usize];
    for part in [&split.train, &split.validation, &split.test] {
        for it in &part.interactions {
            interacted[it.user as usize].insert(it.item);
        }
    }
    let mut out = Vec::with_capacity(split.train.interactions.len());
    for (idx, it) in split.train.interactions.iter().enumerate() {
        let seen = &interacted[it.user as usize];
        let have = num_items as usize - seen.len();
        if have < NEG_PER_POS {
            return Err(SnapError::TooFewCandidates { user: it.user, have, need: NEG_PER_POS });
        }
        let mut rng = example_rng(seed, Stream::TrainNegatives, 0, idx as u64);
        let mut negs: Vec<u32> = Vec::with_capacity(NEG_PER_POS);
        while negs.len() < NEG_PER_POS {
            let cand = rng.gen_range(0..num_items);
            if !seen.contains(&cand) && !negs.contains(&cand) {
                negs.push(cand);
            }
        }
        out.push(negs);
    }
    Ok(out)
}

/// Soft-label every train example against the snapshot predictions. Rating
/// targets are the held ratings; ranking targets are 1 for the observed
/// pair and 0 for its fixed negatives. Every ensemble learner trains on
/// this same example stream, so comparisons stay controlled.
pub fn prepare_examples(
    set: &SnapshotSet,
    split: &SplitDataset,
    task: Task,
    alpha: f64,
    seed: u64,
) -> Result<Vec<PreparedExample>, SnapError> {
    let tags = set.tags();
    let mut out: Vec<PreparedExample> = Vec::new();
    let push = |out: &mut Vec<PreparedExample>, user: u32, item: u32, target: f64| {
        let preds = set.expect(user, item)?;
        let e_o = optimal_tag(&tags, preds, target);
        let y = soft_labels(&tags, e_o, alpha).y;
        out.push(PreparedExample { user, item, y, idx: out.len() as u64 });
        Ok::<(), SnapError>(())
    };
    match task {
        Task::Rating => {
            for it in &split.train.interactions {
                push(&mut out, it.user, it.item, it.rating)?;
            }
        }
        Task::Ranking => {
            let negatives = ranking_negatives(split, seed)?;
            for (pidx, it) in split.train.interactions.iter().enumerate() {
                push(&mut out, it.user, it.item, 1.0)?;
                for &neg in &negatives[pidx] {
                    push(&mut out, it.user, neg, 0.0)?;
                }
            }
        }
    }
    Ok(out)
}

/// Final blended prediction: simplex-weighted snapshot outputs.
pub fn ensemble_predict(y_hat: &[f64], q_p: &[f64]) -> f64 {
    assert_eq!(y_hat.len(), q_p.len());
    dot(y_hat, q_p)
}

fn example_grad(
    ex: &PreparedExample,
    params: &NeuSEParams,
    set: &SnapshotSet,
    neighbors: &NeighborIndex,
    config: &NeuSEConfig,
    epoch: u32,
) -> Result<PairGrad, SnapError> {
    let q_p = set.expect(ex.user, ex.item)?;
    let mut rng = example_rng(config.seed, Stream::Dropout, epoch as u64, ex.idx);
    let trace = forward(
        ex.user,
        ex.item,
        q_p,
        neighbors,
        params,
        config,
        Mode::Train(&mut rng),
    )?;
    Ok(backward(&trace, &ex.y, params, config))
}

/// Per-example gradients for one batch, in batch order. Runs on the rayon
/// pool when the parallel feature is on; per-example dropout streams and
/// the caller's in-order fold keep the result identical either way.
pub fn batch_gradients(
    examples: &[PreparedExample],
    batch: &[usize],
    params: &NeuSEParams,
    set: &SnapshotSet,
    neighbors: &NeighborIndex,
    config: &NeuSEConfig,
    epoch: u32,
) -> Result<Vec<PairGrad>, SnapError> {
    map_slice(batch, |&i| {
        example_grad(&examples[i], params, set, neighbors, config, epoch)
    })
    .into_iter()
    .collect()
}

/// Sequential twin of [`batch_gradients`], for the comparison benches.
pub fn batch_gradients_seq(
    examples: &[PreparedExample],
    batch: &[usize],
    params: &NeuSEParams,
    set: &SnapshotSet,
    neighbors: &NeighborIndex,
    config: &NeuSEConfig,
    epoch: u32,
) -> Result<Vec<PairGrad>, SnapError> {
    map_slice_seq(batch, |&i| {
        example_grad(&examples[i], params, set, neighbors, config, epoch)
    })
    .into_iter()
    .collect()
}

/// Dropout-free predictions for arbitrary pairs, in input order. Every
/// pair must be present in the snapshot set.
pub fn predict_pairs(
    params: &NeuSEParams,
    set: &SnapshotSet,
    neighbors: &NeighborIndex,
    config: &NeuSEConfig,
    pairs: &[(u32, u32)],
) -> Result<Vec<f64>, SnapError> {
    map_slice(pairs, |&(user, item)| {
        let q_p = set.expect(user, item)?;
        let trace = forward(user, item, q_p, neighbors, params, config, Mode::Infer)?;
        Ok(ensemble_predict(&trace.y_hat, q_p))
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone)]
pub struct TrainedNeuSE {
    pub params: NeuSEParams,
    /// Mean train KL per epoch, in epoch order.
    pub epoch_kl: Vec<f64>,
    /// Epoch whose parameters were kept (1-based; 0 when untrained).
    pub best_epoch: u32,
    /// Validation metric of the kept epoch: RMSE for rating tasks, hit
    /// ratio for ranking. None when the validation split is empty.
    pub best_val: Option<f64>,
}

fn validation_metric(
    params: &NeuSEParams,
    set: &SnapshotSet,
    split: &SplitDataset,
    neighbors: &NeighborIndex,
    task: Task,
    config: &NeuSEConfig,
) -> Result<Option<f64>, SnapError> {
    if split.validation.interactions.is_empty() {
        return Ok(None);
    }
    match task {
        Task::Rating => {
            let pairs: Vec<(u32, u32)> = split
                .validation
                .interactions
                .iter()
                .map(|it| (it.user, it.item))
                .collect();
            let preds = predict_pairs(params, set, neighbors, config, &pairs)?;
            let (lo, hi) = task.clip_scale(split.train.rating_scale);
            let clipped: Vec<f64> = preds.iter().map(|p| p.clamp(lo, hi)).collect();
            let truths: Vec<f64> =
                split.validation.interactions.iter().map(|it| it.rating).collect();
            Ok(Some(rmse(&clipped, &truths)))
        }
        Task::Ranking => {
            let negatives = negatives_for(
                &split.validation,
                split,
                VAL_NEGATIVES,
                sub_seed(config.seed, Stream::ValNegatives, 0),
            )?;
            let mut pairs: Vec<(u32, u32)> = Vec::new();
            for (it, (user, negs)) in
                split.validation.interactions.iter().zip(&negatives.per_example)
            {
                debug_assert_eq!(it.user, *user);
                pairs.push((it.user, it.item));
                for &n in negs {
                    pairs.push((it.user, n));
                }
            }
            let scores = predict_pairs(params, set, neighbors, config, &pairs)?;
            let mut hits = Vec::with_capacity(split.validation.interactions.len());
            let mut cursor = 0usize;
            for (it, (_, negs)) in
                split.validation.interactions.iter().zip(&negatives.per_example)
            {
                let width = 1 + negs.len();
                let slice = &pairs[cursor..cursor + width];
                let scored: Vec<(u32, f64)> = slice
                    .iter()
                    .zip(&scores[cursor..cursor + width])
                    .map(|(&(_, item), &s)| (item, s))
                    .collect();
                hits.push(hr_at_n(rank_in(&scored, it.item), VAL_CUTOFF));
                cursor += width;
            }
            Ok(Some(mean(&hits)))
        }
    }
}

/// Mini-batch Adam on the KL between soft labels and the predicted
/// simplex. Keeps the parameters of the best validation epoch (lowest
/// RMSE or highest hit ratio); without a validation split, the final
/// epoch wins. Fully deterministic under `config.seed`.
pub fn train_neuse(
    set: &SnapshotSet,
    split: &SplitDataset,
    neighbors: &NeighborIndex,
    task: Task,
    config: &NeuSEConfig,
) -> Result<TrainedNeuSE, SnapError> {
    config.validate()?;
    let dims = Dims {
        num_users: split.train.num_users as usize,
        num_items: split.train.num_items as usize,
        n_m: set.n_m(),
        d: config.d,
        hops: config.hops,
    };
    let mut params = init_params(dims, config);
    let examples = prepare_examples(set, split, task, config.alpha, config.seed)?;
    let mut state = AdamState::new(&params);
    let mut epoch_kl = Vec::with_capacity(config.max_epochs as usize);
    let mut best: Option<(u32, f64, NeuSEParams)> = None;

    if examples.is_empty() {
        return Ok(TrainedNeuSE { params, epoch_kl, best_epoch: 0, best_val: None });
    }

    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut stream_rng(config.seed, Stream::NetShuffle, epoch as u64));

        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let grads = batch_gradients(&examples, batch, &params, set, neighbors, config, epoch)?;
            let mut accum = NeuSEParams::zeros(dims);
            let scale = 1.0 / batch.len() as f64;
            for g in &grads {
                g.fold_into(&mut accum, scale);
                loss_sum += g.loss;
            }
            adam_step(&mut params, &accum, &mut state, config);
        }
        let kl = loss_sum / examples.len() as f64;
        if !kl.is_finite() {
            return Err(SnapError::Diverged { epoch, what: "mean train KL".into() });
        }
        epoch_kl.push(kl);

        if let Some(metric) =
            validation_metric(&params, set, split, neighbors, task, config)?
        {
            let improved = match (&best, task) {
                (None, _) => true,
                (Some((_, cur, _)), Task::Rating) => metric < *cur,
                (Some((_, cur, _)), Task::Ranking) => metric > *cur,
            };
            if improved {
                best = Some((epoch, metric, params.clone()));
            }
        }
    }

    Ok(match best {
        Some((best_epoch, best_val, params)) => {
            TrainedNeuSE { params, epoch_kl, best_epoch, best_val: Some(best_val) }
        }
        None => TrainedNeuSE { params, epoch_kl, best_epoch: config.max_epochs, best_val: None },
    })
}
