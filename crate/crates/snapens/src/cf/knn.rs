use std::sync::Arc;

use crate::dataset::RatingDataset;
use crate::mat::Mat;
use crate::parallel::{map_range, map_range_seq};

use super::{Predict, Tagged};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnnKind {
    User,
    Item,
}

/// Train ratings in both orientations plus the fallback means. Mean vectors
/// substitute the global mean for users/items with no train ratings, which
/// collapses the fallback chain into one lookup.
#[derive(Debug)]
pub struct TrainView {
    pub by_user: Vec<Vec<(u32, f64)>>,
    pub by_item: Vec<Vec<(u32, f64)>>,
    pub user_mean: Vec<f64>,
    pub item_mean: Vec<f64>,
    pub global_mean: f64,
}

impl TrainView {
    pub fn build(train: &RatingDataset) -> TrainView {
        let mut by_user: Vec<Vec<(u32, f64)>> = vec![Vec::new(); train.num_users as usize];
        let mut by_item: Vec<Vec<(u32, f64)>> = vec![Vec::new(); train.num_items as usize];
        for it in &train.interactions {
            by_user[it.user as usize].push((it.item, it.rating));
            by_item[it.item as usize].push((it.user, it.rating));
        }
        for list in by_user.iter_mut().chain(by_item.iter_mut()) {
            list.sort_by_key(|&(id, _)| id);
        }
        let global_mean = train.global_mean();
        let mean = |lists: &[Vec<(u32, f64)>]| -> Vec<f64> {
            lists
                .iter()
                .map(|l| {
                    if l.is_empty() {
                        global_mean
                    } else {
                        l.iter().map(|&(_, r)| r).sum::<f64>() / l.len() as f64
                    }
                })
                .collect()
        };
        TrainView {
            user_mean: mean(&by_user),
            item_mean: mean(&by_item),
            by_user,
            by_item,
            global_mean,
        }
    }
}

/// Dense symmetric similarity table over users or items.
#[derive(Debug)]
pub struct SimTable {
    pub vals: Mat,
}

impl SimTable {
    #[inline]
    pub fn get(&self, a: u32, b: u32) -> f64 {
        self.vals.at(a as usize, b as usize)
    }
}

/// Cosine over sparse vectors sorted by index: dot over co-occurring
/// coordinates, norms over each full vector, 0 when either norm is 0.
pub fn cosine_similarity(a: &[(u32, f64)], b: &[(u32, f64)]) -> f64 {
    let norm = |v: &[(u32, f64)]| v.iter().map(|&(_, x)| x * x).sum::<f64>().sqrt();
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let mut dot = 0.0;
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dot += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    dot / (na * nb)
}

/// One similarity row via co-rater traversal; equals [`cosine_similarity`]
/// over the mean-centered vectors up to summation order. `rows` holds the
/// entity's ratings, `cross` the transposed view.
fn sim_row(
    i: usize,
    rows: &[Vec<(u32, f64)>],
    cross: &[Vec<(u32, f64)>],
    means: &[f64],
    norms: &[f64],
) -> Vec<f64> {
    let mut dots = vec![0.0; rows.len()];
    for &(c, r) in &rows[i] {
        let ci = r - means[i];
        for &(j, rj) in &cross[c as usize] {
            dots[j as usize] += ci * (rj - means[j as usize]);
        }
    }
    for (j, d) in dots.iter_mut().enumerate() {
        *d = if norms[i] == 0.0 || norms[j] == 0.0 {
            0.0
        } else {
            (*d / (norms[i] * norms[j])).clamp(-1.0, 1.0)
        };
    }
    dots
}

fn centered_norms(rows: &[Vec<(u32, f64)>], means: &[f64]) -> Vec<f64> {
    rows.iter()
        .enumerate()
        .map(|(i, l)| {
            l.iter()
                .map(|&(_, r)| (r - means[i]) * (r - means[i]))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

fn assemble(n: usize, row_vals: Vec<Vec<f64>>) -> SimTable {
    let mut vals = Mat::zeros(n, n);
    for (i, row) in row_vals.into_iter().enumerate() {
        vals.row_mut(i).copy_from_slice(&row);
    }
    SimTable { vals }
}

/// Similarity table over mean-centered train vectors, rows in parallel.
pub fn build_sim_table(view: &TrainView, kind: KnnKind) -> SimTable {
    let (rows, cross, means) = orient(view, kind);
    let norms = centered_norms(rows, means);
    let n = rows.len();
    assemble(n, map_range(n, |i| sim_row(i, rows, cross, means, &norms)))
}

/// Sequential twin of [`build_sim_table`]; bit-identical output.
pub fn build_sim_table_seq(view: &TrainView, kind: KnnKind) -> SimTable {
    let (rows, cross, means) = orient(view, kind);
    let norms = centered_norms(rows, means);
    let n = rows.len();
    assemble(
        n,
        map_range_seq(n, |i| sim_row(i, rows, cross, means, &norms)),
    )
}

type Oriented<'a> = (&'a [Vec<(u32, f64)>], &'a [Vec<(u32, f64)>], &'a [f64]);

fn orient(view: &TrainView, kind: KnnKind) -> Oriented<'_> {
    match kind {
        KnnKind::Item => (&view.by_item, &view.by_user, &view.item_mean),
        KnnKind::User => (&view.by_user, &view.by_item, &view.user_mean),
    }
}

/// Neighborhood model at a fixed k over a shared similarity table.
/// Prediction: similarity-weighted mean of the raw ratings of the top-k
/// positive-similarity neighbors who rated the target, else the user (or
/// item) mean, else the global mean.
#[derive(Debug, Clone)]
pub struct KnnModel {
    pub kind: KnnKind,
    pub k: usize,
    sims: Arc<SimTable>,
    view: Arc<TrainView>,
}

impl Predict for KnnModel {
    fn predict(&self, user: u32, item: u32) -> f64 {
        // (target in the similarity table, candidates, fallback mean)
        let (target, cands, fallback) = match self.kind {
            KnnKind::Item => (
                item,
                &self.view.by_user[user as usize],
                self.view.item_mean[item as usize],
            ),
            KnnKind::User => (
                user,
                &self.view.by_item[item as usize],
                self.view.user_mean[user as usize],
            ),
        };
        let skip = match self.kind {
            KnnKind::Item => item,
            KnnKind::User => user,
        };
        let mut scored: Vec<(f64, u32, f64)> = cands
            .iter()
            .filter(|&&(id, _)| id != skip)
            .map(|&(id, r)| (self.sims.get(target, id), id, r))
            .filter(|&(sim, _, _)| sim > 0.0)
            .collect();
        if scored.is_empty() {
            return fallback;
        }
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        scored.truncate(self.k);
        let wsum: f64 = scored.iter().map(|&(s, _, _)| s).sum();
        let acc: f64 = scored.iter().map(|&(s, _, r)| s * r).sum();
        acc / wsum
    }
}

/// One model per neighbor count, all sharing a single similarity table
/// built from mean-centered train vectors.
pub fn knn_snapshots(train: &RatingDataset, kind: KnnKind, k_list: &[u32]) -> Vec<Tagged<KnnModel>> {
    assert!(!k_list.is_empty(), "k_list must be non-empty");
    let view = Arc::new(TrainView::build(train));
    let sims = Arc::new(build_sim_table(&view, kind));
    k_list
        .iter()
        .map(|&k| Tagged {
            tag: k,
            model: KnnModel {
                kind,
                k: k as usize,
                sims: Arc::clone(&sims),
                view: Arc::clone(&view),
            },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Interaction;

    fn ds(rows: &[(u32, u32, f64)]) -> RatingDataset {
        RatingDataset {
            interactions: rows
                .iter()
                .enumerate()
                .map(|(t, &(user, item, rating))| Interaction {
                    user,
                    item,
                    rating,
                    ts: t as i64,
                })
                .collect(),
            num_users: rows.iter().map(|r| r.0).max().unwrap() + 1,
            num_items: rows.iter().map(|r| r.1).max().unwrap() + 1,
            rating_scale: (1.0, 5.0),
        }
    }

    #[test]
    fn cosine_identity_and_colinear() {
        let a = vec![(0u32, 1.0), (3u32, 2.0)];
        assert!((cosine_similarity(&a, &a) - 1.0).abs() < 1e-12);
        let b = vec![(0u32, 2.0), (3u32, 4.0)];
        assert!((cosine_similarity(&a, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_orthogonal_and_zero() {
        let a = vec![(0u32, 1.0)];
        let b = vec![(1u32, 1.0)];
        assert_eq!(cosine_similarity(&a, &b), 0.0);
        assert_eq!(cosine_similarity(&a, &[]), 0.0);
        // Norms span the full vectors even where supports differ.
        let c = vec![(0u32, 3.0), (1u32, 4.0)];
        let d = vec![(0u32, 5.0)];
        assert!((cosine_similarity(&c, &d) - 3.0 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn identical_nonconstant_users_have_similarity_one() {
        let data = ds(&[
            (0, 0, 5.0), (0, 1, 1.0), (0, 2, 3.0),
            (1, 0, 5.0), (1, 1, 1.0), (1, 2, 3.0),
            (2, 0, 1.0), (2, 1, 5.0),
        ]);
        let models = knn_snapshots(&data, KnnKind::User, &[1]);
        let sims = &models[0].model.sims;
        assert!((sims.get(0, 1) - 1.0).abs() < 1e-12);
        assert!(sims.get(0, 2) < 0.0, "opposite tastes should anticorrelate");
    }

    #[test]
    fn table_matches_pairwise_cosine_on_centered_vectors() {
        let data = ds(&[
            (0, 0, 5.0), (0, 1, 1.0), (0, 2, 4.0),
            (1, 0, 4.0), (1, 1, 2.0),
            (2, 1, 3.0), (2, 2, 2.0),
        ]);
        let view = TrainView::build(&data);
        let table = build_sim_table(&view, KnnKind::Item);
        assert_eq!(
            table.vals.data,
            build_sim_table_seq(&view, KnnKind::Item).vals.data,
            "parallel and sequential builds must agree bit-exactly"
        );
        for i in 0..3u32 {
            for j in 0..3u32 {
                if i == j {
                    continue;
                }
                let center = |id: u32| -> Vec<(u32, f64)> {
                    view.by_item[id as usize]
                        .iter()
                        .map(|&(u, r)| (u, r - view.item_mean[id as usize]))
                        .collect()
                };
                let expect = cosine_similarity(&center(i), &center(j));
                assert!(
                    (table.get(i, j) - expect).abs() < 1e-12,
                    "sim({i},{j}) = {} vs {expect}",
                    table.get(i, j)
                );
            }
        }
    }

    #[test]
    fn oversized_k_values_agree() {
        let data = ds(&[
            (0, 0, 5.0), (0, 1, 1.0), (0, 2, 4.0), (0, 3, 2.0),
            (1, 0, 4.0), (1, 1, 2.0), (1, 3, 5.0),
            (2, 1, 3.0), (2, 2, 2.0), (2, 3, 4.0),
        ]);
        let models = knn_snapshots(&data, KnnKind::Item, &[50, 100]);
        for u in 0..3 {
            for i in 0..4 {
                let a = models[0].model.predict(u, i);
                let b = models[1].model.predict(u, i);
                assert_eq!(a, b, "k beyond neighbor count must not matter");
            }
        }
    }

    #[test]
    fn fallback_means_used_without_neighbors() {
        // User 2 rated only item 2; item 2 is otherwise unrated, so
        // sim(2, j) = 0 (single rating centers to zero) and prediction for
        // (2, 0) falls back to item 0's mean.
        let data = ds(&[
            (0, 0, 5.0), (0, 1, 1.0),
            (1, 0, 3.0), (1, 1, 2.0),
            (2, 2, 4.0),
        ]);
        let models = knn_snapshots(&data, KnnKind::Item, &[10]);
        let p = models[0].model.predict(2, 0);
        assert!((p - 4.0).abs() < 1e-12, "expected item-0 mean 4.0, got {p}");
    }

    #[test]
    fn weighted_mean_over_topk() {
        let data = ds(&[
            (0, 0, 5.0), (0, 1, 1.0), (0, 2, 4.0),
            (1, 0, 4.0), (1, 1, 2.0), (1, 2, 5.0),
            (2, 0, 2.0), (2, 1, 5.0),
        ]);
        let models = knn_snapshots(&data, KnnKind::Item, &[2]);
        let model = &models[0].model;
        // Manual recomputation of the weighted mean for (2, 2).
        let s0 = model.sims.get(2, 0);
        let s1 = model.sims.get(2, 1);
        let mut cands: Vec<(f64, f64)> = Vec::new();
        if s0 > 0.0 {
            cands.push((s0, 2.0));
        }
        if s1 > 0.0 {
            cands.push((s1, 5.0));
        }
        assert!(!cands.is_empty());
        let expect: f64 = cands.iter().map(|(s, r)| s * r).sum::<f64>()
            / cands.iter().map(|(s, _)| s).sum::<f64>();
        assert!((model.predict(2, 2) - expect).abs() < 1e-12);
    }

    #[test]
    fn snapshot_per_k() {
        let data = ds(&[(0, 0, 5.0), (1, 0, 4.0), (1, 1, 2.0)]);
        let models = knn_snapshots(&data, KnnKind::User, &[10, 20, 30]);
        let tags: Vec<u32> = models.iter().map(|m| m.tag).collect();
        assert_eq!(tags, vec![10, 20, 30]);
    }
}
