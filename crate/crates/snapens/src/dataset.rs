//! Rating data: loading, chronological leave-one-out splitting, fixed
//! negative sampling for ranking evaluation, and neighborhood indices.
//!
//! Timestamp ties are resolved the same way everywhere: among equal
//! timestamps the lower id counts as more recent. This keeps splits and
//! neighbor caps deterministic without a secondary data pass.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::SnapError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub rating: f64,
    pub ts: i64,
}

/// Prediction objective. Rating reproduces held-out scores; ranking scores
/// observed interactions (target 1.0) against sampled negatives (0.0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Rating,
    Ranking,
}

impl std::str::FromStr for Task {
    type Err = SnapError;

    fn from_str(s: &str) -> Result<Self, SnapError> {
        match s {
            "rating" => Ok(Task::Rating),
            "ranking" => Ok(Task::Ranking),
            other => Err(SnapError::Config(format!(
                "unknown task {other:?}, expected rating or ranking"
            ))),
        }
    }
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Rating => "rating",
            Task::Ranking => "ranking",
        }
    }

    /// Target range predictions are clipped to at evaluation time.
    pub fn clip_scale(self, data_scale: (f64, f64)) -> (f64, f64) {
        match self {
            Task::Rating => data_scale,
            Task::Ranking => (0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatingDataset {
    pub interactions: Vec<Interaction>,
    pub num_users: u32,
    pub num_items: u32,
    /// (min, max) observed rating.
    pub rating_scale: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Format {
    #[serde(rename = "movielens")]
    MovielensTab,
    #[serde(rename = "csv")]
    GenericCsv,
}

/// Per-user record of what the split selected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserSelection {
    pub user: u32,
    /// Item held out for test (latest interaction), if the user had >= 3.
    pub test_item: Option<u32>,
    /// Item held out for validation (second latest), if the user had >= 3.
    pub val_item: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub train: RatingDataset,
    pub validation: RatingDataset,
    pub test: RatingDataset,
    pub provenance: Vec<UserSelection>,
}

/// Fixed negative item lists, one per test interaction, in test order.
#[derive(Debug, Clone)]
pub struct NegativeSamples {
    pub per_example: Vec<(u32, Vec<u32>)>,
    pub n: usize,
    pub seed: u64,
}

/// Capped train-set neighborhoods: `by_item[i]` holds users who rated i,
/// `by_user[u]` holds items u rated. Lists are (timestamp, id) ascending.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    pub by_item: Vec<Vec<u32>>,
    pub by_user: Vec<Vec<u32>>,
    pub cap: usize,
}

impl RatingDataset {
    pub fn empty_like(&self) -> RatingDataset {
        RatingDataset {
            interactions: Vec::new(),
            num_users: self.num_users,
            num_items: self.num_items,
            rating_scale: self.rating_scale,
        }
    }

    /// Interaction indices grouped by user, each group (ts, id) ascending.
    pub fn by_user_sorted(&self) -> Vec<Vec<usize>> {
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); self.num_users as usize];
        for (idx, it) in self.interactions.iter().enumerate() {
            groups[it.user as usize].push(idx);
        }
        for group in &mut groups {
            group.sort_by_key(|&idx| {
                let it = &self.interactions[idx];
                (it.ts, it.item)
            });
        }
        groups
    }

    pub fn global_mean(&self) -> f64 {
        if self.interactions.is_empty() {
            return 0.0;
        }
        let sum: f64 = self.interactions.iter().map(|it| it.rating).sum();
        sum / self.interactions.len() as f64
    }
}

/// Load a ratings file, remapping raw ids to contiguous 0-based indices
/// (ascending raw-id order, so 1-based MovieLens ids map to id-1).
pub fn load_ratings(path: &Path, format: Format) -> Result<RatingDataset, SnapError> {
    let text = fs::read_to_string(path).map_err(|e| SnapError::io(path, e))?;
    let mut rows: Vec<(usize, u32, u32, f64, i64)> = Vec::new();
    let mut lines = text.lines().enumerate();

    if format == Format::GenericCsv {
        match lines.next() {
            Some((_, header)) if header.trim() == "user,item,rating,timestamp" => {}
            Some((i, header)) => {
                return Err(SnapError::parse(
                    path,
                    i + 1,
                    format!("expected header 'user,item,rating,timestamp', got '{header}'"),
                ))
            }
            None => return Err(SnapError::parse(path, 0, "empty dataset")),
        }
    }

    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = match format {
            Format::MovielensTab => line.split('\t').collect(),
            Format::GenericCsv => line.split(',').collect(),
        };
        if fields.len() != 4 {
            return Err(SnapError::parse(
                path,
                lineno,
                format!("expected 4 fields, got {}", fields.len()),
            ));
        }
        let user: u32 = fields[0]
            .trim()
            .parse()
            .map_err(|_| SnapError::parse(path, lineno, format!("bad user id '{}'", fields[0])))?;
        let item: u32 = fields[1]
            .trim()
            .parse()
            .map_err(|_| SnapError::parse(path, lineno, format!("bad item id '{}'", fields[1])))?;
        let rating: f64 = fields[2].trim().parse().map_err(|_| {
            SnapError::parse(path, lineno, format!("bad rating '{}'", fields[2]))
        })?;
        let ts: i64 = fields[3].trim().parse().map_err(|_| {
            SnapError::parse(path, lineno, format!("bad timestamp '{}'", fields[3]))
        })?;
        if !rating.is_finite() {
            return Err(SnapError::parse(path, lineno, "non-finite rating"));
        }
        rows.push((lineno, user, item, rating, ts));
    }

    if rows.is_empty() {
        return Err(SnapError::parse(path, 0, "empty dataset"));
    }

    let mut users: Vec<u32> = rows.iter().map(|r| r.1).collect();
    users.sort_unstable();
    users.dedup();
    let mut items: Vec<u32> = rows.iter().map(|r| r.2).collect();
    items.sort_unstable();
    items.dedup();
    let user_rank = |raw: u32| users.binary_search(&raw).unwrap() as u32;
    let item_rank = |raw: u32| items.binary_search(&raw).unwrap() as u32;

    let mut seen: HashSet<(u32, u32)> = HashSet::with_capacity(rows.len());
    let mut interactions = Vec::with_capacity(rows.len());
    let mut min_r = f64::INFINITY;
    let mut max_r = f64::NEG_INFINITY;
    for (lineno, u, i, r, t) in &rows {
        let (user, item) = (user_rank(*u), item_rank(*i));
        if !seen.insert((user, item)) {
            return Err(SnapError::parse(
                path,
                *lineno,
                format!("duplicate (user, item) pair ({u}, {i})"),
            ));
        }
        min_r = min_r.min(*r);
        max_r = max_r.max(*r);
        interactions.push(Interaction {
            user,
            item,
            rating: *r,
            ts: *t,
        });
    }

    Ok(RatingDataset {
        interactions,
        num_users: users.len() as u32,
        num_items: items.len() as u32,
        rating_scale: (min_r, max_r),
    })
}

/// Per user: latest interaction to test, second latest to validation, rest
/// to train. Users with fewer than 3 interactions go entirely to train.
/// Equal timestamps resolve toward the lower item id as "later".
pub fn chronological_leave_one_out(ds: &RatingDataset) -> SplitDataset {
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); ds.num_users as usize];
    for (idx, it) in ds.interactions.iter().enumerate() {
        groups[it.user as usize].push(idx);
    }

    let mut train = ds.empty_like();
    let mut validation = ds.empty_like();
    let mut test = ds.empty_like();
    let mut provenance = Vec::with_capacity(groups.len());

    for (user, group) in groups.iter_mut().enumerate() {
        // Ascending recency: later timestamp last; on ties the lower item id
        // sorts last, so it wins the test slot.
        group.sort_by_key(|&idx| {
            let it = &ds.interactions[idx];
            (it.ts, std::cmp::Reverse(it.item))
        });
        if group.len() < 3 {
            for &idx in group.iter() {
                train.interactions.push(ds.interactions[idx]);
            }
            provenance.push(UserSelection {
                user: user as u32,
                test_item: None,
                val_item: None,
            });
            continue;
        }
        let test_idx = group[group.len() - 1];
        let val_idx = group[group.len() - 2];
        for &idx in &group[..group.len() - 2] {
            train.interactions.push(ds.interactions[idx]);
        }
        validation.interactions.push(ds.interactions[val_idx]);
        test.interactions.push(ds.interactions[test_idx]);
        provenance.push(UserSelection {
            user: user as u32,
            test_item: Some(ds.interactions[test_idx].item),
            val_item: Some(ds.interactions[val_idx].item),
        });
    }

    SplitDataset {
        train,
        validation,
        test,
        provenance,
    }
}

fn user_rng(seed: u64, user: u32) -> ChaCha8Rng {
    // Per-user stream: sampling one user never shifts another's draws.
    ChaCha8Rng::seed_from_u64(seed ^ (user as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Draw `n` distinct never-interacted items per test example. Deterministic
/// given `seed`; independent across users.
pub fn sample_negatives(
    split: &SplitDataset,
    n: usize,
    seed: u64,
) -> Result<NegativeSamples, SnapError> {
    negatives_for(&split.test, split, n, seed)
}

/// Same sampling rule over an arbitrary positive set (one list per
/// interaction, in interaction order). Exclusions always cover the user's
/// full train/validation/test history.
pub fn negatives_for(
    positives: &RatingDataset,
    split: &SplitDataset,
    n: usize,
    seed: u64,
) -> Result<NegativeSamples, SnapError> {
    let num_items = split.train.num_items as usize;
    let mut interacted: Vec<HashSet<u32>> = vec![HashSet::new(); split.train.num_users as usize];
    for part in [&split.train, &split.validation, &split.test] {
        for it in &part.interactions {
            interacted[it.user as usize].insert(it.item);
        }
    }

    let mut per_example = Vec::with_capacity(positives.interactions.len());
    for it in &positives.interactions {
        let user = it.user;
        let seen = &interacted[user as usize];
        let mut candidates: Vec<u32> = (0..num_items as u32)
            .filter(|i| !seen.contains(i))
            .collect();
        if candidates.len() < n {
            return Err(SnapError::TooFewCandidates {
                user,
                have: candidates.len(),
                need: n,
            });
        }
        // Partial Fisher-Yates: first n slots become the sample.
        let mut rng = user_rng(seed, user);
        for k in 0..n {
            let j = k + rng.gen_range(0..candidates.len() - k);
            candidates.swap(k, j);
        }
        candidates.truncate(n);
        per_example.push((user, candidates));
    }

    Ok(NegativeSamples {
        per_example,
        n,
        seed,
    })
}

/// Train-set neighborhoods capped at the `cap` most recent interactions
/// (ties toward lower id). Kept lists are (timestamp, id) ascending.
pub fn build_neighbor_index(train: &RatingDataset, cap: usize) -> NeighborIndex {
    assert!(cap >= 1, "neighbor cap must be at least 1");
    let mut by_user: Vec<Vec<(i64, u32)>> = vec![Vec::new(); train.num_users as usize];
    let mut by_item: Vec<Vec<(i64, u32)>> = vec![Vec::new(); train.num_items as usize];
    for it in &train.interactions {
        by_user[it.user as usize].push((it.ts, it.item));
        by_item[it.item as usize].push((it.ts, it.user));
    }

    let cap_list = |mut list: Vec<(i64, u32)>| -> Vec<u32> {
        if list.len() > cap {
            // Most recent first; equal timestamps rank lower ids first so
            // they survive the cut.
            list.sort_by_key(|&(ts, id)| (std::cmp::Reverse(ts), id));
            list.truncate(cap);
        }
        list.sort_unstable();
        list.into_iter().map(|(_, id)| id).collect()
    };

    NeighborIndex {
        by_user: by_user.into_iter().map(cap_list).collect(),
        by_item: by_item.into_iter().map(cap_list).collect(),
        cap,
    }
}
