//! Deterministic synthetic rating data, used when no real dataset is on
//! disk. The generator mimics the shape of classic movie-rating corpora:
//! power-law user activity, power-law item popularity, low-rank taste
//! structure plus user and item biases, and per-user noise levels.
//!
//! Which items a user rates is not popularity alone. Real raters pick
//! what they expect to like, so per-user exposure multiplies the global
//! popularity by an exponential tilt along the user's own taste vector.
//! That selection bias is what makes top-N ranking more than a popularity
//! sort here: the identity of a user's rated items carries personal
//! signal, and a factor model has something real to learn.
//!
//! The per-user spreads exist to keep base-model quality uneven across
//! users and across training time. Noise levels vary, so late training
//! chases noise on sparse noisy users while cleaner users still gain.
//! Taste amplitude varies too: narrow raters stay near the biases while
//! swingers move hard along the latent axes, and factor shrinkage hits
//! those groups differently at different training stages. Both spreads
//! leave traces in a neighborhood's rating texture, which is the raw
//! material a learned snapshot combiner gets to work with.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{Interaction, RatingDataset};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub num_users: u32,
    pub num_items: u32,
    pub interactions: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// Desk-scale defaults matching the classic 100k corpus shape.
    fn default() -> Self {
        SynthConfig { num_users: 943, num_items: 1682, interactions: 100_000, seed: 0 }
    }
}

/// Number of ratings per user: lognormal weights scaled to the requested
/// total by largest remainder, then clamped to a workable range and
/// rebalanced so the total still holds exactly.
fn user_counts(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = config.num_users as usize;
    let total = config.interactions;
    let min_per_user = 3usize;
    let max_per_user = (config.num_items as usize).min(total).min(600);
    assert!(
        n * min_per_user <= total && total <= n * max_per_user,
        "interaction total {total} impossible for {n} users"
    );

    let lognorm = Normal::<f64>::new(0.0, 1.0).unwrap();
    let weights: Vec<f64> = (0..n).map(|_| lognorm.sample(rng).exp()).collect();
    let wsum: f64 = weights.iter().sum();

    // Largest remainder keeps the sum exact before clamping.
    let shares: Vec<f64> = weights.iter().map(|w| w * total as f64 / wsum).collect();
    let mut counts: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let mut leftover = total - counts.iter().sum::<usize>();
    let mut by_frac: Vec<usize> = (0..n).collect();
    by_frac.sort_by(|&a, &b| {
        let fa = shares[a] - shares[a].floor();
        let fb = shares[b] - shares[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &u in by_frac.iter().cycle().take(leftover.min(n) * 2) {
        if leftover == 0 {
            break;
        }
        counts[u] += 1;
        leftover -= 1;
    }

    // Clamping moves mass; push the difference onto users with room,
    // walking a fixed order so the result stays deterministic.
    for c in counts.iter_mut() {
        *c = (*c).clamp(min_per_user, max_per_user);
    }
    let mut diff = counts.iter().sum::<usize>() as i64 - total as i64;
    let mut cursor = 0usize;
    while diff != 0 {
        let u = cursor % n;
        if diff > 0 && counts[u] > min_per_user {
            counts[u] -= 1;
            diff -= 1;
        } else if diff < 0 && counts[u] < max_per_user {
            counts[u] += 1;
            diff += 1;
        }
        cursor += 1;
    }
    counts
}

/// Zipf-like popularity over a random permutation of item ids, so an
/// item's id says nothing about how popular it is.
fn item_popularity(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = config.num_items as usize;
    let mut ranks: Vec<usize> = (0..n).collect();
    // Fisher-Yates over the rank assignment.
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        ranks.swap(i, j);
    }
    ranks
        .into_iter()
        .map(|r| 1.0 / ((r + 10) as f64).powf(0.8))
        .collect()
}

/// Weighted sample of `count` distinct items. Rejection sampling against
/// the full weight table, with an exact cumulative-walk fallback when
/// the untaken mass gets thin.
fn sample_items(weights: &[f64], count: usize, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let n = weights.len();
    debug_assert!(count <= n);
    let total_mass: f64 = weights.iter().sum();
    let mut taken = vec![false; n];
    let mut picked = Vec::with_capacity(count);
    let mut rejections = 0u32;
    while picked.len() < count {
        if rejections < 64 {
            let r = rng.gen::<f64>() * total_mass;
            let mut acc = 0.0;
            let mut hit = n - 1;
            for (i, w) in weights.iter().enumerate() {
                acc += w;
                if r < acc {
                    hit = i;
                    break;
                }
            }
            if taken[hit] {
                rejections += 1;
                continue;
            }
            taken[hit] = true;
            picked.push(hit as u32);
            rejections = 0;
        } else {
            // Exact draw over the remaining items only.
            let remaining: f64 = weights
                .iter()
                .enumerate()
                .filter(|(i, _)| !taken[*i])
                .map(|(_, w)| w)
                .sum();
            let r = rng.gen::<f64>() * remaining;
            let mut acc = 0.0;
            let mut hit = None;
            for (i, w) in weights.iter().enumerate() {
                if taken[i] {
                    continue;
                }
                acc += w;
                if r < acc {
                    hit = Some(i);
                    break;
                }
            }
            let hit = hit.unwrap_or_else(|| taken.iter().position(|t| !t).unwrap());
            taken[hit] = true;
            picked.push(hit as u32);
            rejections = 0;
        }
    }
    picked
}

/// Generate the full dataset. Same config, same data, bit for bit.
pub fn generate(config: &SynthConfig) -> RatingDataset {
    assert!(config.num_users > 0 && config.num_items > 0);
    let mut structure_rng = stream_rng(config.seed, Stream::Synth, 0);
    let counts = user_counts(config, &mut structure_rng);
    let popularity = item_popularity(config, &mut structure_rng);

    let factor_rng = &mut stream_rng(config.seed, Stream::Synth, 1);
    let latent = 4usize;
    let bias_dist = Normal::new(0.0, 0.35).unwrap();
    let factor_dist = Normal::new(0.0, 0.6).unwrap();
    let user_bias: Vec<f64> =
        (0..config.num_users).map(|_| bias_dist.sample(factor_rng)).collect();
    let item_bias: Vec<f64> =
        (0..config.num_items).map(|_| bias_dist.sample(factor_rng)).collect();
    // Taste amplitude: narrow raters vs hard swingers. See the module docs
    // for how this feeds the snapshot heterogeneity.
    let amplitude: Vec<f64> =
        (0..config.num_users).map(|_| factor_rng.gen_range(0.25..1.75)).collect();
    let user_factors: Vec<f64> = (0..config.num_users as usize * latent)
        .map(|idx| factor_dist.sample(factor_rng) * amplitude[idx / latent])
        .collect();
    let item_factors: Vec<f64> = (0..config.num_items as usize * latent)
        .map(|_| factor_dist.sample(factor_rng))
        .collect();
    let noise_std: Vec<f64> =
        (0..config.num_users).map(|_| factor_rng.gen_range(0.25..0.9)).collect();

    let mean = 3.55f64;
    // Exposure bias: people mostly rate what they expect to like, so each
    // user's item pool tilts the global popularity by their own taste.
    // Without this, which items a user rates would carry no personal
    // signal at all and top-N ranking would collapse to a popularity sort.
    let exposure_sharpness = 1.0f64;
    let mut interactions = Vec::with_capacity(config.interactions);
    for (u, &count) in counts.iter().enumerate() {
        let mut rng = stream_rng(config.seed, Stream::Synth, 2 + u as u64);
        let weights: Vec<f64> = popularity
            .iter()
            .enumerate()
            .map(|(i, &pop)| {
                let affinity: f64 = (0..latent)
                    .map(|f| user_factors[u * latent + f] * item_factors[i * latent + f])
                    .sum();
                pop * (exposure_sharpness * affinity).exp()
            })
            .collect();
        let items = sample_items(&weights, count, &mut rng);
        let noise = Normal::new(0.0, noise_std[u]).unwrap();
        for (k, &item) in items.iter().enumerate() {
            let i = item as usize;
            let affinity: f64 = (0..latent)
                .map(|f| user_factors[u * latent + f] * item_factors[i * latent + f])
                .sum();
            let raw = mean + user_bias[u] + item_bias[i] + affinity + noise.sample(&mut rng);
            let rating = raw.round().clamp(1.0, 5.0);
            interactions.push(Interaction {
                user: u as u32,
                item,
                rating,
                ts: k as i64,
            });
        }
    }

    RatingDataset {
        interactions,
        num_users: config.num_users,
        num_items: config.num_items,
        rating_scale: (1.0, 5.0),
    }
}
