//! Synthetic interaction generators for tests and benchmarks.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::RawInteraction;

/// Bipartite edges with Zipf-like degree skew on both sides: node rank r is
/// drawn with probability proportional to (r + 1)^-exponent. Stops early if
/// the requested count cannot be reached without excessive rejection.
pub fn power_law_bipartite(
    n_users: usize,
    n_items: usize,
    n_edges: usize,
    exponent: f64,
    seed: u64,
) -> Vec<(u32, u32)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cdf = |n: usize| {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(n);
        for r in 0..n {
            acc += ((r + 1) as f64).powf(-exponent);
            out.push(acc);
        }
        out
    };
    let user_cdf = cdf(n_users);
    let item_cdf = cdf(n_items);
    let draw = |cdf: &[f64], rng: &mut ChaCha8Rng| -> u32 {
        let x: f64 = rng.random::<f64>() * cdf[cdf.len() - 1];
        cdf.partition_point(|&c| c <= x) as u32
    };
    let mut seen = HashSet::new();
    let mut edges = Vec::with_capacity(n_edges);
    let mut attempts = 0usize;
    while edges.len() < n_edges && attempts < 50 * n_edges {
        attempts += 1;
        let e = (draw(&user_cdf, &mut rng), draw(&item_cdf, &mut rng));
        if seen.insert(e) {
            edges.push(e);
        }
    }
    edges
}

/// Interactions over two user/item communities. Each interaction draws a
/// user with Zipf-like weight (r+1)^-activity_exponent within a uniformly
/// chosen block, stays inside that block with probability `1 - cross_prob`,
/// and draws the item with weight (r+1)^-popularity_exponent inside the
/// chosen block. Exponents of 0 make both draws uniform. Exactly
/// `n_interactions` distinct pairs are returned.
///
/// The skew gives every block a long tail of sparse users and a learnable
/// within-block popularity ranking, so multi-hop neighborhood signal has
/// something to contribute beyond bare block membership.
pub fn two_community_interactions(
    users_per_block: usize,
    items_per_block: usize,
    n_interactions: usize,
    cross_prob: f64,
    activity_exponent: f64,
    popularity_exponent: f64,
    seed: u64,
) -> Vec<RawInteraction> {
    assert!(
        n_interactions <= 2 * users_per_block * 2 * items_per_block,
        "more interactions requested than distinct pairs exist"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cdf = |n: usize, s: f64| {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(n);
        for r in 0..n {
            acc += ((r + 1) as f64).powf(-s);
            out.push(acc);
        }
        out
    };
    let user_cdf = cdf(users_per_block, activity_exponent);
    let item_cdf = cdf(items_per_block, popularity_exponent);
    let draw = |cdf: &[f64], rng: &mut ChaCha8Rng| -> u32 {
        let x: f64 = rng.random::<f64>() * cdf[cdf.len() - 1];
        cdf.partition_point(|&c| c <= x) as u32
    };
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n_interactions);
    while out.len() < n_interactions {
        let user_block = rng.random_range(0..2usize);
        let u = draw(&user_cdf, &mut rng) + (user_block * users_per_block) as u32;
        let item_block = if rng.random::<f64>() < cross_prob {
            1 - user_block
        } else {
            user_block
        };
        let i = draw(&item_cdf, &mut rng) + (item_block * items_per_block) as u32;
        if seen.insert((u, i)) {
            out.push(RawInteraction {
                user_id: format!("u{u}"),
                item_id: format!("i{i}"),
            });
        }
    }
    out
}
