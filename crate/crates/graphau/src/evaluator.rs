//! Full-ranking top-k evaluation.
//!
//! Every item is scored for each evaluated user by the raw layer-0 dot
//! product. Training interactions are always masked to negative infinity;
//! validation interactions are additionally masked when evaluating the test
//! split. Ties break toward the smaller item index, so rankings and metric
//! values are reproducible. Users without ground truth in the evaluated
//! split are not counted.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{InteractionDataset, Split};
use crate::mat::dot;
use crate::model::EmbeddingModel;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub recall_at_k: f64,
    pub hitratio_at_k: f64,
    pub ndcg_at_k: f64,
    pub k: usize,
    pub n_users_evaluated: usize,
}

/// Indices of the top-k scores, descending, ties broken by ascending index.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<u32> {
    let cmp = |a: &u32, b: &u32| {
        scores[*b as usize]
            .total_cmp(&scores[*a as usize])
            .then(a.cmp(b))
    };
    let mut idx: Vec<u32> = (0..scores.len() as u32).collect();
    let k = k.min(idx.len());
    if k == 0 {
        return Vec::new();
    }
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(cmp);
    idx
}

/// DCG of a binary-gain ranking: hits at 1-indexed rank r gain 1/log2(r+1).
fn dcg(topk: &[u32], relevant: &std::collections::HashSet<u32>) -> f64 {
    topk.iter()
        .enumerate()
        .filter(|(_, item)| relevant.contains(item))
        .map(|(r0, _)| 1.0 / ((r0 + 2) as f64).log2())
        .sum()
}

fn ideal_dcg(n_relevant: usize, k: usize) -> f64 {
    (0..n_relevant.min(k))
        .map(|r0| 1.0 / ((r0 + 2) as f64).log2())
        .sum()
}

/// Mean Recall@k, HitRatio@k and NDCG@k over users with ground truth in
/// `split`. Evaluating `Split::Train` ranks against the train edges with
/// nothing masked, which is occasionally useful for debugging fit.
pub fn evaluate(
    model: &EmbeddingModel,
    dataset: &InteractionDataset,
    split: Split,
    k: usize,
) -> Result<RankingMetrics> {
    assert!(k >= 1, "cutoff k must be positive");
    let n_users = dataset.n_users;
    let n_items = dataset.n_items;

    let mut truth: Vec<Vec<u32>> = vec![Vec::new(); n_users];
    for &(u, i) in dataset.edges_of(split) {
        truth[u as usize].push(i);
    }
    let mut masked: Vec<Vec<u32>> = vec![Vec::new(); n_users];
    if split != Split::Train {
        for &(u, i) in &dataset.train_edges {
            masked[u as usize].push(i);
        }
        if split == Split::Test {
            for &(u, i) in &dataset.valid_edges {
                masked[u as usize].push(i);
            }
        }
    }

    let evaluated: Vec<u32> = (0..n_users as u32)
        .filter(|&u| !truth[u as usize].is_empty())
        .collect();
    if evaluated.is_empty() {
        return Err(Error::NoEvaluableUsers);
    }

    // Per-user triples collected in user order, then reduced sequentially,
    // so the result does not depend on the thread count.
    let per_user: Vec<(f64, f64, f64)> = evaluated
        .par_iter()
        .map(|&u| {
            let urow = model.user_emb0.row(u as usize);
            let mut scores: Vec<f64> = (0..n_items)
                .map(|i| dot(urow, model.item_emb0.row(i)))
                .collect();
            for &i in &masked[u as usize] {
                scores[i as usize] = f64::NEG_INFINITY;
            }
            let topk = top_k_indices(&scores, k);
            let relevant: std::collections::HashSet<u32> =
                truth[u as usize].iter().copied().collect();
            let hits = topk.iter().filter(|i| relevant.contains(i)).count();
            let recall = hits as f64 / relevant.len() as f64;
            let hit = if hits > 0 { 1.0 } else { 0.0 };
            let ndcg = dcg(&topk, &relevant) / ideal_dcg(relevant.len(), k);
            (recall, hit, ndcg)
        })
        .collect();

    let n = evaluated.len() as f64;
    let (mut recall, mut hit, mut ndcg) = (0.0, 0.0, 0.0);
    for (r, h, nd) in per_user {
        recall += r;
        hit += h;
        ndcg += nd;
    }
    Ok(RankingMetrics {
        recall_at_k: recall / n,
        hitratio_at_k: hit / n,
        ndcg_at_k: ndcg / n,
        k,
        n_users_evaluated: evaluated.len(),
    })
}
