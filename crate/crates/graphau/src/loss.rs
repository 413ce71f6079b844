//! The training objective and its exact gradient.
//!
//! For a batch of interacting (u, i) pairs the objective is
//!
//! ```text
//! total = sum_{l=0..L} alpha^l * align[l]
//!       + gamma/2 * (uniformity(batch users) + uniformity(batch items))
//! ```
//!
//! where `align[0]` is the batch mean of the squared distance between the
//! L2-normalized layer-0 vectors of u and i, and `align[l]` for l >= 1
//! averages the two cross-layer halves: u's layer 0 against i's layer l and
//! i's layer 0 against u's layer l. Uniformity is the log of the mean
//! Gaussian-kernel similarity over all ordered pairs of the deduplicated
//! batch node set (self-pairs included), taken at the layer selected by
//! `uniformity_order` (0 unless an ablation asks otherwise).
//!
//! Every vector entering alignment or uniformity is L2-normalized first;
//! ranking scores elsewhere use the raw embeddings. The convention
//! `alpha^0 = 1` holds even at `alpha = 0`, so that setting collapses the
//! objective to direct alignment plus uniformity.
//!
//! [`backward`] composes, by hand, the normalization Jacobian, the
//! transposed aggregation operator (the operator is its own adjoint across
//! sides because edge weights are shared), the `alpha^l` pooling weights and
//! the pairwise-softmax uniformity gradient. Rows outside the batch and its
//! L-hop neighborhood come out exactly zero, which the sparse optimizer
//! step relies on.
//!
//! Zero vectors cannot be normalized; such pairs contribute zero loss and
//! zero gradient and are tallied in `LossReport::degenerate_pairs` instead
//! of poisoning the batch with NaN.

// Layer-indexed loops read clearer with explicit indices here.
#![allow(clippy::needless_range_loop)]

use serde::{Deserialize, Serialize};

use crate::graph::BipartiteGraph;
use crate::mat::{dot, l2_norm, Mat};
use crate::model::LayerStack;
use crate::{Error, Result};

/// A mini-batch of train edges with deduplicated endpoint sets.
#[derive(Debug, Clone)]
pub struct Batch {
    pub edges: Vec<(u32, u32)>,
    pub users: Vec<u32>,
    pub items: Vec<u32>,
}

impl Batch {
    pub fn from_edges(edges: &[(u32, u32)]) -> Result<Batch> {
        if edges.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut users: Vec<u32> = edges.iter().map(|&(u, _)| u).collect();
        users.sort_unstable();
        users.dedup();
        let mut items: Vec<u32> = edges.iter().map(|&(_, i)| i).collect();
        items.sort_unstable();
        items.dedup();
        Ok(Batch {
            edges: edges.to_vec(),
            users,
            items,
        })
    }
}

/// Distance fed to the uniformity kernel `exp(-2 * dist)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UniformityMetric {
    /// Squared Euclidean distance between normalized vectors (default).
    Sq,
    /// Plain Euclidean distance.
    L2,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossConfig {
    /// Geometric weight on the per-layer alignment terms.
    pub alpha: f64,
    /// Trade-off between alignment and uniformity.
    pub gamma: f64,
    /// Number of aggregation layers; must match the stack.
    pub layers: usize,
    /// Which layer's vectors feed the uniformity terms (0 = base table).
    pub uniformity_order: usize,
    pub uniformity_metric: UniformityMetric,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 1.0,
            gamma: 0.5,
            layers: 2,
            uniformity_order: 0,
            uniformity_metric: UniformityMetric::Sq,
        }
    }
}

impl LossConfig {
    /// Out-of-range values are allowed but worth flagging; the tuned ranges
    /// are alpha in [0, 2] and gamma in [0, 1].
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if !(0.0..=2.0).contains(&self.alpha) {
            w.push(format!(
                "alpha {} is outside the tuned range [0, 2]",
                self.alpha
            ));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            w.push(format!(
                "gamma {} is outside the tuned range [0, 1]",
                self.gamma
            ));
        }
        if self.uniformity_order > self.layers {
            w.push(format!(
                "uniformity_order {} exceeds layer count {}",
                self.uniformity_order, self.layers
            ));
        }
        w
    }
}

/// Per-term breakdown of one batch objective evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossReport {
    pub align_per_layer: Vec<f64>,
    pub uniform_user: f64,
    pub uniform_item: f64,
    pub total: f64,
    /// Pairs (or uniformity rows) skipped because a vector had zero norm.
    pub degenerate_pairs: u64,
}

/// `alpha^l` with the `0^0 = 1` convention.
fn alpha_pow(alpha: f64, l: usize) -> f64 {
    if l == 0 {
        1.0
    } else {
        alpha.powi(l as i32)
    }
}

/// Squared distance between the L2-normalized copies of two vectors,
/// `2 - 2 cos(x, y)`, in [0, 4]. Zero vectors contribute 0.
pub fn align_pair(x: &[f64], y: &[f64]) -> f64 {
    let nx = l2_norm(x);
    let ny = l2_norm(y);
    if nx == 0.0 || ny == 0.0 {
        return 0.0;
    }
    (2.0 - 2.0 * dot(x, y) / (nx * ny)).clamp(0.0, 4.0)
}

/// Batch-mean per-layer alignment losses, one entry per layer 0..=L.
pub fn alignment_losses(stack: &LayerStack, batch: &Batch) -> Result<Vec<f64>> {
    alignment_losses_counted(stack, batch).map(|(v, _)| v)
}

fn alignment_losses_counted(stack: &LayerStack, batch: &Batch) -> Result<(Vec<f64>, u64)> {
    if batch.edges.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let layers = stack.layers();
    let nb = batch.edges.len() as f64;
    let mut acc = vec![0.0; layers + 1];
    let mut degenerate = 0u64;
    for &(u, i) in &batch.edges {
        let u = u as usize;
        let i = i as usize;
        let u0 = stack.user_layers[0].row(u);
        let i0 = stack.item_layers[0].row(i);
        if l2_norm(u0) == 0.0 || l2_norm(i0) == 0.0 {
            degenerate += 1;
        } else {
            acc[0] += align_pair(u0, i0);
        }
        for l in 1..=layers {
            let il = stack.item_layers[l].row(i);
            if l2_norm(u0) == 0.0 || l2_norm(il) == 0.0 {
                degenerate += 1;
            } else {
                acc[l] += 0.5 * align_pair(u0, il);
            }
            let ul = stack.user_layers[l].row(u);
            if l2_norm(i0) == 0.0 || l2_norm(ul) == 0.0 {
                degenerate += 1;
            } else {
                acc[l] += 0.5 * align_pair(i0, ul);
            }
        }
    }
    for a in acc.iter_mut() {
        *a /= nb;
    }
    Ok((acc, degenerate))
}

/// Log of the mean Gaussian-kernel similarity over all ordered pairs of the
/// given rows, self-pairs included. Rows must already be L2-normalized.
/// Always <= 0; equals 0 only when all rows coincide. Empty input gives 0.
pub fn uniformity(vectors: &Mat, metric: UniformityMetric) -> f64 {
    let m = vectors.rows();
    if m == 0 {
        return 0.0;
    }
    // Log-sum-exp over exponents -2 * dist: every dist is >= 0 and the m
    // self-pairs have dist 0, so the max exponent is exactly 0 and the
    // usual max shift is the identity.
    let mut sum = m as f64; // self-pairs, exp(0) each
    for a in 0..m {
        for b in (a + 1)..m {
            sum += 2.0 * (-2.0 * pair_distance(vectors.row(a), vectors.row(b), metric)).exp();
        }
    }
    sum.ln() - 2.0 * (m as f64).ln()
}

/// Uniformity of a whole table: rows are normalized here, zero rows are
/// skipped. Quadratic in the row count; meant as an offline diagnostic.
pub fn uniformity_of_table(table: &Mat, metric: UniformityMetric) -> f64 {
    let idxs: Vec<u32> = (0..table.rows() as u32).collect();
    let (v, _, _) = normalized_subset(table, &idxs);
    uniformity(&v, metric)
}

fn pair_distance(a: &[f64], b: &[f64], metric: UniformityMetric) -> f64 {
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    match metric {
        UniformityMetric::Sq => sq,
        UniformityMetric::L2 => sq.sqrt(),
    }
}

/// Normalized copies of the selected rows; zero rows are dropped and
/// counted. Returns the kept original indices alongside their norms.
fn normalized_subset(table: &Mat, idxs: &[u32]) -> (Mat, Vec<(u32, f64)>, u64) {
    let d = table.cols();
    let mut kept = Vec::with_capacity(idxs.len());
    let mut data = Vec::with_capacity(idxs.len() * d);
    let mut dropped = 0u64;
    for &ix in idxs {
        let row = table.row(ix as usize);
        let n = l2_norm(row);
        if n == 0.0 {
            dropped += 1;
            continue;
        }
        kept.push((ix, n));
        data.extend(row.iter().map(|v| v / n));
    }
    (Mat::from_vec(kept.len(), d, data), kept, dropped)
}

/// Full objective for one batch. Uniformity is evaluated over the batch's
/// deduplicated user and item sets at layer `uniformity_order`; when
/// `gamma == 0` the uniformity terms are skipped and reported as 0.
pub fn total_loss(stack: &LayerStack, batch: &Batch, cfg: &LossConfig) -> Result<LossReport> {
    check_cfg(stack, cfg)?;
    let (align_per_layer, mut degenerate) = alignment_losses_counted(stack, batch)?;
    let (mut uniform_user, mut uniform_item) = (0.0, 0.0);
    if cfg.gamma != 0.0 {
        let o = cfg.uniformity_order;
        let (vu, _, du) = normalized_subset(&stack.user_layers[o], &batch.users);
        let (vi, _, di) = normalized_subset(&stack.item_layers[o], &batch.items);
        degenerate += du + di;
        uniform_user = uniformity(&vu, cfg.uniformity_metric);
        uniform_item = uniformity(&vi, cfg.uniformity_metric);
    }
    let total = align_per_layer
        .iter()
        .enumerate()
        .map(|(l, a)| alpha_pow(cfg.alpha, l) * a)
        .sum::<f64>()
        + cfg.gamma / 2.0 * (uniform_user + uniform_item);
    Ok(LossReport {
        align_per_layer,
        uniform_user,
        uniform_item,
        total,
        degenerate_pairs: degenerate,
    })
}

fn check_cfg(stack: &LayerStack, cfg: &LossConfig) -> Result<()> {
    if cfg.layers != stack.layers() {
        return Err(Error::Config(format!(
            "loss configured for {} layers but the stack has {}",
            cfg.layers,
            stack.layers()
        )));
    }
    if cfg.uniformity_order > stack.layers() {
        return Err(Error::Config(format!(
            "uniformity_order {} exceeds layer count {}",
            cfg.uniformity_order,
            stack.layers()
        )));
    }
    Ok(())
}

/// Adds `w * d/dx ||N(x) - N(y)||^2` into `gx` and the symmetric term into
/// `gy`, where N is L2 normalization. Returns false when either vector has
/// zero norm (nothing accumulated).
fn add_align_grad(x: &[f64], y: &[f64], w: f64, gx: &mut [f64], gy: &mut [f64]) -> bool {
    let nx = l2_norm(x);
    let ny = l2_norm(y);
    if nx == 0.0 || ny == 0.0 {
        return false;
    }
    let c = dot(x, y) / (nx * ny);
    for j in 0..x.len() {
        gx[j] += w * (-2.0) * (y[j] / ny - c * x[j] / nx) / nx;
        gy[j] += w * (-2.0) * (x[j] / nx - c * y[j] / ny) / ny;
    }
    true
}

/// Exact gradient of [`total_loss`] with respect to the layer-0 tables.
///
/// Cotangents are first accumulated per layer from the alignment pairs and
/// the uniformity sets, then pulled down the stack: the cotangent of a
/// user layer l lands on the item layer l-1 through the item-side
/// aggregation (the operator's transpose), and vice versa.
pub fn backward(
    stack: &LayerStack,
    batch: &Batch,
    cfg: &LossConfig,
    graph: &BipartiteGraph,
) -> Result<(Mat, Mat)> {
    check_cfg(stack, cfg)?;
    if batch.edges.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let layers = stack.layers();
    let n_users = stack.user_layers[0].rows();
    let n_items = stack.item_layers[0].rows();
    let d = stack.user_layers[0].cols();
    let nb = batch.edges.len() as f64;

    let mut cu: Vec<Mat> = (0..=layers).map(|_| Mat::zeros(n_users, d)).collect();
    let mut ci: Vec<Mat> = (0..=layers).map(|_| Mat::zeros(n_items, d)).collect();

    for &(u, i) in &batch.edges {
        let ui = u as usize;
        let ii = i as usize;
        let u0 = stack.user_layers[0].row(ui);
        let i0 = stack.item_layers[0].row(ii);
        add_align_grad(u0, i0, 1.0 / nb, cu[0].row_mut(ui), ci[0].row_mut(ii));
        for l in 1..=layers {
            let w = alpha_pow(cfg.alpha, l) / (2.0 * nb);
            if w == 0.0 {
                continue;
            }
            let il = stack.item_layers[l].row(ii);
            add_align_grad(u0, il, w, cu[0].row_mut(ui), ci[l].row_mut(ii));
            let ul = stack.user_layers[l].row(ui);
            add_align_grad(i0, ul, w, ci[0].row_mut(ii), cu[l].row_mut(ui));
        }
    }

    if cfg.gamma != 0.0 {
        let o = cfg.uniformity_order;
        add_uniformity_grad(
            &stack.user_layers[o],
            &batch.users,
            cfg.uniformity_metric,
            cfg.gamma / 2.0,
            &mut cu[o],
        );
        add_uniformity_grad(
            &stack.item_layers[o],
            &batch.items,
            cfg.uniformity_metric,
            cfg.gamma / 2.0,
            &mut ci[o],
        );
    }

    // Pull cotangents down through the stack, alternating sides.
    for l in (1..=layers).rev() {
        let down_items = graph.aggregate_items_from_users(&cu[l])?;
        ci[l - 1].add_assign(&down_items);
        let down_users = graph.aggregate_users_from_items(&ci[l])?;
        cu[l - 1].add_assign(&down_users);
    }

    let user_grad = cu.swap_remove(0);
    let item_grad = ci.swap_remove(0);
    Ok((user_grad, item_grad))
}

/// Gradient of `scale * uniformity(normalized rows)` accumulated into the
/// cotangent table at the rows' original indices.
fn add_uniformity_grad(
    table: &Mat,
    idxs: &[u32],
    metric: UniformityMetric,
    scale: f64,
    cot: &mut Mat,
) {
    let (v, kept, _) = normalized_subset(table, idxs);
    let m = v.rows();
    if m == 0 {
        return;
    }
    let d = v.cols();

    let mut sum = m as f64;
    for a in 0..m {
        for b in (a + 1)..m {
            sum += 2.0 * (-2.0 * pair_distance(v.row(a), v.row(b), metric)).exp();
        }
    }

    // d uniformity / d v_a = (-8 / S) sum_b K_ab (v_a - v_b)        (sq)
    //                      = (-4 / S) sum_b K_ab (v_a - v_b) / D_ab (l2)
    let mut ghat = Mat::zeros(m, d);
    for a in 0..m {
        for b in (a + 1)..m {
            let dist = pair_distance(v.row(a), v.row(b), metric);
            let k = (-2.0 * dist).exp();
            let coeff = match metric {
                UniformityMetric::Sq => -8.0 / sum * k,
                UniformityMetric::L2 => {
                    if dist <= 1e-12 {
                        continue; // kernel flat at coincident points
                    }
                    -4.0 / sum * k / dist
                }
            };
            for j in 0..d {
                let diff = v.row(a)[j] - v.row(b)[j];
                ghat.row_mut(a)[j] += coeff * diff;
                ghat.row_mut(b)[j] -= coeff * diff;
            }
        }
    }

    // Pull each row's cotangent through the normalization Jacobian.
    for (a, &(orig, norm)) in kept.iter().enumerate() {
        let va = v.row(a);
        let g = ghat.row(a);
        let vg = dot(va, g);
        let out = cot.row_mut(orig as usize);
        for j in 0..d {
            out[j] += scale * (g[j] - vg * va[j]) / norm;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::BipartiteGraph;
    use crate::model::{forward, init_model, EmbeddingModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn align_pair_reference_points() {
        assert_eq!(align_pair(&[3.0, 4.0], &[3.0, 4.0]), 0.0);
        assert!((align_pair(&[1.0, 0.0], &[0.0, 1.0]) - 2.0).abs() < 1e-15);
        assert!((align_pair(&[1.0, 0.0], &[-1.0, 0.0]) - 4.0).abs() < 1e-15);
        // Degenerate inputs contribute nothing.
        assert_eq!(align_pair(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
    }

    #[test]
    fn align_pair_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let x: Vec<f64> = (0..5).map(|_| rng.random::<f64>() - 0.5).collect();
            let y: Vec<f64> = (0..5).map(|_| rng.random::<f64>() - 0.5).collect();
            let c = rng.random::<f64>() * 10.0 + 0.01;
            let k = rng.random::<f64>() * 10.0 + 0.01;
            let xs: Vec<f64> = x.iter().map(|v| v * c).collect();
            let ys: Vec<f64> = y.iter().map(|v| v * k).collect();
            let a = align_pair(&x, &y);
            let b = align_pair(&xs, &ys);
            assert!((a - b).abs() < 1e-12);
            assert!((0.0..=4.0).contains(&a));
        }
    }

    fn single_edge_stack(v: &[f64]) -> (BipartiteGraph, LayerStack) {
        let g = BipartiteGraph::from_edges(1, 1, &[(0, 0)]);
        let mut m = init_model(1, 1, v.len(), 2, 0, 0.0);
        m.user_emb0.row_mut(0).copy_from_slice(v);
        m.item_emb0.row_mut(0).copy_from_slice(v);
        let stack = forward(&m, &g).unwrap();
        (g, stack)
    }

    #[test]
    fn alignment_vanishes_when_layers_echo_the_same_vector() {
        let (_, stack) = single_edge_stack(&[0.3, -1.2, 0.5]);
        let batch = Batch::from_edges(&[(0, 0)]).unwrap();
        let losses = alignment_losses(&stack, &batch).unwrap();
        assert_eq!(losses.len(), 3);
        for l in losses {
            assert!(l.abs() < 1e-12);
        }
    }

    #[test]
    fn entry_zero_is_the_mean_of_align_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = BipartiteGraph::from_edges(4, 4, &[(0, 1), (1, 1), (2, 3), (3, 0)]);
        let mut m = init_model(4, 4, 3, 1, 4, 0.3);
        for v in m.user_emb0.as_mut_slice() {
            *v = rng.random::<f64>() - 0.5;
        }
        let stack = forward(&m, &g).unwrap();
        let batch = Batch::from_edges(&[(0, 1), (2, 3), (3, 0)]).unwrap();
        let losses = alignment_losses(&stack, &batch).unwrap();
        let mean: f64 = batch
            .edges
            .iter()
            .map(|&(u, i)| align_pair(m.user_emb0.row(u as usize), m.item_emb0.row(i as usize)))
            .sum::<f64>()
            / 3.0;
        assert!((losses[0] - mean).abs() < 1e-14);
    }

    // Per-edge brute-force recomputation of every layer entry.
    #[test]
    fn alignment_matches_per_edge_brute_force() {
        let edges = [(0u32, 0u32), (0, 1), (1, 1), (2, 2), (1, 2)];
        let g = BipartiteGraph::from_edges(3, 3, &edges);
        let m = init_model(3, 3, 4, 2, 66, 0.5);
        let stack = forward(&m, &g).unwrap();
        let batch = Batch::from_edges(&edges).unwrap();
        let losses = alignment_losses(&stack, &batch).unwrap();

        let norm = |v: &[f64]| {
            let n = l2_norm(v);
            v.iter().map(|x| x / n).collect::<Vec<f64>>()
        };
        let sqdist =
            |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum() };
        for l in 0..=2usize {
            let mut acc = 0.0;
            for &(u, i) in &edges {
                let u0 = norm(stack.user_layers[0].row(u as usize));
                let i0 = norm(stack.item_layers[0].row(i as usize));
                if l == 0 {
                    acc += sqdist(&u0, &i0);
                } else {
                    let il = norm(stack.item_layers[l].row(i as usize));
                    let ul = norm(stack.user_layers[l].row(u as usize));
                    acc += 0.5 * (sqdist(&u0, &il) + sqdist(&i0, &ul));
                }
            }
            acc /= edges.len() as f64;
            assert!((losses[l] - acc).abs() < 1e-10, "layer {l}");
        }
    }

    #[test]
    fn uniformity_reference_points() {
        // Single point: only the self-pair, log(e^0) = 0.
        let one = Mat::from_vec(1, 2, vec![1.0, 0.0]);
        assert_eq!(uniformity(&one, UniformityMetric::Sq), 0.0);
        // Two identical unit vectors: log((1/4) * 4 * e^0) = 0.
        let same = Mat::from_vec(2, 2, vec![1.0, 0.0, 1.0, 0.0]);
        assert!(uniformity(&same, UniformityMetric::Sq).abs() < 1e-15);
        // Two antipodal unit vectors: log((2 + 2 e^{-8}) / 4), evaluated
        // directly: squared distance 4, kernel exp(-8).
        let anti = Mat::from_vec(2, 2, vec![1.0, 0.0, -1.0, 0.0]);
        let expected = ((2.0 + 2.0 * (-8.0f64).exp()) / 4.0).ln();
        assert!((expected - (-0.6928117741870496)).abs() < 1e-12);
        assert!((uniformity(&anti, UniformityMetric::Sq) - expected).abs() < 1e-12);
        // Same pair under the plain-distance kernel: exp(-2 * 2).
        let expected_l2 = ((2.0 + 2.0 * (-4.0f64).exp()) / 4.0).ln();
        assert!((uniformity(&anti, UniformityMetric::L2) - expected_l2).abs() < 1e-12);
    }

    #[test]
    fn uniformity_is_nonpositive_and_zero_only_at_coincidence() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for m in [2usize, 5, 17] {
            let mut v = Mat::zeros(m, 3);
            for r in 0..m {
                let raw: Vec<f64> = (0..3).map(|_| rng.random::<f64>() - 0.5).collect();
                let n = l2_norm(&raw);
                for (j, x) in raw.iter().enumerate() {
                    v.row_mut(r)[j] = x / n;
                }
            }
            let u = uniformity(&v, UniformityMetric::Sq);
            assert!(u <= 0.0);
            assert!(u < -1e-6, "random points should not coincide");
        }
    }

    fn random_setup(
        seed: u64,
        n_users: usize,
        n_items: usize,
        n_edges: usize,
        d: usize,
        layers: usize,
    ) -> (BipartiteGraph, EmbeddingModel) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let edges: Vec<(u32, u32)> = (0..n_edges)
            .map(|_| {
                (
                    rng.random_range(0..n_users as u32),
                    rng.random_range(0..n_items as u32),
                )
            })
            .collect();
        let g = BipartiteGraph::from_edges(n_users, n_items, &edges);
        let m = init_model(n_users, n_items, d, layers, seed ^ 0x5eed, 0.5);
        (g, m)
    }

    #[test]
    fn gamma_zero_layers_zero_reduces_to_direct_alignment() {
        let (g, m) = random_setup(11, 5, 5, 12, 3, 0);
        let stack = forward(&m, &g).unwrap();
        let batch = Batch::from_edges(g.edges()).unwrap();
        let cfg = LossConfig {
            alpha: 1.0,
            gamma: 0.0,
            layers: 0,
            ..LossConfig::default()
        };
        let report = total_loss(&stack, &batch, &cfg).unwrap();
        assert_eq!(report.align_per_layer.len(), 1);
        assert_eq!(report.total, report.align_per_layer[0]);
        assert_eq!(report.uniform_user, 0.0);
    }

    #[test]
    fn alpha_zero_collapses_pooling_to_layer_zero() {
        let (g, m) = random_setup(12, 6, 6, 15, 3, 3);
        let stack = forward(&m, &g).unwrap();
        let batch = Batch::from_edges(g.edges()).unwrap();
        let with_layers = total_loss(
            &stack,
            &batch,
            &LossConfig {
                alpha: 0.0,
                gamma: 0.3,
                layers: 3,
                ..LossConfig::default()
            },
        )
        .unwrap();
        // Reference: the same model with a 0-layer stack.
        let mut m0 = m.clone();
        m0.layers = 0;
        let stack0 = forward(&m0, &g).unwrap();
        let base = total_loss(
            &stack0,
            &batch,
            &LossConfig {
                alpha: 0.0,
                gamma: 0.3,
                layers: 0,
                ..LossConfig::default()
            },
        )
        .unwrap();
        assert!((with_layers.total - base.total).abs() < 1e-12);
    }

    #[test]
    fn report_recombines_to_the_total() {
        let (g, m) = random_setup(13, 8, 7, 25, 4, 2);
        let stack = forward(&m, &g).unwrap();
        let batch = Batch::from_edges(&g.edges()[..10]).unwrap();
        let cfg = LossConfig {
            alpha: 0.7,
            gamma: 0.4,
            layers: 2,
            ..LossConfig::default()
        };
        let r = total_loss(&stack, &batch, &cfg).unwrap();
        let recombined: f64 = r
            .align_per_layer
            .iter()
            .enumerate()
            .map(|(l, a)| alpha_pow(cfg.alpha, l) * a)
            .sum::<f64>()
            + cfg.gamma / 2.0 * (r.uniform_user + r.uniform_item);
        assert!((r.total - recombined).abs() < 1e-12);
    }

    #[test]
    fn uniformity_order_beyond_layers_is_rejected() {
        let (g, m) = random_setup(14, 4, 4, 8, 3, 1);
        let stack = forward(&m, &g).unwrap();
        let batch = Batch::from_edges(g.edges()).unwrap();
        let cfg = LossConfig {
            layers: 1,
            uniformity_order: 2,
            ..LossConfig::default()
        };
        assert!(matches!(
            total_loss(&stack, &batch, &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn gradient_is_zero_at_the_aligned_optimum() {
        // All embeddings equal: every alignment term sits at its minimum.
        let g = BipartiteGraph::from_edges(2, 2, &[(0, 0), (1, 1), (0, 1)]);
        let mut m = init_model(2, 2, 3, 0, 0, 0.0);
        for r in 0..2 {
            m.user_emb0.row_mut(r).copy_from_slice(&[0.2, -0.4, 0.6]);
            m.item_emb0.row_mut(r).copy_from_slice(&[0.2, -0.4, 0.6]);
        }
        let stack = forward(&m, &g).unwrap();
        let batch = Batch::from_edges(g.edges()).unwrap();
        let cfg = LossConfig {
            alpha: 1.0,
            gamma: 0.0,
            layers: 0,
            ..LossConfig::default()
        };
        let (gu, gi) = backward(&stack, &batch, &cfg, &g).unwrap();
        assert!(gu.as_slice().iter().all(|&x| x.abs() < 1e-12));
        assert!(gi.as_slice().iter().all(|&x| x.abs() < 1e-12));
    }

    // Hand-differentiated single pair: d/dx (2 - 2 cos) at x=(1,0), y=(0,1)
    // is -2 (y - (x.y) x) / |x| = (0, -2).
    #[test]
    fn gradient_matches_the_hand_derivation() {
        let g = BipartiteGraph::from_edges(1, 1, &[(0, 0)]);
        let mut m = init_model(1, 1, 2, 0, 0, 0.0);
        m.user_emb0.row_mut(0).copy_from_slice(&[1.0, 0.0]);
        m.item_emb0.row_mut(0).copy_from_slice(&[0.0, 1.0]);
        let stack = forward(&m, &g).unwrap();
        let batch = Batch::from_edges(&[(0, 0)]).unwrap();
        let cfg = LossConfig {
            alpha: 1.0,
            gamma: 0.0,
            layers: 0,
            ..LossConfig::default()
        };
        let (gu, gi) = backward(&stack, &batch, &cfg, &g).unwrap();
        assert!((gu.row(0)[0] - 0.0).abs() < 1e-14);
        assert!((gu.row(0)[1] - (-2.0)).abs() < 1e-14);
        assert!((gi.row(0)[0] - (-2.0)).abs() < 1e-14);
        assert!((gi.row(0)[1] - 0.0).abs() < 1e-14);
    }

    fn loss_of_tables(
        user: &Mat,
        item: &Mat,
        layers: usize,
        g: &BipartiteGraph,
        batch: &Batch,
        cfg: &LossConfig,
    ) -> f64 {
        let m = EmbeddingModel {
            user_emb0: user.clone(),
            item_emb0: item.clone(),
            d: user.cols(),
            layers,
        };
        let stack = forward(&m, g).unwrap();
        total_loss(&stack, batch, cfg).unwrap().total
    }

    // Central finite differences over every coordinate of both tables.
    #[test]
    fn gradient_matches_finite_differences() {
        let (g, m) = random_setup(21, 6, 5, 14, 3, 3);
        let stack = forward(&m, &g).unwrap();
        let batch = Batch::from_edges(&g.edges()[..8]).unwrap();
        let cfg = LossConfig {
            alpha: 0.7,
            gamma: 0.3,
            layers: 3,
            ..LossConfig::default()
        };
        let (gu, gi) = backward(&stack, &batch, &cfg, &g).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for table in [0, 1] {
            let rows = if table == 0 { 6 } else { 5 };
            for r in 0..rows {
                for j in 0..3 {
                    let mut up = m.user_emb0.clone();
                    let mut ip = m.item_emb0.clone();
                    let mut un = m.user_emb0.clone();
                    let mut inn = m.item_emb0.clone();
                    if table == 0 {
                        up.row_mut(r)[j] += h;
                        un.row_mut(r)[j] -= h;
                    } else {
                        ip.row_mut(r)[j] += h;
                        inn.row_mut(r)[j] -= h;
                    }
                    let fp = loss_of_tables(&up, &ip, 3, &g, &batch, &cfg);
                    let fm = loss_of_tables(&un, &inn, 3, &g, &batch, &cfg);
                    let fd = (fp - fm) / (2.0 * h);
                    let an = if table == 0 {
                        gu.row(r)[j]
                    } else {
                        gi.row(r)[j]
                    };
                    let err = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-4);
                    worst = worst.max(err);
                }
            }
        }
        assert!(worst < 1e-4, "worst relative gradient error {worst:.3e}");
    }

    #[test]
    fn rows_outside_the_batch_neighborhood_have_exactly_zero_gradient() {
        // Two disconnected components; batch touches only the first.
        let g = BipartiteGraph::from_edges(4, 4, &[(0, 0), (1, 0), (2, 2), (3, 3)]);
        let m = init_model(4, 4, 3, 2, 77, 0.3);
        let stack = forward(&m, &g).unwrap();
        let batch = Batch::from_edges(&[(0, 0)]).unwrap();
        let cfg = LossConfig {
            alpha: 0.9,
            gamma: 0.2,
            layers: 2,
            ..LossConfig::default()
        };
        let (gu, gi) = backward(&stack, &batch, &cfg, &g).unwrap();
        // Users 2,3 and items 2,3 live in the other component.
        for r in 2..4 {
            assert!(gu.row(r).iter().all(|&x| x == 0.0));
            assert!(gi.row(r).iter().all(|&x| x == 0.0));
        }
        // u1 is in the 2-hop neighborhood of the batch through item 0.
        assert!(gu.row(1).iter().any(|&x| x != 0.0));
    }

    #[test]
    fn config_warnings_flag_out_of_range_values() {
        let cfg = LossConfig {
            alpha: 2.5,
            gamma: -0.1,
            ..LossConfig::default()
        };
        assert_eq!(cfg.warnings().len(), 2);
        assert!(LossConfig::default().warnings().is_empty());
    }
}
