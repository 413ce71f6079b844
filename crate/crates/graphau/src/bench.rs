//! Scalability comparison: aggregated multi-hop alignment versus aligning
//! every high-order pair directly.
//!
//! For each layer count L the report holds three columns:
//!
//! 1. the cumulative number of distinct (user, item) pairs within
//!    shortest-path distance 2L-1 (the pairs a direct aligner must touch),
//! 2. the median wall-clock time of one aggregated-alignment training epoch
//!    at that L,
//! 3. the median wall-clock time of one direct-alignment reference epoch,
//!    which enumerates the reachable pairs per user (streaming breadth-first
//!    search, so the pair set never has to be held in memory) and applies
//!    the pairwise alignment loss to each.
//!
//! When the pair enumeration trips the frontier cap, that L is marked
//! `infeasible` for the direct reference and the aggregated timing still
//! runs, since its cost does not depend on the pair count.

use std::hint::black_box;
use std::time::Instant;

use crate::graph::BipartiteGraph;
use crate::loss::{align_pair, backward, total_loss, Batch, LossConfig, UniformityMetric};
use crate::model::{forward, init_model};
use crate::optimizer::{adam_step, AdamHyper, AdamState};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub l_max: usize,
    /// Timed epochs per configuration; one extra warmup epoch runs first.
    pub trials: usize,
    pub d: usize,
    pub batch_size: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub seed: u64,
    pub frontier_cap: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            l_max: 3,
            trials: 3,
            d: 32,
            batch_size: 1024,
            alpha: 1.0,
            gamma: 0.2,
            seed: 0,
            frontier_cap: 50_000_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub layers: usize,
    /// Distinct pairs within distance 2*layers-1; None when the frontier
    /// cap made counting infeasible.
    pub cumulative_pairs: Option<u64>,
    pub graphau_epoch_s: f64,
    pub direct_epoch_s: Option<f64>,
    /// Pairs the direct reference actually aligned per epoch.
    pub direct_pairs_aligned: Option<u64>,
}

impl BenchRow {
    pub fn direct_status(&self) -> &'static str {
        if self.direct_epoch_s.is_some() {
            "ok"
        } else {
            "infeasible"
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    /// Plot-ready CSV, one row per layer count.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "layers,cumulative_high_order_pairs,graphau_epoch_seconds,direct_epoch_seconds,direct_status\n",
        );
        for r in &self.rows {
            let pairs = r.cumulative_pairs.map_or(String::new(), |p| p.to_string());
            let direct = r
                .direct_epoch_s
                .map_or(String::new(), |t| format!("{t:.6}"));
            s.push_str(&format!(
                "{},{},{:.6},{},{}\n",
                r.layers,
                pairs,
                r.graphau_epoch_s,
                direct,
                r.direct_status()
            ));
        }
        s
    }

    pub fn render_table(&self) -> String {
        let mut s = format!(
            "{:>6} {:>18} {:>16} {:>16} {:>12}\n",
            "layers", "high-order pairs", "graphau s/epoch", "direct s/epoch", "direct"
        );
        for r in &self.rows {
            let pairs = r
                .cumulative_pairs
                .map_or("-".to_string(), |p| p.to_string());
            let direct = r
                .direct_epoch_s
                .map_or("-".to_string(), |t| format!("{t:.4}"));
            s.push_str(&format!(
                "{:>6} {:>18} {:>16.4} {:>16} {:>12}\n",
                r.layers,
                pairs,
                r.graphau_epoch_s,
                direct,
                r.direct_status()
            ));
        }
        s
    }
}

/// Runs the comparison for every layer count in 1..=l_max.
pub fn bench_scalability(graph: &BipartiteGraph, cfg: &BenchConfig) -> Result<BenchReport> {
    assert!(cfg.l_max >= 1 && cfg.trials >= 1);
    let mut rows = Vec::with_capacity(cfg.l_max);
    for l in 1..=cfg.l_max {
        let cumulative_pairs = match graph.khop_edge_count(l, cfg.frontier_cap) {
            Ok(counts) => Some(counts.iter().sum::<u64>()),
            Err(Error::FrontierCap { .. }) => None,
            Err(e) => return Err(e),
        };
        let graphau_epoch_s = time_graphau_epoch(graph, l, cfg)?;
        let (direct_epoch_s, direct_pairs_aligned) = if cumulative_pairs.is_some() {
            let (t, n) = time_direct_epoch(graph, l, cfg)?;
            (Some(t), Some(n))
        } else {
            (None, None)
        };
        rows.push(BenchRow {
            layers: l,
            cumulative_pairs,
            graphau_epoch_s,
            direct_epoch_s,
            direct_pairs_aligned,
        });
    }
    Ok(BenchReport { rows })
}

fn lower_median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[(xs.len() - 1) / 2]
}

/// Median wall-clock seconds of a full aggregated-alignment training epoch
/// (forward stack, loss, gradient, optimizer step, batched over all edges).
fn time_graphau_epoch(graph: &BipartiteGraph, layers: usize, cfg: &BenchConfig) -> Result<f64> {
    let mut model = init_model(
        graph.n_users(),
        graph.n_items(),
        cfg.d,
        layers,
        cfg.seed,
        0.1,
    );
    let mut state = AdamState::new(
        graph.n_users(),
        graph.n_items(),
        cfg.d,
        AdamHyper::default(),
    );
    let loss_cfg = LossConfig {
        alpha: cfg.alpha,
        gamma: cfg.gamma,
        layers,
        uniformity_order: 0,
        uniformity_metric: UniformityMetric::Sq,
    };
    let mut times = Vec::with_capacity(cfg.trials);
    for epoch in 0..=cfg.trials {
        let t0 = Instant::now();
        for chunk in graph.edges().chunks(cfg.batch_size) {
            let batch = Batch::from_edges(chunk)?;
            let stack = forward(&model, graph)?;
            let report = total_loss(&stack, &batch, &loss_cfg)?;
            black_box(report.total);
            let (gu, gi) = backward(&stack, &batch, &loss_cfg, graph)?;
            adam_step(&mut model, &gu, &gi, &mut state)?;
        }
        if epoch > 0 {
            times.push(t0.elapsed().as_secs_f64());
        }
    }
    Ok(lower_median(times))
}

/// Median wall-clock seconds of one direct-alignment reference epoch:
/// enumerate every (user, item) pair within distance 2*layers-1 and apply
/// the pairwise alignment loss. Returns (median seconds, pairs per epoch).
fn time_direct_epoch(
    graph: &BipartiteGraph,
    layers: usize,
    cfg: &BenchConfig,
) -> Result<(f64, u64)> {
    let model = init_model(
        graph.n_users(),
        graph.n_items(),
        cfg.d,
        layers,
        cfg.seed,
        0.1,
    );
    let mut scratch = graph.bfs_scratch();
    let mut times = Vec::with_capacity(cfg.trials);
    let mut pairs_per_epoch = 0u64;
    for epoch in 0..=cfg.trials {
        let t0 = Instant::now();
        let mut sum = 0.0;
        let mut pairs = 0u64;
        for u in 0..graph.n_users() as u32 {
            let urow = model.user_emb0.row(u as usize);
            graph.for_each_item_within(
                u,
                2 * layers - 1,
                cfg.frontier_cap,
                &mut scratch,
                |i, _| {
                    sum += align_pair(urow, model.item_emb0.row(i as usize));
                    pairs += 1;
                },
            )?;
        }
        black_box(sum);
        if epoch > 0 {
            times.push(t0.elapsed().as_secs_f64());
        }
        pairs_per_epoch = pairs;
    }
    Ok((lower_median(times), pairs_per_epoch))
}
