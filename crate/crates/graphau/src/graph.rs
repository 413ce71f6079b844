//! User-item bipartite graph over the train split.
//!
//! Edge (u, i) carries the symmetric-normalized weight
//! `1 / sqrt(deg(u) * deg(i))`, and the two aggregation operators are the
//! weighted neighbor sums in either direction. Because the weights are
//! shared, the item-side operator is the exact transpose of the user-side
//! one, which the gradient code relies on. Neighbor lists are sorted and
//! contributions are summed in that order, so aggregation output is
//! bit-for-bit reproducible.

use crate::dataset::InteractionDataset;
use crate::mat::Mat;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct BipartiteGraph {
    n_users: usize,
    n_items: usize,
    edges: Vec<(u32, u32)>,
    // CSR adjacency, one per side. Neighbor lists sorted ascending.
    user_offsets: Vec<usize>,
    user_nbrs: Vec<u32>,
    user_wts: Vec<f64>,
    item_offsets: Vec<usize>,
    item_nbrs: Vec<u32>,
    item_wts: Vec<f64>,
    user_degree: Vec<u32>,
    item_degree: Vec<u32>,
}

/// Builds the train-split graph of a dataset.
pub fn build_graph(dataset: &InteractionDataset) -> BipartiteGraph {
    BipartiteGraph::from_edges(dataset.n_users, dataset.n_items, &dataset.train_edges)
}

impl BipartiteGraph {
    /// Builds the graph from an explicit edge list. Duplicate edges collapse.
    pub fn from_edges(n_users: usize, n_items: usize, edges: &[(u32, u32)]) -> BipartiteGraph {
        let mut edges: Vec<(u32, u32)> = edges.to_vec();
        edges.sort_unstable();
        edges.dedup();
        for &(u, i) in &edges {
            assert!(
                (u as usize) < n_users && (i as usize) < n_items,
                "edge ({u},{i}) out of range {n_users}x{n_items}"
            );
        }

        let mut user_degree = vec![0u32; n_users];
        let mut item_degree = vec![0u32; n_items];
        for &(u, i) in &edges {
            user_degree[u as usize] += 1;
            item_degree[i as usize] += 1;
        }

        let mut user_offsets = vec![0usize; n_users + 1];
        for u in 0..n_users {
            user_offsets[u + 1] = user_offsets[u] + user_degree[u] as usize;
        }
        let mut item_offsets = vec![0usize; n_items + 1];
        for i in 0..n_items {
            item_offsets[i + 1] = item_offsets[i] + item_degree[i] as usize;
        }

        let mut user_nbrs = vec![0u32; edges.len()];
        let mut user_wts = vec![0.0; edges.len()];
        let mut item_nbrs = vec![0u32; edges.len()];
        let mut item_wts = vec![0.0; edges.len()];
        // Edge list is sorted by (u, i): user rows fill in ascending item
        // order, and each item bucket receives users in ascending order too,
        // so both adjacency sides come out sorted.
        let mut ucur: Vec<usize> = user_offsets[..n_users].to_vec();
        let mut icur: Vec<usize> = item_offsets[..n_items].to_vec();
        for &(u, i) in &edges {
            let w =
                1.0 / ((user_degree[u as usize] as f64) * (item_degree[i as usize] as f64)).sqrt();
            user_nbrs[ucur[u as usize]] = i;
            user_wts[ucur[u as usize]] = w;
            ucur[u as usize] += 1;
            item_nbrs[icur[i as usize]] = u;
            item_wts[icur[i as usize]] = w;
            icur[i as usize] += 1;
        }
        // Item buckets received users in ascending u already (edge list is
        // sorted by u first), so both sides are sorted at this point.

        BipartiteGraph {
            n_users,
            n_items,
            edges,
            user_offsets,
            user_nbrs,
            user_wts,
            item_offsets,
            item_nbrs,
            item_wts,
            user_degree,
            item_degree,
        }
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Deduplicated edges, sorted by (user, item).
    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn user_degree(&self, u: u32) -> u32 {
        self.user_degree[u as usize]
    }

    pub fn item_degree(&self, i: u32) -> u32 {
        self.item_degree[i as usize]
    }

    /// Sorted `(item, weight)` neighbors of a user.
    pub fn user_neighbors(&self, u: u32) -> impl Iterator<Item = (u32, f64)> + '_ {
        let r = self.user_offsets[u as usize]..self.user_offsets[u as usize + 1];
        self.user_nbrs[r.clone()]
            .iter()
            .copied()
            .zip(self.user_wts[r].iter().copied())
    }

    /// Sorted `(user, weight)` neighbors of an item.
    pub fn item_neighbors(&self, i: u32) -> impl Iterator<Item = (u32, f64)> + '_ {
        let r = self.item_offsets[i as usize]..self.item_offsets[i as usize + 1];
        self.item_nbrs[r.clone()]
            .iter()
            .copied()
            .zip(self.item_wts[r].iter().copied())
    }

    /// Weighted neighbor sum: row u of the result is
    /// `sum_{i in N(u)} w(u,i) * item_vectors[i]`. Zero-degree users map to
    /// the zero row.
    pub fn aggregate_users_from_items(&self, item_vectors: &Mat) -> Result<Mat> {
        if item_vectors.rows() != self.n_items {
            return Err(Error::DimMismatch {
                what: "aggregate_users_from_items",
                expected: (self.n_items, item_vectors.cols()),
                got: (item_vectors.rows(), item_vectors.cols()),
            });
        }
        let d = item_vectors.cols();
        let mut out = Mat::zeros(self.n_users, d);
        for u in 0..self.n_users {
            let row = out.row_mut(u);
            for idx in self.user_offsets[u]..self.user_offsets[u + 1] {
                let nbr = self.user_nbrs[idx] as usize;
                let w = self.user_wts[idx];
                let src = item_vectors.row(nbr);
                for (o, s) in row.iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
        Ok(out)
    }

    /// Mirror of [`BipartiteGraph::aggregate_users_from_items`].
    pub fn aggregate_items_from_users(&self, user_vectors: &Mat) -> Result<Mat> {
        if user_vectors.rows() != self.n_users {
            return Err(Error::DimMismatch {
                what: "aggregate_items_from_users",
                expected: (self.n_users, user_vectors.cols()),
                got: (user_vectors.rows(), user_vectors.cols()),
            });
        }
        let d = user_vectors.cols();
        let mut out = Mat::zeros(self.n_items, d);
        for i in 0..self.n_items {
            let row = out.row_mut(i);
            for idx in self.item_offsets[i]..self.item_offsets[i + 1] {
                let nbr = self.item_nbrs[idx] as usize;
                let w = self.item_wts[idx];
                let src = user_vectors.row(nbr);
                for (o, s) in row.iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
        Ok(out)
    }

    /// Counts, for each l in 1..=hops, the distinct (user, item) pairs whose
    /// shortest path has exactly 2l-1 edges. The l = 1 count is the number
    /// of train edges; larger l capture the pairs a direct high-order
    /// aligner would have to touch.
    ///
    /// `frontier_cap` bounds the size of any BFS frontier; exceeding it
    /// aborts with [`Error::FrontierCap`] instead of grinding on.
    pub fn khop_edge_count(&self, hops: usize, frontier_cap: usize) -> Result<Vec<u64>> {
        assert!(hops >= 1, "hops must be >= 1");
        let mut counts = vec![0u64; hops];
        let mut scratch = BfsScratch::new(self.n_users + self.n_items);
        for u in 0..self.n_users as u32 {
            self.for_each_item_within(u, 2 * hops - 1, frontier_cap, &mut scratch, |_, depth| {
                counts[(depth - 1) / 2] += 1;
            })?;
        }
        Ok(counts)
    }

    /// Breadth-first walk from user `u`; calls `on_item(item, depth)` once
    /// per item at its shortest-path depth (odd, <= max_depth).
    pub(crate) fn for_each_item_within(
        &self,
        u: u32,
        max_depth: usize,
        frontier_cap: usize,
        scratch: &mut BfsScratch,
        mut on_item: impl FnMut(u32, usize),
    ) -> Result<()> {
        // Node ids: users are 0..n_users, items are n_users..n_users+n_items.
        let item_base = self.n_users as u32;
        scratch.epoch += 1;
        let epoch = scratch.epoch;
        scratch.cur.clear();
        scratch.cur.push(u);
        scratch.stamp[u as usize] = epoch;
        let mut depth = 0usize;
        while !scratch.cur.is_empty() && depth < max_depth {
            depth += 1;
            scratch.next.clear();
            // `cur` and `next` are disjoint buffers; swap below.
            for idx in 0..scratch.cur.len() {
                let node = scratch.cur[idx];
                if node < item_base {
                    let r = self.user_offsets[node as usize]..self.user_offsets[node as usize + 1];
                    for &i in &self.user_nbrs[r] {
                        let enc = item_base + i;
                        if scratch.stamp[enc as usize] != epoch {
                            scratch.stamp[enc as usize] = epoch;
                            if scratch.next.len() >= frontier_cap {
                                return Err(Error::FrontierCap {
                                    user: u,
                                    frontier: scratch.next.len() + 1,
                                    cap: frontier_cap,
                                });
                            }
                            scratch.next.push(enc);
                            on_item(i, depth);
                        }
                    }
                } else {
                    let i = (node - item_base) as usize;
                    let r = self.item_offsets[i]..self.item_offsets[i + 1];
                    for &v in &self.item_nbrs[r] {
                        if scratch.stamp[v as usize] != epoch {
                            scratch.stamp[v as usize] = epoch;
                            if scratch.next.len() >= frontier_cap {
                                return Err(Error::FrontierCap {
                                    user: u,
                                    frontier: scratch.next.len() + 1,
                                    cap: frontier_cap,
                                });
                            }
                            scratch.next.push(v);
                        }
                    }
                }
            }
            std::mem::swap(&mut scratch.cur, &mut scratch.next);
        }
        Ok(())
    }

    pub(crate) fn bfs_scratch(&self) -> BfsScratch {
        BfsScratch::new(self.n_users + self.n_items)
    }
}

/// Reusable BFS buffers; visit marks use an epoch stamp so the arrays never
/// need clearing between sources.
pub(crate) struct BfsScratch {
    stamp: Vec<u32>,
    epoch: u32,
    cur: Vec<u32>,
    next: Vec<u32>,
}

impl BfsScratch {
    fn new(n_nodes: usize) -> Self {
        BfsScratch {
            stamp: vec![0; n_nodes],
            epoch: 0,
            cur: Vec::new(),
            next: Vec::new(),
        }
    }
}
