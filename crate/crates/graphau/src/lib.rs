//! GraphAU: embedding training for implicit-feedback recommendation.
//!
//! The objective aligns each interacting user/item pair not only at the
//! embedding level but also against the aggregated representations of the
//! partner's multi-hop neighborhood, with per-layer alignment losses pooled
//! by a geometric weight `alpha^l` and an in-batch uniformity regularizer.
//! Scoring is a plain dot product of the layer-0 embeddings.
//!
//! Modules follow the data flow:
//!
//! - [`dataset`]: interaction ingestion, ID mapping, seeded splits
//! - [`graph`]: bipartite train graph with symmetric-normalized weights
//! - [`model`]: embedding table and its multi-hop layer stack
//! - [`loss`]: alignment/uniformity objective and its exact gradient
//! - [`optimizer`]: sparse-row Adam
//! - [`trainer`]: epoch loop with early stopping, plus a BPR baseline
//! - [`evaluator`]: full-ranking Recall/HitRatio/NDCG at a cutoff
//! - [`bench`]: scalability comparison against direct high-order alignment
//! - [`synth`]: synthetic interaction generators for tests and benchmarks

pub mod bench;
pub mod dataset;
pub mod evaluator;
pub mod graph;
pub mod loss;
pub mod mat;
pub mod model;
pub mod optimizer;
pub mod synth;
pub mod trainer;

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    ParseRow {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("split ratios must be positive and sum to 1, got sum {sum}")]
    BadRatios { sum: f64 },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("{what}: expected {expected:?}, got {got:?}")]
    DimMismatch {
        what: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("k-hop frontier from user {user} reached {frontier} nodes, cap is {cap}")]
    FrontierCap {
        user: u32,
        frontier: usize,
        cap: usize,
    },
    #[error("non-finite gradient in {table} table at row {row}")]
    NonFiniteGradient { table: &'static str, row: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error("no users with ground-truth interactions in the evaluated split")]
    NoEvaluableUsers,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint vocabulary hash does not match the dataset")]
    VocabHashMismatch,
    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
