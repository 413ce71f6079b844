//! Embedding table and its multi-hop layer stack.
//!
//! Layer 0 is the free parameter table. Layer l >= 1 holds the aggregated
//! representation of each node's l-hop neighborhood, obtained by applying
//! the graph operator l times, alternating sides (a user's layer-1 vector
//! sums its items' layer-0 vectors, and so on). Layers are pure aggregates
//! with no mixing back into layer 0; ranking scores use layer 0 alone.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::graph::BipartiteGraph;
use crate::mat::Mat;
use crate::{Error, Result};

/// Base embedding tables plus the configured number of aggregation layers.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub user_emb0: Mat,
    pub item_emb0: Mat,
    pub d: usize,
    pub layers: usize,
}

/// Per-layer representations; index 0 aliases the base tables.
#[derive(Debug, Clone)]
pub struct LayerStack {
    pub user_layers: Vec<Mat>,
    pub item_layers: Vec<Mat>,
}

impl LayerStack {
    pub fn layers(&self) -> usize {
        self.user_layers.len() - 1
    }
}

/// Draws both tables i.i.d. from a zero-mean normal with standard deviation
/// `init_scale`; the fill order (user table row-major, then item table) is
/// part of the reproducibility contract.
pub fn init_model(
    n_users: usize,
    n_items: usize,
    d: usize,
    layers: usize,
    seed: u64,
    init_scale: f64,
) -> EmbeddingModel {
    assert!(d >= 1, "embedding dimension must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, init_scale).expect("init_scale must be non-negative and finite");
    let mut user_emb0 = Mat::zeros(n_users, d);
    for v in user_emb0.as_mut_slice() {
        *v = normal.sample(&mut rng);
    }
    let mut item_emb0 = Mat::zeros(n_items, d);
    for v in item_emb0.as_mut_slice() {
        *v = normal.sample(&mut rng);
    }
    EmbeddingModel {
        user_emb0,
        item_emb0,
        d,
        layers,
    }
}

/// Computes the layer stack for `model.layers` aggregation steps.
pub fn forward(model: &EmbeddingModel, graph: &BipartiteGraph) -> Result<LayerStack> {
    if graph.n_users() != model.user_emb0.rows() || graph.n_items() != model.item_emb0.rows() {
        return Err(Error::DimMismatch {
            what: "forward",
            expected: (model.user_emb0.rows(), model.item_emb0.rows()),
            got: (graph.n_users(), graph.n_items()),
        });
    }
    let mut user_layers = Vec::with_capacity(model.layers + 1);
    let mut item_layers = Vec::with_capacity(model.layers + 1);
    user_layers.push(model.user_emb0.clone());
    item_layers.push(model.item_emb0.clone());
    for l in 0..model.layers {
        let next_users = graph.aggregate_users_from_items(&item_layers[l])?;
        let next_items = graph.aggregate_items_from_users(&user_layers[l])?;
        user_layers.push(next_users);
        item_layers.push(next_items);
    }
    Ok(LayerStack {
        user_layers,
        item_layers,
    })
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"GAUCKPT\0";
const CHECKPOINT_VERSION: u32 = 1;

impl EmbeddingModel {
    /// Raw layer-0 dot product. This is the ranking score.
    pub fn score(&self, u: u32, i: u32) -> f64 {
        crate::mat::dot(
            self.user_emb0.row(u as usize),
            self.item_emb0.row(i as usize),
        )
    }

    /// Writes the checkpoint: magic, version u32, then n_users / n_items /
    /// d / layers as u64, a 32-byte vocabulary hash, and both tables as
    /// row-major little-endian f64. Everything is little-endian.
    pub fn save_checkpoint(&self, path: &Path, vocab_hash: &[u8; 32]) -> Result<()> {
        let io_err = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut buf = Vec::with_capacity(
            64 + 8 * (self.user_emb0.as_slice().len() + self.item_emb0.as_slice().len()),
        );
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.user_emb0.rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.item_emb0.rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.d as u64).to_le_bytes());
        buf.extend_from_slice(&(self.layers as u64).to_le_bytes());
        buf.extend_from_slice(vocab_hash);
        for v in self.user_emb0.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.item_emb0.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = fs::File::create(path).map_err(io_err)?;
        f.write_all(&buf).map_err(io_err)
    }

    /// Reads a checkpoint and returns the model with the stored vocabulary
    /// hash. Use [`EmbeddingModel::load_checkpoint`] to enforce the hash.
    pub fn read_checkpoint(path: &Path) -> Result<(EmbeddingModel, [u8; 32])> {
        let io_err = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut bytes = Vec::new();
        fs::File::open(path)
            .map_err(io_err)?
            .read_to_end(&mut bytes)
            .map_err(io_err)?;
        let bad = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
        if bytes.len() < 8 + 4 + 4 * 8 + 32 {
            return Err(bad("file too short"));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let mut at = 12;
        let mut next_u64 = || {
            let v = u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
            at += 8;
            v as usize
        };
        let n_users = next_u64();
        let n_items = next_u64();
        let d = next_u64();
        let layers = next_u64();
        let mut hash = [0u8; 32];
        hash.copy_from_slice(&bytes[at..at + 32]);
        at += 32;
        let need = at + 8 * d * (n_users + n_items);
        if bytes.len() != need {
            return Err(bad(&format!(
                "expected {need} bytes for {n_users}x{n_items}x{d}, found {}",
                bytes.len()
            )));
        }
        let mut read_table = |rows: usize| {
            let mut m = Mat::zeros(rows, d);
            for v in m.as_mut_slice() {
                *v = f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
                at += 8;
            }
            m
        };
        let user_emb0 = read_table(n_users);
        let item_emb0 = read_table(n_items);
        Ok((
            EmbeddingModel {
                user_emb0,
                item_emb0,
                d,
                layers,
            },
            hash,
        ))
    }

    /// Reads a checkpoint, rejecting it when the stored vocabulary hash
    /// differs from `expected_hash`.
    pub fn load_checkpoint(path: &Path, expected_hash: &[u8; 32]) -> Result<EmbeddingModel> {
        let (model, hash) = Self::read_checkpoint(path)?;
        if &hash != expected_hash {
            return Err(Error::VocabHashMismatch);
        }
        Ok(model)
    }
}
