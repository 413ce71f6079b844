//! Epoch loop: shuffle, batch, forward, loss, backward, step, evaluate.
//!
//! Validation NDCG@k drives early stopping: after `early_stop_patience`
//! consecutive evaluations without improvement the loop stops and the
//! parameters from the best evaluation are returned (checkpoint-on-best).
//! If validation never runs (no validation edges, or `eval_every` larger
//! than the horizon) the final parameters are returned instead.
//!
//! The layer stack is recomputed per batch over the whole train graph from
//! the current base table. With one training thread the whole procedure is
//! a pure function of (dataset, config), bit for bit.
//!
//! A matrix-factorization BPR baseline lives here too: same tables, same
//! optimizer, but pairwise log-sigmoid loss on raw dot products with one
//! uniform negative item per positive.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{InteractionDataset, Split};
use crate::evaluator::{evaluate, RankingMetrics};
use crate::graph::build_graph;
use crate::loss::{backward, total_loss, Batch, LossConfig};
use crate::mat::{dot, Mat};
use crate::model::{forward, init_model, EmbeddingModel};
use crate::optimizer::{adam_step, AdamHyper, AdamState};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Multi-hop alignment with uniformity.
    Graphau,
    /// Pairwise-ranking baseline on the same embedding tables.
    Bpr,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs_max: usize,
    pub batch_size: usize,
    /// Consecutive evaluations without improvement before stopping.
    pub early_stop_patience: usize,
    /// Epochs between validation evaluations; 0 disables evaluation.
    pub eval_every: usize,
    pub seed: u64,
    pub objective: Objective,
    pub loss: LossConfig,
    pub opt: AdamHyper,
    pub d: usize,
    pub init_scale: f64,
    pub eval_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs_max: 200,
            batch_size: 1024,
            early_stop_patience: 10,
            eval_every: 1,
            seed: 0,
            objective: Objective::Graphau,
            loss: LossConfig::default(),
            opt: AdamHyper::default(),
            d: 32,
            init_scale: 0.1,
            eval_k: 20,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch total over the epoch.
    pub loss_total: f64,
    pub align_per_layer: Vec<f64>,
    pub uniform_user: f64,
    pub uniform_item: f64,
    pub degenerate_pairs: u64,
    pub valid: Option<RankingMetrics>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

impl TrainLog {
    /// One JSON record per epoch.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let io_err = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut f = fs::File::create(path).map_err(io_err)?;
        for rec in &self.epochs {
            let line = serde_json::to_string(rec)
                .map_err(|e| Error::Config(format!("trainlog serialization: {e}")))?;
            writeln!(f, "{line}").map_err(io_err)?;
        }
        Ok(())
    }

    pub fn best_valid_ndcg(&self) -> Option<f64> {
        self.epochs
            .iter()
            .filter_map(|r| r.valid.as_ref().map(|m| m.ndcg_at_k))
            .fold(None, |acc, x| Some(acc.map_or(x, |a: f64| a.max(x))))
    }
}

/// Trains a fresh model on the dataset's train split.
pub fn train(
    dataset: &InteractionDataset,
    config: &TrainConfig,
) -> Result<(EmbeddingModel, TrainLog)> {
    for w in config.loss.warnings() {
        log::warn!("{w}");
    }
    let graph = build_graph(dataset);
    let mut model = init_model(
        dataset.n_users,
        dataset.n_items,
        config.d,
        config.loss.layers,
        config.seed,
        config.init_scale,
    );
    let mut log = TrainLog::default();
    if config.epochs_max == 0 {
        return Ok((model, log));
    }
    let mut state = AdamState::new(dataset.n_users, dataset.n_items, config.d, config.opt);
    // Separate stream from the init draw so changing d does not reshuffle.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7261_6e64);
    let mut edges = dataset.train_edges.clone();

    let can_eval = config.eval_every > 0 && !dataset.valid_edges.is_empty();
    let mut best: Option<(f64, usize, EmbeddingModel)> = None;
    let mut strikes = 0usize;

    'epochs: for epoch in 1..=config.epochs_max {
        let t0 = Instant::now();
        edges.shuffle(&mut rng);
        let n_batches = edges.len().div_ceil(config.batch_size);
        let mut sum_total = 0.0;
        let mut sum_align = vec![0.0; config.loss.layers + 1];
        let mut sum_uu = 0.0;
        let mut sum_ui = 0.0;
        let mut degenerate = 0u64;
        for (bidx, chunk) in edges.chunks(config.batch_size).enumerate() {
            match config.objective {
                Objective::Graphau => {
                    let batch = Batch::from_edges(chunk)?;
                    let stack = forward(&model, &graph)?;
                    let report = total_loss(&stack, &batch, &config.loss)?;
                    if !report.total.is_finite() {
                        return Err(Error::NonFiniteLoss {
                            epoch,
                            batch: bidx,
                            detail: format!("total={}", report.total),
                        });
                    }
                    let (gu, gi) = backward(&stack, &batch, &config.loss, &graph)?;
                    adam_step(&mut model, &gu, &gi, &mut state)?;
                    sum_total += report.total;
                    for (a, b) in sum_align.iter_mut().zip(&report.align_per_layer) {
                        *a += b;
                    }
                    sum_uu += report.uniform_user;
                    sum_ui += report.uniform_item;
                    degenerate += report.degenerate_pairs;
                }
                Objective::Bpr => {
                    let loss = bpr_step(&mut model, chunk, &mut state, &mut rng)?;
                    if !loss.is_finite() {
                        return Err(Error::NonFiniteLoss {
                            epoch,
                            batch: bidx,
                            detail: format!("bpr loss={loss}"),
                        });
                    }
                    sum_total += loss;
                }
            }
        }
        let nb = n_batches as f64;
        let valid = if can_eval && epoch % config.eval_every == 0 {
            Some(evaluate(&model, dataset, Split::Valid, config.eval_k)?)
        } else {
            None
        };
        log.epochs.push(EpochRecord {
            epoch,
            loss_total: sum_total / nb,
            align_per_layer: sum_align.iter().map(|a| a / nb).collect(),
            uniform_user: sum_uu / nb,
            uniform_item: sum_ui / nb,
            degenerate_pairs: degenerate,
            valid,
            seconds: t0.elapsed().as_secs_f64(),
        });
        if degenerate > 0 {
            log::warn!("epoch {epoch}: skipped {degenerate} degenerate zero-norm pairs");
        }
        if let Some(m) = &log.epochs.last().unwrap().valid {
            let improved = best.as_ref().is_none_or(|(b, _, _)| m.ndcg_at_k > *b);
            if improved {
                best = Some((m.ndcg_at_k, epoch, model.clone()));
                strikes = 0;
            } else {
                strikes += 1;
                if strikes >= config.early_stop_patience {
                    break 'epochs;
                }
            }
        }
    }

    if let Some((_, epoch, best_model)) = best {
        log.best_epoch = Some(epoch);
        Ok((best_model, log))
    } else {
        Ok((model, log))
    }
}

/// Mean BPR loss and the gradients for explicit (user, pos, neg) triples.
/// Scores are raw layer-0 dot products.
pub fn bpr_loss_grad(model: &EmbeddingModel, triples: &[(u32, u32, u32)]) -> (f64, Mat, Mat) {
    let n = triples.len() as f64;
    let mut gu = Mat::zeros(model.user_emb0.rows(), model.d);
    let mut gi = Mat::zeros(model.item_emb0.rows(), model.d);
    let mut loss = 0.0;
    for &(u, i, j) in triples {
        let eu = model.user_emb0.row(u as usize);
        let ei = model.item_emb0.row(i as usize);
        let ej = model.item_emb0.row(j as usize);
        let diff = dot(eu, ei) - dot(eu, ej);
        // softplus(-diff) = -ln sigmoid(diff), evaluated stably
        loss += (-diff).max(0.0) + (-(-diff).abs()).exp().ln_1p();
        let s = 1.0 / (1.0 + diff.exp()); // sigmoid(-diff)
        let gur = gu.row_mut(u as usize);
        for k in 0..model.d {
            gur[k] += -s / n * (ei[k] - ej[k]);
        }
        let gir = gi.row_mut(i as usize);
        for k in 0..model.d {
            gir[k] += -s / n * eu[k];
        }
        let gjr = gi.row_mut(j as usize);
        for k in 0..model.d {
            gjr[k] += s / n * eu[k];
        }
    }
    (loss / n, gu, gi)
}

/// One BPR step: draws one uniform negative item per positive edge, then
/// applies Adam. Returns the mean pair loss.
pub fn bpr_step(
    model: &mut EmbeddingModel,
    batch_edges: &[(u32, u32)],
    state: &mut AdamState,
    rng: &mut impl Rng,
) -> Result<f64> {
    if batch_edges.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n_items = model.item_emb0.rows() as u32;
    let triples: Vec<(u32, u32, u32)> = batch_edges
        .iter()
        .map(|&(u, i)| (u, i, rng.random_range(0..n_items)))
        .collect();
    let (loss, gu, gi) = bpr_loss_grad(model, &triples);
    adam_step(model, &gu, &gi, state)?;
    Ok(loss)
}

/// Builds a graph-independent dataset skeleton from explicit index edges.
/// Tokens are synthesized from the indices. Meant for tests and benchmarks.
pub fn dataset_from_edges(
    n_users: usize,
    n_items: usize,
    train: Vec<(u32, u32)>,
    valid: Vec<(u32, u32)>,
    test: Vec<(u32, u32)>,
) -> InteractionDataset {
    InteractionDataset {
        n_users,
        n_items,
        train_edges: train,
        valid_edges: valid,
        test_edges: test,
        user_tokens: (0..n_users).map(|u| format!("u{u}")).collect(),
        item_tokens: (0..n_items).map(|i| format!("i{i}")).collect(),
        user_index: (0..n_users).map(|u| (format!("u{u}"), u as u32)).collect(),
        item_index: (0..n_items).map(|i| (format!("i{i}"), i as u32)).collect(),
    }
}
