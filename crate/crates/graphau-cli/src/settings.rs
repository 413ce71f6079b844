//! Resolved run settings: defaults, overridden by an optional JSON config
//! file, overridden by command-line flags. The merged result is written to
//! `config.json` next to every command's outputs, so a run can be replayed
//! from its snapshot and seed alone.

use serde::{Deserialize, Serialize};

use graphau::dataset::FileFormat;
use graphau::loss::{LossConfig, UniformityMetric};
use graphau::optimizer::AdamHyper;
use graphau::trainer::{Objective, TrainConfig};
use graphau::Error;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    // data handling
    pub format: FileFormat,
    pub has_header: bool,
    /// Iterative k-core preprocessing; 0 disables.
    pub k_core: usize,
    pub ratios: (f64, f64, f64),
    pub per_user_split: bool,

    // objective / model
    pub objective: Objective,
    pub d: usize,
    pub layers: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub uniformity_order: usize,
    pub uniformity_metric: UniformityMetric,
    pub init_scale: f64,

    // optimizer
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,

    // loop
    pub epochs_max: usize,
    pub batch_size: usize,
    pub early_stop_patience: usize,
    pub eval_every: usize,
    pub eval_k: usize,
    pub seed: u64,

    // bench
    pub l_max: usize,
    pub trials: usize,
    pub frontier_cap: usize,
    pub synth_users: usize,
    pub synth_items: usize,
    pub synth_edges: usize,
    pub synth_exponent: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            format: FileFormat::Tsv,
            has_header: false,
            k_core: 0,
            ratios: (0.6, 0.2, 0.2),
            per_user_split: false,
            objective: Objective::Graphau,
            d: 32,
            layers: 2,
            alpha: 1.0,
            gamma: 0.5,
            uniformity_order: 0,
            uniformity_metric: UniformityMetric::Sq,
            init_scale: 0.1,
            lr: 0.01,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs_max: 200,
            batch_size: 1024,
            early_stop_patience: 10,
            eval_every: 1,
            eval_k: 20,
            seed: 0,
            l_max: 3,
            trials: 3,
            frontier_cap: 50_000_000,
            synth_users: 2500,
            synth_items: 2500,
            synth_edges: 15_000,
            synth_exponent: 1.0,
        }
    }
}

impl Settings {
    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            alpha: self.alpha,
            gamma: self.gamma,
            layers: self.layers,
            uniformity_order: self.uniformity_order,
            uniformity_metric: self.uniformity_metric,
        }
    }

    pub fn adam_hyper(&self) -> AdamHyper {
        AdamHyper {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs_max: self.epochs_max,
            batch_size: self.batch_size,
            early_stop_patience: self.early_stop_patience,
            eval_every: self.eval_every,
            seed: self.seed,
            objective: self.objective,
            loss: self.loss_config(),
            opt: self.adam_hyper(),
            d: self.d,
            init_scale: self.init_scale,
            eval_k: self.eval_k,
        }
    }

    /// Warnings for values outside the usual tuning ranges. Never an error.
    pub fn range_warnings(&self) -> Vec<String> {
        let mut w = self.loss_config().warnings();
        if !(0.005..=0.1).contains(&self.lr) {
            w.push(format!(
                "lr {} is outside the tuned range [0.005, 0.1]",
                self.lr
            ));
        }
        if self.weight_decay > 1e-2 {
            w.push(format!(
                "weight_decay {} is above the tuned range (max 1e-2)",
                self.weight_decay
            ));
        }
        if self.layers > 4 {
            w.push(format!(
                "layers {} is above the tuned range (max 4)",
                self.layers
            ));
        }
        w
    }
}

pub fn load_settings(config: Option<&std::path::Path>) -> Result<Settings, Error> {
    match config {
        None => Ok(Settings::default()),
        Some(path) => {
            let body = std::fs::read_to_string(path).map_err(|source| Error::Io {
                path: path.to_path_buf(),
                source,
            })?;
            serde_json::from_str(&body)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        }
    }
}

pub fn parse_format(s: &str) -> Result<FileFormat, Error> {
    match s {
        "tsv" => Ok(FileFormat::Tsv),
        "csv" => Ok(FileFormat::Csv),
        other => Err(Error::Config(format!(
            "unknown format {other:?}, expected tsv or csv"
        ))),
    }
}

pub fn parse_objective(s: &str) -> Result<Objective, Error> {
    match s {
        "graphau" => Ok(Objective::Graphau),
        "bpr" => Ok(Objective::Bpr),
        other => Err(Error::Config(format!(
            "unknown objective {other:?}, expected graphau or bpr"
        ))),
    }
}

pub fn parse_metric(s: &str) -> Result<UniformityMetric, Error> {
    match s {
        "sq" => Ok(UniformityMetric::Sq),
        "l2" => Ok(UniformityMetric::L2),
        other => Err(Error::Config(format!(
            "unknown uniformity metric {other:?}, expected sq or l2"
        ))),
    }
}

pub fn parse_ratios(s: &str) -> Result<(f64, f64, f64), Error> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!(
            "ratios must be three comma-separated fractions, got {s:?}"
        )));
    }
    let mut vals = [0.0; 3];
    for (v, p) in vals.iter_mut().zip(&parts) {
        *v = p
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad ratio {p:?}")))?;
    }
    Ok((vals[0], vals[1], vals[2]))
}

/// Grid syntax: a single value `0.7`, a comma list `0.5,1,1.5`, or an
/// inclusive range `start:end:step`.
pub fn parse_f64_grid(spec: &str) -> Result<Vec<f64>, Error> {
    let bad = |msg: String| Error::Config(format!("grid {spec:?}: {msg}"));
    if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("expected start:end:step".into()));
        }
        let nums: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| bad(e.to_string()))?;
        let (start, end, step) = (nums[0], nums[1], nums[2]);
        if step <= 0.0 || end < start {
            return Err(bad("need end >= start and step > 0".into()));
        }
        let n = ((end - start) / step).round() as usize;
        let mut out: Vec<f64> = (0..=n).map(|k| start + k as f64 * step).collect();
        out.retain(|v| *v <= end + 1e-9);
        Ok(out)
    } else {
        spec.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| bad(e.to_string())))
            .collect()
    }
}

pub fn parse_usize_grid(spec: &str) -> Result<Vec<usize>, Error> {
    let floats = parse_f64_grid(spec)?;
    floats
        .into_iter()
        .map(|v| {
            if v.fract() == 0.0 && v >= 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!(
                    "grid {spec:?}: {v} is not a non-negative integer"
                )))
            }
        })
        .collect()
}

pub fn parse_u64_list(spec: &str) -> Result<Vec<u64>, Error> {
    spec.split(',')
        .map(|p| {
            p.trim()
                .parse::<u64>()
                .map_err(|e| Error::Config(format!("seed list {spec:?}: {e}")))
        })
        .collect()
}
