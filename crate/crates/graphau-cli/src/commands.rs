//! Implementations of the five subcommands.

use std::fs;
use std::path::Path;

use serde_json::json;

use graphau::bench::{bench_scalability, BenchConfig};
use graphau::dataset::{self, InteractionDataset, Split, SplitOptions};
use graphau::evaluator::{evaluate, RankingMetrics};
use graphau::graph::{build_graph, BipartiteGraph};
use graphau::loss::uniformity_of_table;
use graphau::model::EmbeddingModel;
use graphau::synth::power_law_bipartite;
use graphau::trainer::{train, Objective};
use graphau::{Error, Result};

use crate::settings::{self, Settings};
use crate::{BenchArgs, DataArgs, EvalArgs, GridArgs, HyperArgs, PreprocessArgs, TrainArgs};

fn apply_data_flags(s: &mut Settings, d: &DataArgs) -> Result<()> {
    if let Some(f) = &d.format {
        s.format = settings::parse_format(f)?;
    }
    if d.has_header {
        s.has_header = true;
    }
    if let Some(k) = d.k_core {
        s.k_core = k;
    }
    if let Some(r) = &d.ratios {
        s.ratios = settings::parse_ratios(r)?;
    }
    if d.per_user_split {
        s.per_user_split = true;
    }
    Ok(())
}

fn apply_hyper_flags(s: &mut Settings, h: &HyperArgs) -> Result<()> {
    if let Some(o) = &h.objective {
        s.objective = settings::parse_objective(o)?;
    }
    if let Some(v) = h.d {
        s.d = v;
    }
    if let Some(v) = h.uniformity_order {
        s.uniformity_order = v;
    }
    if let Some(m) = &h.uniformity_metric {
        s.uniformity_metric = settings::parse_metric(m)?;
    }
    if let Some(v) = h.init_scale {
        s.init_scale = v;
    }
    if let Some(v) = h.epochs_max {
        s.epochs_max = v;
    }
    if let Some(v) = h.batch_size {
        s.batch_size = v;
    }
    if let Some(v) = h.early_stop_patience {
        s.early_stop_patience = v;
    }
    if let Some(v) = h.eval_every {
        s.eval_every = v;
    }
    if let Some(v) = h.k {
        s.eval_k = v;
    }
    Ok(())
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("serialization: {e}")))?;
    fs::write(path, body + "\n").map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// The resolved-config snapshot every command writes before doing work.
fn write_snapshot(
    out_dir: &Path,
    command: &str,
    s: &Settings,
    inputs: serde_json::Value,
) -> Result<()> {
    let snapshot = json!({
        "command": command,
        "inputs": inputs,
        "settings": s,
    });
    write_json(&out_dir.join("config.json"), &snapshot)
}

/// Loads a dataset from either a split manifest or a raw file (splitting
/// on the fly); freshly made splits can be persisted for auditability.
fn load_dataset(
    d: &DataArgs,
    s: &Settings,
    save_splits_to: Option<&Path>,
) -> Result<InteractionDataset> {
    if let Some(dir) = &d.splits {
        return InteractionDataset::load_splits(dir);
    }
    let file = d
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("provide --data or --splits".into()))?;
    let mut interactions = dataset::load_interactions(file, s.format, s.has_header)?;
    if s.k_core > 1 {
        let before = interactions.len();
        interactions = dataset::k_core_filter(&interactions, s.k_core);
        log::info!(
            "k-core filter (k={}) kept {}/{} interactions",
            s.k_core,
            interactions.len(),
            before
        );
        if interactions.is_empty() {
            return Err(Error::EmptyDataset);
        }
    }
    let ds = dataset::split_dataset_with(
        &interactions,
        s.ratios,
        s.seed,
        SplitOptions {
            per_user: s.per_user_split,
        },
    )?;
    if let Some(dir) = save_splits_to {
        ds.save_splits(dir)?;
    }
    Ok(ds)
}

fn metrics_table(k: usize, rows: &[(String, RankingMetrics)]) -> String {
    let mut s = format!(
        "{:<10}{:>9}{:>9}{:>9}\n",
        "",
        format!("R@{k}"),
        format!("HR@{k}"),
        format!("N@{k}")
    );
    for (label, m) in rows {
        s.push_str(&format!(
            "{:<10}{:>9.4}{:>9.4}{:>9.4}\n",
            label, m.recall_at_k, m.hitratio_at_k, m.ndcg_at_k
        ));
    }
    s
}

pub fn preprocess(args: &PreprocessArgs) -> Result<()> {
    let mut s = settings::load_settings(args.common.config.as_deref())?;
    apply_data_flags(&mut s, &args.data)?;
    if let Some(seed) = args.common.seed {
        s.seed = seed;
    }
    if args.data.data.is_none() {
        return Err(Error::Config("preprocess needs --data".into()));
    }
    let out = &args.common.out_dir;
    ensure_out_dir(out)?;
    write_snapshot(out, "preprocess", &s, json!({ "data": args.data.data }))?;
    let ds = load_dataset(&args.data, &s, Some(&out.join("splits")))?;
    println!(
        "users {}  items {}  train {}  valid {}  test {}",
        ds.n_users,
        ds.n_items,
        ds.train_edges.len(),
        ds.valid_edges.len(),
        ds.test_edges.len()
    );
    println!("splits written to {}", out.join("splits").display());
    Ok(())
}

pub fn train_cmd(args: &TrainArgs) -> Result<()> {
    let mut s = settings::load_settings(args.common.config.as_deref())?;
    apply_data_flags(&mut s, &args.data)?;
    apply_hyper_flags(&mut s, &args.hyper)?;
    if let Some(v) = args.layers {
        s.layers = v;
    }
    if let Some(v) = args.alpha {
        s.alpha = v;
    }
    if let Some(v) = args.gamma {
        s.gamma = v;
    }
    if let Some(v) = args.lr {
        s.lr = v;
    }
    if let Some(v) = args.weight_decay {
        s.weight_decay = v;
    }
    if let Some(seed) = args.common.seed {
        s.seed = seed;
    }
    for w in s.range_warnings() {
        log::warn!("{w}");
    }
    let out = &args.common.out_dir;
    ensure_out_dir(out)?;
    write_snapshot(
        out,
        "train",
        &s,
        json!({ "data": args.data.data, "splits": args.data.splits }),
    )?;
    let ds = load_dataset(&args.data, &s, Some(&out.join("splits")))?;
    let (model, log) = train(&ds, &s.train_config())?;
    log.write_jsonl(&out.join("trainlog.jsonl"))?;
    model.save_checkpoint(&out.join("checkpoint.bin"), &ds.vocab_hash())?;

    let valid = if ds.valid_edges.is_empty() {
        None
    } else {
        Some(evaluate(&model, &ds, Split::Valid, s.eval_k)?)
    };
    let test = if ds.test_edges.is_empty() {
        None
    } else {
        Some(evaluate(&model, &ds, Split::Test, s.eval_k)?)
    };
    write_json(
        &out.join("metrics.json"),
        &json!({
            "objective": s.objective,
            "k": s.eval_k,
            "epochs_ran": log.epochs.len(),
            "best_epoch": log.best_epoch,
            "valid": valid,
            "test": test,
            "masked_splits": { "valid": ["train"], "test": ["train", "valid"] },
        }),
    )?;
    let mut rows = Vec::new();
    if let Some(m) = valid {
        rows.push(("valid".to_string(), m));
    }
    if let Some(m) = test {
        rows.push(("test".to_string(), m));
    }
    if rows.is_empty() {
        println!(
            "trained {} epochs (no validation/test edges to evaluate)",
            log.epochs.len()
        );
    } else {
        print!("{}", metrics_table(s.eval_k, &rows));
    }
    Ok(())
}

pub fn eval_cmd(args: &EvalArgs) -> Result<()> {
    let mut s = settings::load_settings(args.common.config.as_deref())?;
    if let Some(k) = args.k {
        s.eval_k = k;
    }
    if let Some(m) = &args.uniformity_metric {
        s.uniformity_metric = settings::parse_metric(m)?;
    }
    let split = match args.split.as_str() {
        "valid" => Split::Valid,
        "test" => Split::Test,
        other => {
            return Err(Error::Config(format!(
                "unknown split {other:?}, expected valid or test"
            )))
        }
    };
    let out = &args.common.out_dir;
    ensure_out_dir(out)?;
    write_snapshot(
        out,
        "eval",
        &s,
        json!({ "splits": args.splits, "checkpoint": args.checkpoint, "split": args.split }),
    )?;
    let ds = InteractionDataset::load_splits(&args.splits)?;
    let model = EmbeddingModel::load_checkpoint(&args.checkpoint, &ds.vocab_hash())?;
    let metrics = evaluate(&model, &ds, split, s.eval_k)?;
    let masked = match split {
        Split::Test => vec!["train", "valid"],
        _ => vec!["train"],
    };
    let mut payload = json!({
        "split": args.split,
        "k": s.eval_k,
        "metrics": metrics,
        "masked_splits": masked,
    });
    if args.diagnostics {
        payload["uniformity_user_full"] =
            json!(uniformity_of_table(&model.user_emb0, s.uniformity_metric));
        payload["uniformity_item_full"] =
            json!(uniformity_of_table(&model.item_emb0, s.uniformity_metric));
    }
    write_json(&out.join("metrics.json"), &payload)?;
    print!(
        "{}",
        metrics_table(s.eval_k, &[(args.split.clone(), metrics)])
    );
    println!("evaluated users: {}", metrics.n_users_evaluated);
    Ok(())
}

pub fn bench_cmd(args: &BenchArgs) -> Result<()> {
    let mut s = settings::load_settings(args.common.config.as_deref())?;
    apply_data_flags(&mut s, &args.data)?;
    if let Some(seed) = args.common.seed {
        s.seed = seed;
    }
    for (target, flag) in [
        (&mut s.l_max, args.l_max),
        (&mut s.trials, args.trials),
        (&mut s.d, args.d),
        (&mut s.batch_size, args.batch_size),
        (&mut s.frontier_cap, args.frontier_cap),
        (&mut s.synth_users, args.synth_users),
        (&mut s.synth_items, args.synth_items),
        (&mut s.synth_edges, args.synth_edges),
    ] {
        if let Some(v) = flag {
            *target = v;
        }
    }
    if let Some(v) = args.alpha {
        s.alpha = v;
    }
    if let Some(v) = args.gamma {
        s.gamma = v;
    }
    if let Some(v) = args.synth_exponent {
        s.synth_exponent = v;
    }
    let out = &args.common.out_dir;
    ensure_out_dir(out)?;
    write_snapshot(
        out,
        "bench",
        &s,
        json!({ "data": args.data.data, "splits": args.data.splits, "synthetic": args.synthetic }),
    )?;
    let graph = if args.synthetic {
        let edges = power_law_bipartite(
            s.synth_users,
            s.synth_items,
            s.synth_edges,
            s.synth_exponent,
            s.seed,
        );
        log::info!(
            "synthetic graph: {} users, {} items, {} edges",
            s.synth_users,
            s.synth_items,
            edges.len()
        );
        BipartiteGraph::from_edges(s.synth_users, s.synth_items, &edges)
    } else {
        build_graph(&load_dataset(&args.data, &s, None)?)
    };
    let cfg = BenchConfig {
        l_max: s.l_max,
        trials: s.trials,
        d: s.d,
        batch_size: s.batch_size,
        alpha: s.alpha,
        gamma: s.gamma,
        seed: s.seed,
        frontier_cap: s.frontier_cap,
    };
    let report = bench_scalability(&graph, &cfg)?;
    fs::write(out.join("bench.csv"), report.to_csv()).map_err(|source| Error::Io {
        path: out.join("bench.csv"),
        source,
    })?;
    print!("{}", report.render_table());
    Ok(())
}

pub fn grid_cmd(args: &GridArgs) -> Result<()> {
    let mut s = settings::load_settings(args.common.config.as_deref())?;
    apply_data_flags(&mut s, &args.data)?;
    apply_hyper_flags(&mut s, &args.hyper)?;
    if let Some(seed) = args.common.seed {
        s.seed = seed;
    }
    let grid_or = |spec: &Option<String>, fallback: f64| -> Result<Vec<f64>> {
        match spec {
            Some(sp) => settings::parse_f64_grid(sp),
            None => Ok(vec![fallback]),
        }
    };
    let layers_grid = match &args.layers {
        Some(sp) => settings::parse_usize_grid(sp)?,
        None => vec![s.layers],
    };
    let alphas = grid_or(&args.alpha, s.alpha)?;
    let gammas = grid_or(&args.gamma, s.gamma)?;
    let lrs = grid_or(&args.lr, s.lr)?;
    let wds = grid_or(&args.weight_decay, s.weight_decay)?;
    let seeds = match &args.seeds {
        Some(sp) => settings::parse_u64_list(sp)?,
        None => vec![s.seed],
    };

    let out = &args.common.out_dir;
    ensure_out_dir(out)?;
    write_snapshot(
        out,
        "grid",
        &s,
        json!({
            "data": args.data.data,
            "splits": args.data.splits,
            "grid": {
                "layers": layers_grid,
                "alpha": alphas,
                "gamma": gammas,
                "lr": lrs,
                "weight_decay": wds,
                "seeds": seeds,
            },
        }),
    )?;
    let ds = load_dataset(&args.data, &s, Some(&out.join("splits")))?;
    let runs_dir = out.join("runs");
    ensure_out_dir(&runs_dir)?;

    let mut csv = String::from(
        "run,seed,objective,layers,alpha,gamma,lr,weight_decay,epochs_ran,best_epoch,valid_ndcg,test_recall,test_hitratio,test_ndcg\n",
    );
    let mut best: Option<(f64, EmbeddingModel)> = None;
    let mut run_id = 0usize;
    for &layers in &layers_grid {
        for &alpha in &alphas {
            for &gamma in &gammas {
                for &lr in &lrs {
                    for &wd in &wds {
                        for &seed in &seeds {
                            let mut rs = s.clone();
                            rs.layers = layers;
                            rs.alpha = alpha;
                            rs.gamma = gamma;
                            rs.lr = lr;
                            rs.weight_decay = wd;
                            rs.seed = seed;
                            let (model, tlog) = train(&ds, &rs.train_config())?;
                            let run_dir = runs_dir.join(format!("run_{run_id:03}"));
                            ensure_out_dir(&run_dir)?;
                            tlog.write_jsonl(&run_dir.join("trainlog.jsonl"))?;
                            let valid_ndcg = tlog.best_valid_ndcg();
                            let test = if ds.test_edges.is_empty() {
                                None
                            } else {
                                Some(evaluate(&model, &ds, Split::Test, rs.eval_k)?)
                            };
                            write_json(
                                &run_dir.join("metrics.json"),
                                &json!({
                                    "layers": layers, "alpha": alpha, "gamma": gamma,
                                    "lr": lr, "weight_decay": wd, "seed": seed,
                                    "objective": rs.objective,
                                    "epochs_ran": tlog.epochs.len(),
                                    "best_epoch": tlog.best_epoch,
                                    "valid_ndcg": valid_ndcg,
                                    "test": test,
                                }),
                            )?;
                            let fmt_opt =
                                |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
                            let objective = match rs.objective {
                                Objective::Graphau => "graphau",
                                Objective::Bpr => "bpr",
                            };
                            csv.push_str(&format!(
                                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                                run_id,
                                seed,
                                objective,
                                layers,
                                alpha,
                                gamma,
                                lr,
                                wd,
                                tlog.epochs.len(),
                                tlog.best_epoch.map_or(String::new(), |e| e.to_string()),
                                fmt_opt(valid_ndcg),
                                fmt_opt(test.map(|m| m.recall_at_k)),
                                fmt_opt(test.map(|m| m.hitratio_at_k)),
                                fmt_opt(test.map(|m| m.ndcg_at_k)),
                            ));
                            if let Some(v) = valid_ndcg {
                                if best.as_ref().is_none_or(|(b, _)| v > *b) {
                                    best = Some((v, model));
                                }
                            }
                            run_id += 1;
                        }
                    }
                }
            }
        }
    }
    fs::write(out.join("grid.csv"), &csv).map_err(|source| Error::Io {
        path: out.join("grid.csv"),
        source,
    })?;
    if let Some((ndcg, model)) = best {
        model.save_checkpoint(&out.join("checkpoint.bin"), &ds.vocab_hash())?;
        println!("best run by validation NDCG@{}: {ndcg:.6}", s.eval_k);
    }
    println!(
        "{run_id} runs written to {}",
        out.join("grid.csv").display()
    );
    Ok(())
}
