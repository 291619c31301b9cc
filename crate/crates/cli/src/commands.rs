//! Subcommand implementations.

use crate::config::ExperimentConfig;
use crate::runs::{
    load_data, load_run, run_dir, write_data_artifacts, write_run_artifacts, LoadedData,
    RunSummary,
};
use anyhow::{bail, Context, Result};
use stamp_core::evaluator::{self, aggregate_efficiency};
use stamp_core::kernel::Graph;
use stamp_core::map::MapHead;
use stamp_core::model::{read_checkpoint, ForwardOpts, Model, Phase, PruneHook};
use stamp_core::sap::{PruneConfig, SapHook, Strategy};
use stamp_core::trainer::{run_training, RunSetup, StepRecord, TrainOutcome};
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub fn cmd_gen(cfg: &ExperimentConfig, root: &Path) -> Result<()> {
    let dir = write_data_artifacts(root, cfg)?;
    let manifest = std::fs::read_to_string(dir.join("manifest.json"))?;
    println!("wrote dataset artifacts to {}", dir.display());
    println!("{}", manifest.trim());
    Ok(())
}

/// Derive the model seed from the training seed so `--seed` moves both.
fn model_seed(train_seed: u64) -> u64 {
    train_seed
}

fn build_model_and_head(cfg: &ExperimentConfig) -> Result<(Model, Option<MapHead>)> {
    let seed = model_seed(cfg.train.seed);
    let model = Model::new(cfg.model_config(), seed)?;
    let map_cfg = cfg.map_config();
    let head = if map_cfg.enabled {
        Some(MapHead::new(map_cfg, cfg.model.d_model, seed ^ 0x4d41_5048)?)
    } else {
        None
    };
    Ok((model, head))
}

/// Width of the post-pruning sequence on a fixed probe batch of test
/// examples; comparable across strategies for the same dataset.
fn probe_compressed_len(
    model: &Model,
    prune: &PruneConfig,
    data: &LoadedData,
    window_items: usize,
) -> Result<Option<usize>> {
    if prune.strategy == Strategy::None {
        return Ok(None);
    }
    let n = data.splits.test.len().min(8);
    let seqs: Vec<_> = data.splits.test[..n]
        .iter()
        .map(|ex| stamp_core::corpus::serialize_example(&data.ds, ex, window_items, &data.layout))
        .collect::<stamp_core::Result<Vec<_>>>()?;
    let batch = stamp_core::corpus::build_train_batch(&seqs, &data.layout)?;
    let hook = SapHook { cfg: *prune };
    let mut g = Graph::new();
    let trace = model.forward(
        &mut g,
        &batch,
        ForwardOpts {
            phase: Phase::Eval,
            hook: Some(&hook as &dyn PruneHook),
            retain_probs: &[],
            rng: None,
        },
    )?;
    Ok(Some(trace.seq_len))
}

fn steady_mean_millis(steps: &[StepRecord]) -> f64 {
    let tail = if steps.len() >= evaluator::STEADY_STATE_FROM + 100 {
        &steps[evaluator::STEADY_STATE_FROM..]
    } else {
        steps
    };
    if tail.is_empty() {
        return 0.0;
    }
    tail.iter().map(|r| r.wall_millis).sum::<f64>() / tail.len() as f64
}

fn peak_bytes(steps: &[StepRecord]) -> u64 {
    let tail = if steps.len() >= evaluator::STEADY_STATE_FROM + 100 {
        &steps[evaluator::STEADY_STATE_FROM..]
    } else {
        steps
    };
    tail.iter().map(|r| r.high_water_bytes).max().unwrap_or(0)
}

pub fn cmd_train(cfg: &ExperimentConfig, root: &Path, run_name: &str) -> Result<()> {
    let data = load_data(root, cfg.layout())?;
    let dir = run_dir(root, run_name);
    std::fs::create_dir_all(&dir)?;

    let (mut model, mut head) = build_model_and_head(cfg)?;
    let prune = cfg.prune_config()?;
    let setup = RunSetup {
        ds: &data.ds,
        splits: &data.splits,
        trie: &data.trie,
        layout: data.layout,
        window_items: cfg.model.window_items,
        eval: cfg.val_eval_config(),
    };
    let outcome = match run_training(&mut model, &mut head, prune, cfg.train_config(), &setup) {
        Ok(o) => o,
        Err(e) => {
            let diag = serde_json::json!({
                "run": run_name,
                "error": e.to_string(),
            });
            std::fs::write(dir.join("abort.json"), serde_json::to_vec_pretty(&diag)?)?;
            bail!("training aborted: {}", e);
        }
    };
    finish_run(cfg, &data, &dir, run_name, model, head, prune, outcome)
}

#[allow(clippy::too_many_arguments)]
fn finish_run(
    cfg: &ExperimentConfig,
    data: &LoadedData,
    dir: &Path,
    run_name: &str,
    mut model: Model,
    head: Option<MapHead>,
    prune: PruneConfig,
    outcome: TrainOutcome,
) -> Result<()> {
    // Evaluate the best checkpoint on the test split.
    model.params = outcome.best_params.clone();
    let head_params = outcome.best_map.clone();
    let eval_cfg = cfg.test_eval_config();
    let test_examples: &[stamp_core::corpus::Example] = match eval_cfg.max_users {
        Some(n) if n < data.splits.test.len() => &data.splits.test[..n],
        _ => &data.splits.test,
    };
    let mut metrics = evaluator::evaluate_examples(
        &model,
        prune,
        &data.ds,
        test_examples,
        &data.trie,
        data.layout,
        cfg.model.window_items,
        &eval_cfg,
    )?;
    metrics.mean_step_millis = steady_mean_millis(&outcome.records);
    metrics.peak_bytes = peak_bytes(&outcome.records);

    let compressed_len = probe_compressed_len(&model, &prune, data, cfg.model.window_items)?;
    let summary = RunSummary {
        metrics,
        steps_taken: outcome.records.len(),
        best_step: outcome.best_step,
        best_val_recall: outcome.best_val_recall,
        stop_reason: outcome.stop,
        compressed_len,
        strategy: prune.strategy.to_string(),
        alpha: prune.alpha,
        l_prune: prune.l_prune,
        lambda: cfg.map_config().lambda,
        map_enabled: cfg.map.enabled,
        dataset_fingerprint: data.fingerprint.clone(),
    };
    let mut ckpt = Vec::new();
    let extra = head_params.as_ref();
    model.save_checkpoint(&mut ckpt, extra)?;
    write_run_artifacts(dir, cfg, &summary, &outcome.records, &ckpt)?;
    let _ = head;
    println!(
        "run {} finished: {} steps, stop {:?}, best val Recall@10 {:.4} at step {}",
        run_name,
        summary.steps_taken,
        summary.stop_reason,
        summary.best_val_recall,
        summary.best_step
    );
    println!("artifacts in {}", dir.display());
    Ok(())
}

pub fn cmd_eval(run_path: &Path, dump_attention: Option<&str>) -> Result<()> {
    let run = load_run(run_path)?;
    let cfg = &run.config;
    let root = cfg.output_dir.clone();
    let data = load_data(&root, cfg.layout())?;
    if data.fingerprint != run.fingerprint {
        bail!(
            "dataset fingerprint mismatch for {}: data {} vs run {}",
            run_path.display(),
            data.fingerprint,
            run.fingerprint
        );
    }
    let ckpt = read_checkpoint(std::io::BufReader::new(std::fs::File::open(
        run_path.join("checkpoint.bin"),
    )?))?;
    let (model, _head) = ckpt.into_model()?;
    let prune = cfg.prune_config()?;
    let eval_cfg = cfg.test_eval_config();
    let test_examples: &[stamp_core::corpus::Example] = match eval_cfg.max_users {
        Some(n) if n < data.splits.test.len() => &data.splits.test[..n],
        _ => &data.splits.test,
    };
    let report = evaluator::evaluate_examples(
        &model,
        prune,
        &data.ds,
        test_examples,
        &data.trie,
        data.layout,
        cfg.model.window_items,
        &eval_cfg,
    )?;
    println!("{}", serde_json::to_string_pretty(&report)?);

    if let Some(layer_list) = dump_attention {
        let layers: Vec<usize> = layer_list
            .split(',')
            .map(|s| s.trim().parse::<usize>().context("layer index"))
            .collect::<Result<_>>()?;
        let ex = data
            .splits
            .test
            .first()
            .context("no test examples to visualize")?;
        let seq = stamp_core::corpus::serialize_example(&data.ds, ex, cfg.model.window_items, &data.layout)?;
        let batch = stamp_core::corpus::build_train_batch(std::slice::from_ref(&seq), &data.layout)?;
        let mut g = Graph::new();
        let trace = model.forward(
            &mut g,
            &batch,
            ForwardOpts {
                phase: Phase::Eval,
                hook: None,
                retain_probs: &layers,
                rng: None,
            },
        )?;
        let files = evaluator::dump_attention(&trace, &layers, &run_path.join("attention"))?;
        for f in files {
            println!("wrote {}", f.display());
        }
    }
    Ok(())
}

pub const COMPARE_HEADER: &str =
    "run,recall@5,recall@10,ndcg@5,ndcg@10,hit@20,hit@100,time_ms,speedup,peak_bytes,reduction";

fn metric_cell(map: &std::collections::BTreeMap<usize, f64>, k: usize) -> String {
    map.get(&k).map(|v| format!("{:.4}", v)).unwrap_or_default()
}

/// Build the comparison table; the first run is the baseline.
pub fn comparison_table(dirs: &[PathBuf]) -> Result<String> {
    if dirs.len() < 2 {
        bail!("compare needs at least two run directories (baseline first)");
    }
    let runs: Vec<_> = dirs.iter().map(|d| load_run(d)).collect::<Result<Vec<_>>>()?;
    let base_fp = &runs[0].fingerprint;
    for (d, r) in dirs.iter().zip(runs.iter()) {
        if &r.fingerprint != base_fp {
            bail!(
                "dataset fingerprint of {} does not match the baseline",
                d.display()
            );
        }
    }
    let mut out = String::from(COMPARE_HEADER);
    out.push('\n');
    for (d, r) in dirs.iter().zip(runs.iter()) {
        let m = &r.summary.metrics;
        let (speedup, reduction) = match aggregate_efficiency(&r.steps, &runs[0].steps) {
            Ok((s, red)) => (format!("{:.3}", s), format!("{:.4}", red)),
            Err(_) => (String::new(), String::new()),
        };
        let name = d
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| d.display().to_string());
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{:.2},{},{},{}\n",
            name,
            metric_cell(&m.recall_at, 5),
            metric_cell(&m.recall_at, 10),
            metric_cell(&m.ndcg_at, 5),
            metric_cell(&m.ndcg_at, 10),
            metric_cell(&m.hit_at, 20),
            metric_cell(&m.hit_at, 100),
            steady_mean_millis(&r.steps),
            speedup,
            peak_bytes(&r.steps),
            reduction,
        ));
    }
    Ok(out)
}

pub fn cmd_compare(dirs: &[PathBuf], out_file: Option<&Path>) -> Result<()> {
    let table = comparison_table(dirs)?;
    if let Some(p) = out_file {
        std::fs::write(p, &table)?;
        println!("wrote {}", p.display());
    }
    print!("{}", table);
    Ok(())
}

/// Sensitivity sweep: a baseline (strategy none) plus the grid of
/// strategy x alpha x layer variants, each trained like `cmd_train`.
pub fn cmd_ablate(
    cfg: &ExperimentConfig,
    root: &Path,
    strategies: &[String],
    alphas: &[f64],
    layers: &[usize],
) -> Result<()> {
    let mut dirs = Vec::new();
    let mut base_cfg = cfg.clone();
    base_cfg.prune.strategy = "none".into();
    let base_name = "ablate_base";
    cmd_train(&base_cfg, root, base_name)?;
    dirs.push(run_dir(root, base_name));

    for strat in strategies {
        let _ = Strategy::from_str(strat)?;
        for &alpha in alphas {
            for &layer in layers {
                let mut variant = cfg.clone();
                variant.prune.strategy = strat.clone();
                variant.prune.alpha = alpha;
                variant.prune.l_prune = layer;
                variant.validate().map_err(|e| {
                    anyhow::anyhow!("variant {} a={} l={}: {}", strat, alpha, layer, e)
                })?;
                let name = format!("ablate_{}_a{:.3}_l{}", strat, alpha, layer);
                cmd_train(&variant, root, &name)?;
                dirs.push(run_dir(root, &name));
            }
        }
    }
    let table = comparison_table(&dirs)?;
    let out_path = root.join("ablation.csv");
    std::fs::write(&out_path, &table)?;
    print!("{}", table);
    println!("wrote {}", out_path.display());
    Ok(())
}

