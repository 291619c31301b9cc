//! On-disk layout of experiment artifacts.
//!
//! ```text
//! <root>/
//!   data/                dataset.json, codebooks.json, manifest.json,
//!                        fingerprint.txt
//!   runs/<name>/         config.toml, steps.csv, checkpoint.bin,
//!                        metrics.json, fingerprint.txt [, abort.json]
//! ```

use crate::config::ExperimentConfig;
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stamp_core::corpus::{
    build_trie, generate_synthetic, ingest_csv, split_leave_one_out, synthetic_item_embeddings,
    InteractionDataset, SidTrie, Splits, VocabLayout,
};
use stamp_core::evaluator::MetricsReport;
use stamp_core::quantizer::{encode, fit, load_codebooks, save_codebooks, Codebooks};
use stamp_core::trainer::{StepRecord, StopReason};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

pub const ENV_OUT_ROOT: &str = "STAMP_OUT";

/// Resolve the output root: flag > environment > config.
pub fn resolve_root(flag: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Ok(p) = std::env::var(ENV_OUT_ROOT) {
        if !p.is_empty() {
            return PathBuf::from(p);
        }
    }
    cfg.output_dir.clone()
}

pub fn data_dir(root: &Path) -> PathBuf {
    root.join("data")
}

pub fn run_dir(root: &Path, name: &str) -> PathBuf {
    root.join("runs").join(name)
}

/// Everything a training or evaluation run needs in memory.
pub struct LoadedData {
    pub ds: InteractionDataset,
    pub splits: Splits,
    pub trie: SidTrie,
    pub layout: VocabLayout,
    pub fingerprint: String,
}

/// Generate (or ingest) interactions, quantize item embeddings into SIDs,
/// and write the dataset artifacts.
pub fn write_data_artifacts(root: &Path, cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = data_dir(root);
    fs::create_dir_all(&dir)?;

    let (embeddings, raw) = match cfg.data.source.as_str() {
        "synthetic" => generate_synthetic(&cfg.synth_config())?,
        "csv" => {
            let path = cfg.data.csv_path.as_ref().expect("validated");
            let raw = ingest_csv(path)?;
            let mut items: Vec<u64> = raw.histories.iter().flatten().copied().collect();
            items.sort_unstable();
            items.dedup();
            let emb = synthetic_item_embeddings(
                &items,
                cfg.data.d_emb,
                cfg.data.n_latent_clusters,
                cfg.data.seed,
            );
            // Re-index histories onto the dense item order for encoding.
            (emb, raw)
        }
        _ => unreachable!("validated"),
    };

    // Item ids present in the data, in the order their embeddings were laid out.
    let item_ids: Vec<u64> = match cfg.data.source.as_str() {
        "synthetic" => (0..cfg.data.n_items as u64).collect(),
        _ => {
            let mut items: Vec<u64> = raw.histories.iter().flatten().copied().collect();
            items.sort_unstable();
            items.dedup();
            items
        }
    };

    let d = cfg.data.d_emb;
    let cb = fit(
        &embeddings,
        d,
        cfg.quantizer.levels,
        cfg.quantizer.codewords,
        cfg.quantizer.seed,
        cfg.quantizer.max_iters,
    )?;
    let mut catalog = BTreeMap::new();
    for (idx, &item) in item_ids.iter().enumerate() {
        catalog.insert(item, encode(&embeddings[idx * d..(idx + 1) * d], &cb, item));
    }
    let (ds, dropped) = InteractionDataset::from_parts(raw, catalog)?;
    if dropped > 0 {
        eprintln!("note: {} histories shorter than 3 were dropped", dropped);
    }
    if ds.users.is_empty() {
        bail!("no usable histories after filtering");
    }

    let dataset_json = serde_json::to_vec_pretty(&ds)?;
    fs::write(dir.join("dataset.json"), &dataset_json)?;
    let mut cb_buf = Vec::new();
    save_codebooks(&cb, &mut cb_buf)?;
    fs::write(dir.join("codebooks.json"), &cb_buf)?;
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_vec_pretty(&ds.manifest())?,
    )?;
    let fp = fingerprint_bytes(&dataset_json, &cb_buf);
    fs::write(dir.join("fingerprint.txt"), &fp)?;
    Ok(dir)
}

fn fingerprint_bytes(dataset: &[u8], codebooks: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(dataset);
    h.update(codebooks);
    format!("{:x}", h.finalize())
}

pub fn load_data(root: &Path, expected_layout: VocabLayout) -> Result<LoadedData> {
    let dir = data_dir(root);
    let dataset_json = fs::read(dir.join("dataset.json"))
        .with_context(|| format!("reading {}; run `stamp gen` first", dir.display()))?;
    let ds: InteractionDataset = serde_json::from_slice(&dataset_json)?;
    let cb_buf = fs::read(dir.join("codebooks.json"))?;
    let cb: Codebooks = load_codebooks(cb_buf.as_slice())?;
    if cb.depth() != expected_layout.depth || cb.v_c != expected_layout.v_c {
        bail!(
            "codebook file is {}x{} but the config expects {}x{}",
            cb.depth(),
            cb.v_c,
            expected_layout.depth,
            expected_layout.v_c
        );
    }
    let splits = split_leave_one_out(&ds);
    let trie = build_trie(&ds.catalog)?;
    let fingerprint = fingerprint_bytes(&dataset_json, &cb_buf);
    Ok(LoadedData {
        ds,
        splits,
        trie,
        layout: expected_layout,
        fingerprint,
    })
}

/// Per-run summary persisted as metrics.json.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub metrics: MetricsReport,
    pub steps_taken: usize,
    pub best_step: usize,
    pub best_val_recall: f64,
    pub stop_reason: StopReason,
    /// Post-pruning width of a fixed probe batch (None for strategy none).
    pub compressed_len: Option<usize>,
    pub strategy: String,
    pub alpha: f64,
    pub l_prune: usize,
    pub lambda: f64,
    pub map_enabled: bool,
    pub dataset_fingerprint: String,
}

pub struct RunArtifacts {
    pub config: ExperimentConfig,
    pub summary: RunSummary,
    pub steps: Vec<StepRecord>,
    pub fingerprint: String,
}

pub fn write_run_artifacts(
    dir: &Path,
    cfg: &ExperimentConfig,
    summary: &RunSummary,
    steps: &[StepRecord],
    checkpoint: &[u8],
) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    let mut csv = Vec::new();
    stamp_core::trainer::write_step_log(&mut csv, steps)?;
    fs::write(dir.join("steps.csv"), csv)?;
    fs::write(dir.join("checkpoint.bin"), checkpoint)?;
    fs::write(dir.join("metrics.json"), serde_json::to_vec_pretty(summary)?)?;
    fs::write(dir.join("fingerprint.txt"), &summary.dataset_fingerprint)?;
    Ok(())
}

pub fn load_run(dir: &Path) -> Result<RunArtifacts> {
    let name = dir.display();
    let steps_path = dir.join("steps.csv");
    if !steps_path.exists() {
        bail!("run {} has no steps.csv", name);
    }
    let steps = stamp_core::trainer::read_step_log(std::io::BufReader::new(
        fs::File::open(&steps_path).with_context(|| format!("run {}", name))?,
    ))?;
    let summary: RunSummary = serde_json::from_slice(
        &fs::read(dir.join("metrics.json")).with_context(|| format!("run {} has no metrics.json", name))?,
    )?;
    let config: ExperimentConfig = toml::from_str(
        &fs::read_to_string(dir.join("config.toml"))
            .with_context(|| format!("run {} has no config.toml", name))?,
    )?;
    let fingerprint = fs::read_to_string(dir.join("fingerprint.txt"))
        .with_context(|| format!("run {} has no fingerprint.txt", name))?
        .trim()
        .to_string();
    Ok(RunArtifacts {
        config,
        summary,
        steps,
        fingerprint,
    })
}
