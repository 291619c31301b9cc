//! Experiment configuration: one TOML file fully determines a run.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use stamp_core::corpus::{window_len, SynthConfig, VocabLayout};
use stamp_core::evaluator::EvalConfig;
use stamp_core::map::MapConfig;
use stamp_core::model::ModelConfig;
use stamp_core::sap::{PruneConfig, Strategy};
use stamp_core::trainer::TrainConfig;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// "synthetic" or "csv".
    pub source: String,
    #[serde(default)]
    pub csv_path: Option<PathBuf>,
    #[serde(default = "default_n_users")]
    pub n_users: usize,
    #[serde(default = "default_n_items")]
    pub n_items: usize,
    #[serde(default = "default_d_emb")]
    pub d_emb: usize,
    #[serde(default = "default_clusters")]
    pub n_latent_clusters: usize,
    #[serde(default = "default_data_seed")]
    pub seed: u64,
}

fn default_n_users() -> usize {
    600
}
fn default_n_items() -> usize {
    2000
}
fn default_d_emb() -> usize {
    32
}
fn default_clusters() -> usize {
    4
}
fn default_data_seed() -> u64 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct QuantizerSection {
    pub levels: usize,
    pub codewords: usize,
    #[serde(default = "default_q_seed")]
    pub seed: u64,
    #[serde(default = "default_q_iters")]
    pub max_iters: usize,
}

fn default_q_seed() -> u64 {
    7
}
fn default_q_iters() -> usize {
    25
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_window_items")]
    pub window_items: usize,
}

fn default_dropout() -> f64 {
    0.15
}
fn default_window_items() -> usize {
    40
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PruneSection {
    pub strategy: String,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_l_prune")]
    pub l_prune: usize,
    #[serde(default = "default_window")]
    pub window: usize,
}

fn default_alpha() -> f64 {
    1.0 / 3.0
}
fn default_l_prune() -> usize {
    1
}
fn default_window() -> usize {
    6
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MapSection {
    pub enabled: bool,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub fusion_hidden: Option<usize>,
}

fn default_lambda() -> f64 {
    0.3
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub max_steps: usize,
    #[serde(default = "default_eval_interval")]
    pub eval_interval_steps: usize,
    #[serde(default = "default_patience")]
    pub early_stop_patience: usize,
    #[serde(default = "default_train_seed")]
    pub seed: u64,
    #[serde(default)]
    pub deterministic: bool,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_wd() -> f64 {
    1e-4
}
fn default_batch() -> usize {
    32
}
fn default_eval_interval() -> usize {
    200
}
fn default_patience() -> usize {
    10
}
fn default_train_seed() -> u64 {
    42
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "default_beam")]
    pub beam_width: usize,
    #[serde(default = "default_recall_ks")]
    pub recall_ks: Vec<usize>,
    #[serde(default = "default_hit_ks")]
    pub hit_ks: Vec<usize>,
    /// Validation users evaluated between training intervals.
    #[serde(default = "default_val_users")]
    pub val_users: usize,
    /// Cap on test users in the final evaluation (0 = all).
    #[serde(default)]
    pub test_users: usize,
    #[serde(default = "default_chunk")]
    pub chunk: usize,
}

fn default_beam() -> usize {
    20
}
fn default_recall_ks() -> Vec<usize> {
    vec![5, 10]
}
fn default_hit_ks() -> Vec<usize> {
    vec![20, 100]
}
fn default_val_users() -> usize {
    200
}
fn default_chunk() -> usize {
    32
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            beam_width: default_beam(),
            recall_ks: default_recall_ks(),
            hit_ks: default_hit_ks(),
            val_users: default_val_users(),
            test_users: 0,
            chunk: default_chunk(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub data: DataSection,
    pub quantizer: QuantizerSection,
    pub model: ModelSection,
    pub prune: PruneSection,
    pub map: MapSection,
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: ExperimentConfig = toml::from_str(&text).context("parsing config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        match self.data.source.as_str() {
            "synthetic" => {}
            "csv" => {
                if self.data.csv_path.is_none() {
                    bail!("data.source = \"csv\" requires data.csv_path");
                }
            }
            other => bail!("unknown data.source '{}'", other),
        }
        let _ = Strategy::from_str(&self.prune.strategy)?;
        self.prune_config()?.validate(self.quantizer.levels)?;
        self.model_config().validate()?;
        self.map_config().validate()?;
        self.train_config().validate()?;
        Ok(())
    }

    pub fn layout(&self) -> VocabLayout {
        VocabLayout::new(self.quantizer.levels, self.quantizer.codewords)
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            n_users: self.data.n_users,
            n_items: self.data.n_items,
            d_emb: self.data.d_emb,
            n_latent_clusters: self.data.n_latent_clusters,
            seed: self.data.seed,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let layout = self.layout();
        ModelConfig {
            n_layers: self.model.n_layers,
            d_model: self.model.d_model,
            n_heads: self.model.n_heads,
            d_ff: self.model.d_ff,
            vocab_size: layout.vocab_size(),
            dropout_rate: self.model.dropout,
            // Window plus room for the teacher-forced / generated suffix.
            max_positions: window_len(self.model.window_items, &layout) + self.quantizer.levels,
        }
    }

    pub fn prune_config(&self) -> Result<PruneConfig> {
        Ok(PruneConfig {
            alpha: self.prune.alpha,
            l_prune: self.prune.l_prune,
            window_w: self.prune.window,
            strategy: Strategy::from_str(&self.prune.strategy)?,
        })
    }

    pub fn map_config(&self) -> MapConfig {
        MapConfig {
            lambda: self.map.lambda,
            fusion_hidden: self.map.fusion_hidden.unwrap_or(self.model.d_model),
            enabled: self.map.enabled,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            weight_decay: self.train.weight_decay,
            batch_size: self.train.batch_size,
            max_steps: self.train.max_steps,
            eval_interval_steps: self.train.eval_interval_steps,
            early_stop_patience: self.train.early_stop_patience,
            seed: self.train.seed,
            deterministic: self.train.deterministic,
        }
    }

    /// Validation-time evaluation: recall@10 only, capped users.
    pub fn val_eval_config(&self) -> EvalConfig {
        EvalConfig {
            beam_width: self.eval.beam_width.max(10),
            top_k: 10,
            recall_ks: vec![10],
            hit_ks: vec![],
            max_users: Some(self.eval.val_users),
            chunk: self.eval.chunk,
        }
    }

    /// Final test evaluation; the beam is widened to cover the largest
    /// requested K.
    pub fn test_eval_config(&self) -> EvalConfig {
        let needed = self
            .eval
            .recall_ks
            .iter()
            .chain(self.eval.hit_ks.iter())
            .copied()
            .max()
            .unwrap_or(10);
        EvalConfig {
            beam_width: self.eval.beam_width.max(needed),
            top_k: needed,
            recall_ks: self.eval.recall_ks.clone(),
            hit_ks: self.eval.hit_ks.clone(),
            max_users: (self.eval.test_users > 0).then_some(self.eval.test_users),
            chunk: self.eval.chunk,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub fn sample() -> ExperimentConfig {
        toml::from_str(
            r#"
            output_dir = "out"
            [data]
            source = "synthetic"
            n_users = 50
            n_items = 100
            [quantizer]
            levels = 3
            codewords = 16
            [model]
            n_layers = 2
            d_model = 16
            n_heads = 4
            d_ff = 32
            window_items = 6
            [prune]
            strategy = "sap"
            [map]
            enabled = true
            [train]
            max_steps = 10
            "#,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_identity() {
        let cfg = sample();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        // and once more through the serializer
        assert_eq!(text, back.to_toml().unwrap());
    }

    #[test]
    fn derived_dimensions() {
        let cfg = sample();
        assert_eq!(cfg.layout().vocab_size(), 2 + 3 * 16);
        assert_eq!(cfg.model_config().max_positions, 1 + 6 * 3 + 3);
        assert_eq!(cfg.map_config().fusion_hidden, 16);
    }

    #[test]
    fn bad_strategy_rejected() {
        let mut cfg = sample();
        cfg.prune.strategy = "quantum".into();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn csv_source_needs_path() {
        let mut cfg = sample();
        cfg.data.source = "csv".into();
        assert!(cfg.validate().is_err());
        cfg.data.csv_path = Some("x.csv".into());
        cfg.validate().unwrap();
    }
}
