//! Deterministic-by-seed training loop: AdamW updates, loss assembly with
//! the optional auxiliary head, early stopping on validation recall, and
//! per-step wall-clock / peak-memory instrumentation.

use crate::corpus::{InteractionDataset, SidTrie, Splits, TokenBatch, TrainBatcher, VocabLayout};
use crate::error::{Error, Result};
use crate::evaluator::{self, EvalConfig};
use crate::kernel::{allocator_reset_highwater, allocator_stats, Buf, DetRng, Graph};
use crate::map::{loss_total, MapHead};
use crate::model::{nll_loss, ForwardOpts, Model, Parameters, Phase};
use crate::sap::{PruneConfig, SapHook};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::time::Instant;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub eval_interval_steps: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            batch_size: 32,
            max_steps: 2000,
            eval_interval_steps: 200,
            early_stop_patience: 10,
            seed: 42,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0
            || self.weight_decay < 0.0
            || self.batch_size == 0
            || self.max_steps == 0
            || self.eval_interval_steps == 0
            || self.early_stop_patience == 0
        {
            return Err(Error::Config("train config values must be positive".into()));
        }
        Ok(())
    }
}

/// One training step's losses and instrumentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub l_ntp: f64,
    pub l_map: f64,
    pub l_total: f64,
    pub wall_millis: f64,
    pub high_water_bytes: u64,
}

/// AdamW first/second moment state aligned with a parameter set.
pub struct OptState {
    m: Vec<Buf>,
    v: Vec<Buf>,
    t: u64,
}

impl OptState {
    pub fn new(params: &Parameters) -> Self {
        OptState {
            m: params.entries.iter().map(|p| Buf::zeros(p.data.len())).collect(),
            v: params.entries.iter().map(|p| Buf::zeros(p.data.len())).collect(),
            t: 0,
        }
    }

    /// One decoupled-weight-decay Adam update. `grads[i] = None` is a zero
    /// gradient (the moments still decay and weight decay still applies).
    pub fn step(
        &mut self,
        params: &mut Parameters,
        grads: &[Option<&[f64]>],
        lr: f64,
        weight_decay: f64,
    ) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for (i, p) in params.entries.iter_mut().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for j in 0..p.data.len() {
                let g = grads[i].map_or(0.0, |g| g[j]);
                m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g;
                v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p.data[j] -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + weight_decay * p.data[j]);
            }
        }
    }
}

pub struct Trainer<'a> {
    pub model: &'a mut Model,
    pub map_head: Option<&'a mut MapHead>,
    pub prune: PruneConfig,
    pub cfg: TrainConfig,
    opt_model: OptState,
    opt_map: Option<OptState>,
    dropout_rng: DetRng,
    step: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(
        model: &'a mut Model,
        map_head: Option<&'a mut MapHead>,
        prune: PruneConfig,
        cfg: TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        crate::kernel::set_deterministic(cfg.deterministic);
        let opt_model = OptState::new(&model.params);
        let opt_map = map_head.as_ref().map(|h| OptState::new(&h.params));
        let dropout_rng = DetRng::new(cfg.seed).derive(0xD0);
        Ok(Trainer {
            model,
            map_head,
            prune,
            cfg,
            opt_model,
            opt_map,
            dropout_rng,
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Forward with the configured pruning hook, assemble the total loss,
    /// backpropagate, and apply AdamW. Wall time and the allocator
    /// high-water mark are measured around the whole step.
    pub fn train_step(&mut self, batch: &TokenBatch) -> Result<StepRecord> {
        self.step += 1;
        let start = Instant::now();
        allocator_reset_highwater();

        let mut g = Graph::new();
        let hook = SapHook::for_config(&self.prune);
        let trace = self.model.forward(
            &mut g,
            batch,
            ForwardOpts {
                phase: Phase::Train,
                hook: hook.as_ref().map(|h| h as &dyn crate::model::PruneHook),
                retain_probs: &[],
                rng: Some(&mut self.dropout_rng),
            },
        )?;
        let l_ntp = nll_loss(&mut g, &trace, batch)?;
        let (l_total, l_map_val, map_leaves) = match self.map_head.as_ref() {
            Some(head) if head.cfg.enabled => {
                let leaves = head.leaves(&mut g, true);
                let l_map = head.loss(&mut g, &trace, batch, &leaves)?;
                let total = loss_total(&mut g, l_ntp, l_map, head.cfg.lambda)?;
                (total, g.value(l_map)[0], Some(leaves))
            }
            _ => (l_ntp, 0.0, None),
        };
        let l_ntp_val = g.value(l_ntp)[0];
        let l_total_val = g.value(l_total)[0];
        if !l_total_val.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at step {}: ntp={} map={} total={}",
                self.step, l_ntp_val, l_map_val, l_total_val
            )));
        }
        g.backward(l_total)?;

        let grads: Vec<Option<&[f64]>> =
            trace.param_leaves.iter().map(|&v| g.grad(v)).collect();
        self.opt_model.step(
            &mut self.model.params,
            &grads,
            self.cfg.learning_rate,
            self.cfg.weight_decay,
        );
        if let (Some(head), Some(opt), Some(leaves)) =
            (self.map_head.as_mut(), self.opt_map.as_mut(), map_leaves)
        {
            let grads: Vec<Option<&[f64]>> = leaves.vars.iter().map(|&v| g.grad(v)).collect();
            opt.step(&mut head.params, &grads, self.cfg.learning_rate, self.cfg.weight_decay);
        }

        let wall_millis = start.elapsed().as_secs_f64() * 1e3;
        let high_water_bytes = allocator_stats().high_water_bytes;
        Ok(StepRecord {
            step: self.step,
            l_ntp: l_ntp_val,
            l_map: l_map_val,
            l_total: l_total_val,
            wall_millis,
            high_water_bytes,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxSteps,
    EarlyStop,
}

pub struct TrainOutcome {
    pub records: Vec<StepRecord>,
    pub stop: StopReason,
    pub best_step: usize,
    pub best_val_recall: f64,
    pub best_params: Parameters,
    pub best_map: Option<Parameters>,
}

pub struct RunSetup<'a> {
    pub ds: &'a InteractionDataset,
    pub splits: &'a Splits,
    pub trie: &'a SidTrie,
    pub layout: VocabLayout,
    pub window_items: usize,
    pub eval: EvalConfig,
}

/// Full training run: evaluates validation Recall@10 every
/// `eval_interval_steps`, keeps the best checkpoint, and stops after
/// `early_stop_patience` intervals without improvement or at `max_steps`.
pub fn run_training(
    model: &mut Model,
    map_head: &mut Option<MapHead>,
    prune: PruneConfig,
    cfg: TrainConfig,
    setup: &RunSetup<'_>,
) -> Result<TrainOutcome> {
    if setup.splits.val.is_empty() {
        return Err(Error::Config("validation split is empty".into()));
    }
    let depth = setup.layout.depth;
    prune.validate(depth)?;
    let mut batcher = TrainBatcher::new(
        setup.ds,
        &setup.splits.train,
        setup.window_items,
        setup.layout,
        cfg.batch_size,
        cfg.seed,
    )?;

    let mut records = Vec::with_capacity(cfg.max_steps);
    let mut best_step = 0usize;
    let mut best_val = f64::NEG_INFINITY;
    let mut best_params = model.params.clone();
    let mut best_map = map_head.as_ref().map(|h| h.params.clone());
    let mut intervals_without_improvement = 0usize;
    let mut stop = StopReason::MaxSteps;

    {
        let mut trainer = Trainer::new(model, map_head.as_mut(), prune, cfg)?;
        for step in 1..=cfg.max_steps {
            let batch = batcher.next_batch()?;
            records.push(trainer.train_step(&batch)?);

            if step % cfg.eval_interval_steps == 0 {
                let recall = evaluate_validation(trainer.model, trainer.map_head.as_deref(), prune, setup)?;
                if recall > best_val {
                    best_val = recall;
                    best_step = step;
                    best_params = trainer.model.params.clone();
                    best_map = trainer.map_head.as_ref().map(|h| h.params.clone());
                    intervals_without_improvement = 0;
                } else {
                    intervals_without_improvement += 1;
                    if intervals_without_improvement >= cfg.early_stop_patience {
                        stop = StopReason::EarlyStop;
                        break;
                    }
                }
            }
        }
    }
    if best_val == f64::NEG_INFINITY {
        // Never evaluated (max_steps below one interval): final weights win.
        best_step = records.last().map(|r| r.step).unwrap_or(0);
        best_params = model.params.clone();
        best_map = map_head.as_ref().map(|h| h.params.clone());
        best_val = f64::NAN;
    }
    Ok(TrainOutcome {
        records,
        stop,
        best_step,
        best_val_recall: best_val,
        best_params,
        best_map,
    })
}

fn evaluate_validation(
    model: &Model,
    _map_head: Option<&MapHead>,
    prune: PruneConfig,
    setup: &RunSetup<'_>,
) -> Result<f64> {
    let examples: &[crate::corpus::Example] = match setup.eval.max_users {
        Some(n) if n < setup.splits.val.len() => &setup.splits.val[..n],
        _ => &setup.splits.val,
    };
    let report = evaluator::evaluate_examples(
        model,
        prune,
        setup.ds,
        examples,
        setup.trie,
        setup.layout,
        setup.window_items,
        &EvalConfig {
            recall_ks: vec![10],
            hit_ks: vec![],
            ..setup.eval.clone()
        },
    )?;
    Ok(*report.recall_at.get(&10).unwrap_or(&0.0))
}

// ---------------------------------------------------------------------------
// Step log CSV
// ---------------------------------------------------------------------------

pub const STEP_LOG_HEADER: &str = "step,l_ntp,l_map,l_total,wall_millis,high_water_bytes";

pub fn write_step_log<W: Write>(mut w: W, records: &[StepRecord]) -> Result<()> {
    writeln!(w, "{}", STEP_LOG_HEADER)?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.step, r.l_ntp, r.l_map, r.l_total, r.wall_millis, r.high_water_bytes
        )?;
    }
    Ok(())
}

pub fn read_step_log<R: BufRead>(r: R) -> Result<Vec<StepRecord>> {
    let mut out = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        if idx == 0 {
            if line.trim() != STEP_LOG_HEADER {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("unexpected step log header '{}'", line),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Parse {
                line: idx + 1,
                msg: format!("expected 6 fields, got {}", fields.len()),
            });
        }
        let parse_f = |s: &str, lineno: usize| -> Result<f64> {
            s.parse::<f64>().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad float '{}'", s),
            })
        };
        out.push(StepRecord {
            step: fields[0].parse().map_err(|_| Error::Parse {
                line: idx + 1,
                msg: format!("bad step '{}'", fields[0]),
            })?,
            l_ntp: parse_f(fields[1], idx + 1)?,
            l_map: parse_f(fields[2], idx + 1)?,
            l_total: parse_f(fields[3], idx + 1)?,
            wall_millis: parse_f(fields[4], idx + 1)?,
            high_water_bytes: fields[5].parse().map_err(|_| Error::Parse {
                line: idx + 1,
                msg: format!("bad byte count '{}'", fields[5]),
            })?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_matches_hand_coded_oracle() {
        // Single parameter, five steps, fixed gradients; the oracle below
        // is an independent transcription of the update rule.
        let mut params = Parameters::default();
        params.push("p", vec![1], vec![1.0]);
        let mut opt = OptState::new(&params);
        let grads_per_step = [0.5, -0.25, 1.0, 0.0, 0.125];
        let lr = 0.01;
        let wd = 0.1;
        for &gv in &grads_per_step {
            let g = vec![gv];
            opt.step(&mut params, &[Some(g.as_slice())], lr, wd);
        }

        let (mut p, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for (t, &g) in grads_per_step.iter().enumerate() {
            let t = (t + 1) as i32;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            p -= lr * (mh / (vh.sqrt() + 1e-8) + wd * p);
        }
        assert!(
            (params.entries[0].data[0] - p).abs() < 1e-12,
            "{} vs {}",
            params.entries[0].data[0],
            p
        );
    }

    #[test]
    fn step_log_round_trip() {
        let records = vec![
            StepRecord {
                step: 1,
                l_ntp: 5.25,
                l_map: 1.5,
                l_total: 5.7,
                wall_millis: 12.5,
                high_water_bytes: 1024,
            },
            StepRecord {
                step: 2,
                l_ntp: 5.0,
                l_map: 1.25,
                l_total: 5.375,
                wall_millis: 11.0,
                high_water_bytes: 2048,
            },
        ];
        let mut buf = Vec::new();
        write_step_log(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(STEP_LOG_HEADER));
        let back = read_step_log(buf.as_slice()).unwrap();
        assert_eq!(back, records);
    }
}
