//! Multi-step auxiliary prediction: a training-only head that fuses the
//! backbone state at step t with the ground-truth embedding of the next
//! token to predict the token after it, re-using the backbone's tied
//! unembedding matrix. It never participates in generation.

use crate::corpus::TokenBatch;
use crate::error::{Error, Result};
use crate::kernel::{DetRng, Graph, Var};
use crate::model::{ForwardTrace, Parameters};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    /// Weight of the auxiliary loss in the total objective.
    pub lambda: f64,
    /// Hidden width of the fusion MLP.
    pub fusion_hidden: usize,
    pub enabled: bool,
}

impl MapConfig {
    pub fn disabled() -> Self {
        MapConfig {
            lambda: 0.0,
            fusion_hidden: 1,
            enabled: false,
        }
    }

    /// Default weighting: lambda 0.3, fusion width = model width.
    pub fn desk_default(d_model: usize) -> Self {
        MapConfig {
            lambda: 0.3,
            fusion_hidden: d_model,
            enabled: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::Config(format!("lambda {} must be >= 0", self.lambda)));
        }
        if self.enabled && self.fusion_hidden == 0 {
            return Err(Error::Config("fusion_hidden must be >= 1".into()));
        }
        Ok(())
    }
}

/// Simulated next-step hidden states, one row per foresight position.
pub struct ForesightState {
    pub h_mtp: Var,
    pub positions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionActivation {
    Silu,
    /// Pass-through, for algebraic tests of the fusion MLP.
    Identity,
}

pub struct MapHead {
    pub cfg: MapConfig,
    pub params: Parameters,
    pub activation: FusionActivation,
    d_model: usize,
}

/// Graph leaves of the head's parameters, aligned with `params.entries`.
pub struct MapLeaves {
    pub vars: Vec<Var>,
}

impl MapHead {
    pub fn new(cfg: MapConfig, d_model: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = DetRng::new(seed);
        let fh = cfg.fusion_hidden;
        let mut params = Parameters::default();
        let in_std = 1.0 / ((2 * d_model) as f64).sqrt();
        let hid_std = 1.0 / (fh as f64).sqrt();
        params.push("map.w1", vec![2 * d_model, fh], rng.normal_vec(2 * d_model * fh, in_std));
        params.push("map.b1", vec![fh], vec![0.0; fh]);
        params.push("map.w2", vec![fh, d_model], rng.normal_vec(fh * d_model, hid_std));
        params.push("map.b2", vec![d_model], vec![0.0; d_model]);
        Ok(MapHead {
            cfg,
            params,
            activation: FusionActivation::Silu,
            d_model,
        })
    }

    pub fn from_parameters(cfg: MapConfig, d_model: usize, params: Parameters) -> Result<Self> {
        let reference = MapHead::new(cfg, d_model, 0)?;
        if reference.params.entries.len() != params.entries.len() {
            return Err(Error::Contract(format!(
                "{} head tensors, expected {}",
                params.entries.len(),
                reference.params.entries.len()
            )));
        }
        for (have, want) in params.entries.iter().zip(reference.params.entries.iter()) {
            if have.name != want.name || have.shape != want.shape {
                return Err(Error::Dim(format!(
                    "head parameter {} has shape {:?}, expected {} with {:?}",
                    have.name, have.shape, want.name, want.shape
                )));
            }
        }
        Ok(MapHead {
            cfg,
            params,
            activation: FusionActivation::Silu,
            d_model,
        })
    }

    pub fn with_activation(mut self, act: FusionActivation) -> Self {
        self.activation = act;
        self
    }

    pub fn leaves(&self, g: &mut Graph, requires_grad: bool) -> MapLeaves {
        MapLeaves {
            vars: self.params.leaves(g, requires_grad),
        }
    }

    /// Fuse backbone states with the ground-truth next-token embeddings:
    /// `h_mtp = MLP(concat(h, next_emb))`.
    pub fn foresight(
        &self,
        g: &mut Graph,
        h: Var,
        next_emb: Var,
        leaves: &MapLeaves,
    ) -> Result<ForesightState> {
        let sh = g.shape(h).to_vec();
        let se = g.shape(next_emb).to_vec();
        if sh.len() != 2 || se.len() != 2 || sh != se || sh[1] != self.d_model {
            return Err(Error::Contract(format!(
                "foresight inputs {:?} and {:?} must both be [positions, {}]",
                sh, se, self.d_model
            )));
        }
        let cat = g.concat_cols(h, next_emb)?;
        let z0 = g.matmul(cat, leaves.vars[0], false, false)?;
        let z1 = g.add_row_bias(z0, leaves.vars[1])?;
        let a = match self.activation {
            FusionActivation::Silu => g.silu(z1),
            FusionActivation::Identity => z1,
        };
        let z2 = g.matmul(a, leaves.vars[2], false, false)?;
        let h_mtp = g.add_row_bias(z2, leaves.vars[3])?;
        Ok(ForesightState {
            h_mtp,
            positions: sh[0],
        })
    }

    /// Project a foresight state through the backbone's own unembedding
    /// matrix (the same graph node, so gradients join the tied storage).
    pub fn map_logits(&self, g: &mut Graph, fs: &ForesightState, trace: &ForwardTrace) -> Result<Var> {
        g.matmul(fs.h_mtp, trace.lm_head, false, true)
    }

    /// Auxiliary loss: teacher-forced next-next-token NLL summed over the
    /// first L-1 prediction positions, mean over the batch. Exactly zero
    /// when L < 2 (empty sum).
    pub fn loss(
        &self,
        g: &mut Graph,
        trace: &ForwardTrace,
        batch: &TokenBatch,
        leaves: &MapLeaves,
    ) -> Result<Var> {
        let depth = batch
            .targets
            .first()
            .map(|t| t.len())
            .ok_or_else(|| Error::Contract("batch carries no targets".into()))?;
        if depth < 2 {
            return Ok(g.scalar(0.0));
        }
        let rows = trace.prediction_rows(depth)?;
        let mut h_rows = Vec::with_capacity(trace.batch * (depth - 1));
        let mut next_tokens = Vec::with_capacity(trace.batch * (depth - 1));
        let mut targets = Vec::with_capacity(trace.batch * (depth - 1));
        for (b, rowids) in rows.iter().enumerate() {
            for j in 0..depth - 1 {
                h_rows.push(rowids[j]);
                next_tokens.push(batch.targets[b][j]);
                targets.push(batch.targets[b][j + 1]);
            }
        }
        let h = g.gather_rows(trace.final_hidden, &h_rows)?;
        let next_emb = g.embedding(trace.lm_head, &next_tokens)?;
        let fs = self.foresight(g, h, next_emb, leaves)?;
        let logits = self.map_logits(g, &fs, trace)?;
        let per_row = g.nll_rows(logits, &targets)?;
        let total = g.sum(per_row);
        Ok(g.scale(total, 1.0 / trace.batch as f64))
    }
}

/// Total objective: primary NLL plus lambda times the auxiliary loss.
pub fn loss_total(g: &mut Graph, l_ntp: Var, l_map: Var, lambda: f64) -> Result<Var> {
    g.add_scaled(l_ntp, l_map, lambda)
}
