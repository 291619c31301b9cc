//! Decoder-only causal transformer over the SID vocabulary.
//!
//! Pre-norm residual blocks, learned absolute positions added once at the
//! embedding layer, and a weight-tied input embedding / LM head. A pruning
//! hook can intercept the hidden states after a configurable block; the
//! remaining blocks then run on the compressed sequence.

use crate::corpus::TokenBatch;
use crate::error::{Error, Result};
use crate::kernel::{
    deterministic_mode, AttentionProbsBatch, Buf, DetRng, Graph, Var, IGNORE_ROW,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub dropout_rate: f64,
    pub max_positions: usize,
}

impl ModelConfig {
    /// Desk-scale default: 4 layers, width 128, 8 heads, FFN 1024,
    /// dropout 0.15, positions for a 40-item window of depth-3 codes.
    pub fn desk_default(vocab_size: usize) -> Self {
        ModelConfig {
            n_layers: 4,
            d_model: 128,
            n_heads: 8,
            d_ff: 1024,
            vocab_size,
            dropout_rate: 0.15,
            max_positions: 124,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0
            || self.d_model == 0
            || self.n_heads == 0
            || self.d_ff == 0
            || self.vocab_size == 0
            || self.max_positions == 0
        {
            return Err(Error::Config("all model dimensions must be >= 1".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Buf,
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, Default)]
pub struct Parameters {
    pub entries: Vec<Param>,
}

impl Parameters {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.entries.push(Param {
            name: name.into(),
            shape,
            data: Buf::from_vec(data),
        });
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|p| p.name == name)
    }

    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|p| p.data.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_len());
        for p in &self.entries {
            out.extend_from_slice(&p.data);
        }
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.total_len() {
            return Err(Error::Dim(format!(
                "flat vector of {} values for {} parameters",
                flat.len(),
                self.total_len()
            )));
        }
        let mut off = 0;
        for p in self.entries.iter_mut() {
            let n = p.data.len();
            p.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Register every entry as a graph leaf, in order.
    pub fn leaves(&self, g: &mut Graph, requires_grad: bool) -> Vec<Var> {
        self.entries
            .iter()
            .map(|p| g.leaf(&p.shape, p.data.clone(), requires_grad))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

/// Result of a pruning hook: compressed states plus the bookkeeping the
/// rest of the forward pass needs.
pub struct Pruned {
    /// `[batch * new_len, d]`
    pub hidden: Var,
    /// Per-sequence validity over the compressed slots.
    pub valid: Vec<Vec<bool>>,
    /// Per-sequence original positions of the valid compressed slots,
    /// strictly increasing.
    pub kept: Vec<Vec<usize>>,
}

/// In-flight sequence compression, applied after a designated block.
pub trait PruneHook {
    /// 1-based index of the block after which the hook runs.
    fn layer(&self) -> usize;

    fn prune(
        &self,
        g: &mut Graph,
        hidden: Var,
        probs: &AttentionProbsBatch,
        valid: &[Vec<bool>],
    ) -> Result<Pruned>;
}

pub struct ForwardOpts<'a> {
    pub phase: Phase,
    pub hook: Option<&'a dyn PruneHook>,
    /// 1-based block indices whose attention probabilities to retain.
    pub retain_probs: &'a [usize],
    pub rng: Option<&'a mut DetRng>,
}

impl Default for ForwardOpts<'_> {
    fn default() -> Self {
        ForwardOpts {
            phase: Phase::Eval,
            hook: None,
            retain_probs: &[],
            rng: None,
        }
    }
}

pub struct ForwardTrace {
    /// `[batch * seq_len, vocab]`
    pub logits: Var,
    /// `[batch * seq_len, d]`, post final layer norm.
    pub final_hidden: Var,
    pub batch: usize,
    /// Post-pruning sequence width.
    pub seq_len: usize,
    pub orig_seq_len: usize,
    /// Per-sequence validity over the (possibly compressed) slots.
    pub valid: Vec<Vec<bool>>,
    /// Per-sequence original positions of the valid slots, increasing.
    pub kept: Vec<Vec<usize>>,
    /// Hidden states after each block (post-residual), as graph vars.
    pub hidden_layers: Vec<Var>,
    /// Multiply-accumulate count of each block's attention op.
    pub attn_macs: Vec<u64>,
    /// Retained attention probabilities by 1-based block index.
    pub probs: BTreeMap<usize, AttentionProbsBatch>,
    /// Graph leaves aligned with `Parameters::entries`.
    pub param_leaves: Vec<Var>,
    /// The tied embedding / unembedding leaf.
    pub lm_head: Var,
}

impl ForwardTrace {
    /// Compressed slot indices of the valid positions of sequence `b`.
    pub fn valid_slots(&self, b: usize) -> Vec<usize> {
        self.valid[b]
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| v.then_some(i))
            .collect()
    }

    /// Global logits/hidden row ids of the final `count` valid positions
    /// of each sequence (the prediction positions when `count == L`).
    pub fn prediction_rows(&self, count: usize) -> Result<Vec<Vec<usize>>> {
        let mut out = Vec::with_capacity(self.batch);
        for b in 0..self.batch {
            let slots = self.valid_slots(b);
            if slots.len() < count {
                return Err(Error::Contract(format!(
                    "sequence {} has {} valid slots, need {}",
                    b,
                    slots.len(),
                    count
                )));
            }
            out.push(
                slots[slots.len() - count..]
                    .iter()
                    .map(|&s| b * self.seq_len + s)
                    .collect(),
            );
        }
        Ok(out)
    }
}

pub struct Model {
    pub cfg: ModelConfig,
    pub params: Parameters,
}

fn init_parameters(cfg: &ModelConfig, seed: u64) -> Parameters {
    let mut rng = DetRng::new(seed);
    let d = cfg.d_model;
    let mut p = Parameters::default();
    p.push("embed.tok", vec![cfg.vocab_size, d], rng.normal_vec(cfg.vocab_size * d, 0.02));
    p.push("embed.pos", vec![cfg.max_positions, d], rng.normal_vec(cfg.max_positions * d, 0.02));
    let w_std = 1.0 / (d as f64).sqrt();
    let ff_std = 1.0 / (cfg.d_ff as f64).sqrt();
    for l in 0..cfg.n_layers {
        let pre = format!("layer{}", l);
        p.push(format!("{}.ln1.gamma", pre), vec![d], vec![1.0; d]);
        p.push(format!("{}.ln1.beta", pre), vec![d], vec![0.0; d]);
        // No biases on the q/k/v projections: a key bias shifts every
        // score of a query uniformly and cancels in the softmax.
        for name in ["wq", "wk", "wv", "wo"] {
            p.push(format!("{}.attn.{}", pre, name), vec![d, d], rng.normal_vec(d * d, w_std));
        }
        p.push(format!("{}.attn.bo", pre), vec![d], vec![0.0; d]);
        p.push(format!("{}.ln2.gamma", pre), vec![d], vec![1.0; d]);
        p.push(format!("{}.ln2.beta", pre), vec![d], vec![0.0; d]);
        p.push(format!("{}.ffn.w1", pre), vec![d, cfg.d_ff], rng.normal_vec(d * cfg.d_ff, w_std));
        p.push(format!("{}.ffn.b1", pre), vec![cfg.d_ff], vec![0.0; cfg.d_ff]);
        p.push(format!("{}.ffn.w2", pre), vec![cfg.d_ff, d], rng.normal_vec(cfg.d_ff * d, ff_std));
        p.push(format!("{}.ffn.b2", pre), vec![d], vec![0.0; d]);
    }
    p.push("final_ln.gamma", vec![d], vec![1.0; d]);
    p.push("final_ln.beta", vec![d], vec![0.0; d]);
    p
}

/// `allowed[b][q][k] = valid[q] && valid[k] && k <= q`, flattened.
fn causal_mask(valid: &[Vec<bool>], seq: usize) -> Vec<u8> {
    let batch = valid.len();
    let mut mask = vec![0u8; batch * seq * seq];
    for (b, vb) in valid.iter().enumerate() {
        for q in 0..seq {
            if !vb[q] {
                continue;
            }
            let row = &mut mask[(b * seq + q) * seq..(b * seq + q + 1) * seq];
            for (k, slot) in row.iter_mut().enumerate().take(q + 1) {
                *slot = vb[k] as u8;
            }
        }
    }
    mask
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Model {
            params: init_parameters(&cfg, seed),
            cfg,
        })
    }

    pub fn from_parameters(cfg: ModelConfig, params: Parameters) -> Result<Self> {
        cfg.validate()?;
        let reference = init_parameters(&cfg, 0);
        if reference.entries.len() != params.entries.len() {
            return Err(Error::Contract(format!(
                "{} parameter tensors, expected {}",
                params.entries.len(),
                reference.entries.len()
            )));
        }
        for (have, want) in params.entries.iter().zip(reference.entries.iter()) {
            if have.name != want.name || have.shape != want.shape {
                return Err(Error::Dim(format!(
                    "parameter {} has shape {:?}, expected {} with shape {:?}",
                    have.name, have.shape, want.name, want.shape
                )));
            }
        }
        Ok(Model { cfg, params })
    }

    fn dropout_active(&self, phase: Phase) -> bool {
        phase == Phase::Train && self.cfg.dropout_rate > 0.0 && !deterministic_mode()
    }

    /// Run the transformer over a batch. Blocks `1..=hook.layer()` see the
    /// full sequence; the hook then rewrites hidden states, validity, and
    /// the kept-index map, and the remaining blocks run compressed.
    pub fn forward(
        &self,
        g: &mut Graph,
        batch: &TokenBatch,
        mut opts: ForwardOpts<'_>,
    ) -> Result<ForwardTrace> {
        let cfg = &self.cfg;
        let d = cfg.d_model;
        let b = batch.seqs;
        let s0 = batch.width;
        if batch.input_ids.len() != b * s0 || batch.valid.len() != b * s0 {
            return Err(Error::Dim("batch arrays inconsistent with seqs*width".into()));
        }
        if let Some(&bad) = batch.input_ids.iter().find(|&&t| t >= cfg.vocab_size) {
            return Err(Error::Range(format!(
                "token id {} >= vocab_size {}",
                bad, cfg.vocab_size
            )));
        }
        if let Some(&bad) = batch.positions.iter().find(|&&p| p >= cfg.max_positions) {
            return Err(Error::Range(format!(
                "position {} >= max_positions {}",
                bad, cfg.max_positions
            )));
        }
        if let Some(hook) = opts.hook {
            if hook.layer() == 0 || hook.layer() >= cfg.n_layers {
                return Err(Error::Config(format!(
                    "prune layer {} outside 1..{}",
                    hook.layer(),
                    cfg.n_layers
                )));
            }
        }
        let dropout = self.dropout_active(opts.phase);
        if dropout && opts.rng.is_none() {
            return Err(Error::Contract("training forward with dropout needs an rng".into()));
        }

        let leaves = self.params.leaves(g, opts.phase == Phase::Train);
        let lm_head = leaves[0];
        let pos_table = leaves[1];
        let idx = |name: &str| -> Var {
            leaves[self.params.index_of(name).expect("fixed layout")]
        };

        // Compact PAD slots away up front: each sequence's valid tokens are
        // gathered right-aligned into the narrowest width that fits the
        // batch. PAD rows never influence valid positions (masked keys,
        // no loss), so this only removes dead compute; the kept map keeps
        // original positions addressable.
        let kept: Vec<Vec<usize>> = (0..b)
            .map(|i| {
                (0..s0)
                    .filter(|&slot| batch.valid[i * s0 + slot])
                    .collect::<Vec<usize>>()
            })
            .collect();
        let seq0 = kept.iter().map(Vec::len).max().unwrap_or(0);
        if seq0 == 0 {
            return Err(Error::Contract("batch has no valid tokens".into()));
        }
        let mut input_ids = vec![crate::corpus::PAD; b * seq0];
        let mut positions = vec![0usize; b * seq0];
        let mut valid: Vec<Vec<bool>> = Vec::with_capacity(b);
        for (i, kb) in kept.iter().enumerate() {
            let offset = seq0 - kb.len();
            let mut vb = vec![false; seq0];
            for (r, &slot) in kb.iter().enumerate() {
                input_ids[i * seq0 + offset + r] = batch.input_ids[i * s0 + slot];
                positions[i * seq0 + offset + r] = batch.positions[i * s0 + slot];
                vb[offset + r] = true;
            }
            valid.push(vb);
        }
        let mut kept = kept;
        let mut seq = seq0;

        let tok = g.embedding(lm_head, &input_ids)?;
        let pos = g.embedding(pos_table, &positions)?;
        let mut x = g.add(tok, pos)?;
        if dropout {
            let rng = opts.rng.as_mut().expect("checked above");
            x = g.dropout(x, cfg.dropout_rate, rng);
        }

        let mut mask = causal_mask(&valid, seq);

        let mut hidden_layers = Vec::with_capacity(cfg.n_layers);
        let mut attn_macs = Vec::with_capacity(cfg.n_layers);
        let mut retained = BTreeMap::new();

        for l in 0..cfg.n_layers {
            let pre = format!("layer{}", l);
            let xn = g.layer_norm(x, idx(&format!("{}.ln1.gamma", pre)), idx(&format!("{}.ln1.beta", pre)), LN_EPS)?;
            let q = g.matmul(xn, idx(&format!("{}.attn.wq", pre)), false, false)?;
            let k = g.matmul(xn, idx(&format!("{}.attn.wk", pre)), false, false)?;
            let v = g.matmul(xn, idx(&format!("{}.attn.wv", pre)), false, false)?;
            let (attn, attn_id) = g.attention(q, k, v, &mask, b, cfg.n_heads, seq, seq)?;
            attn_macs.push(g.attention_macs(attn_id));
            let proj0 = g.matmul(attn, idx(&format!("{}.attn.wo", pre)), false, false)?;
            let mut proj = g.add_row_bias(proj0, idx(&format!("{}.attn.bo", pre)))?;
            if dropout {
                let rng = opts.rng.as_mut().expect("checked above");
                proj = g.dropout(proj, cfg.dropout_rate, rng);
            }
            x = g.add(x, proj)?;

            let xn2 = g.layer_norm(x, idx(&format!("{}.ln2.gamma", pre)), idx(&format!("{}.ln2.beta", pre)), LN_EPS)?;
            let h0 = g.matmul(xn2, idx(&format!("{}.ffn.w1", pre)), false, false)?;
            let h1 = g.add_row_bias(h0, idx(&format!("{}.ffn.b1", pre)))?;
            let h2 = g.relu(h1);
            let f0 = g.matmul(h2, idx(&format!("{}.ffn.w2", pre)), false, false)?;
            let mut f = g.add_row_bias(f0, idx(&format!("{}.ffn.b2", pre)))?;
            if dropout {
                let rng = opts.rng.as_mut().expect("checked above");
                f = g.dropout(f, cfg.dropout_rate, rng);
            }
            x = g.add(x, f)?;
            hidden_layers.push(x);

            let block_index = l + 1;
            if opts.retain_probs.contains(&block_index) {
                retained.insert(block_index, g.attention_probs(attn_id));
            }
            if let Some(hook) = opts.hook {
                if hook.layer() == block_index {
                    let probs = g.attention_probs(attn_id);
                    let pruned = hook.prune(g, x, &probs, &valid)?;
                    validate_pruned(g, &pruned, b, d)?;
                    // The hook names slots of the sequence it saw; compose
                    // with the current kept map to stay in original batch
                    // coordinates. Every index must be a currently valid slot.
                    let mut composed = Vec::with_capacity(b);
                    for ((new_k, vb), old_k) in
                        pruned.kept.iter().zip(valid.iter()).zip(kept.iter())
                    {
                        let slots: Vec<usize> = vb
                            .iter()
                            .enumerate()
                            .filter_map(|(i, &v)| v.then_some(i))
                            .collect();
                        let mut mapped = Vec::with_capacity(new_k.len());
                        for &i in new_k {
                            let rank = slots.binary_search(&i).map_err(|_| {
                                Error::Contract(format!("kept index {} is not a valid slot", i))
                            })?;
                            mapped.push(old_k[rank]);
                        }
                        composed.push(mapped);
                    }
                    x = pruned.hidden;
                    seq = pruned.valid[0].len();
                    kept = composed;
                    valid = pruned.valid;
                    mask = causal_mask(&valid, seq);
                }
            }
        }

        let final_hidden = g.layer_norm(x, idx("final_ln.gamma"), idx("final_ln.beta"), LN_EPS)?;
        let logits = g.matmul(final_hidden, lm_head, false, true)?;

        Ok(ForwardTrace {
            logits,
            final_hidden,
            batch: b,
            seq_len: seq,
            orig_seq_len: s0,
            valid,
            kept,
            hidden_layers,
            attn_macs,
            probs: retained,
            param_leaves: leaves,
            lm_head,
        })
    }

    pub fn save_checkpoint<W: Write>(&self, w: W, extra: Option<&Parameters>) -> Result<()> {
        let mut sets: Vec<&Parameters> = vec![&self.params];
        if let Some(e) = extra {
            sets.push(e);
        }
        write_checkpoint(w, &self.cfg, &sets)
    }
}

fn validate_pruned(g: &Graph, pruned: &Pruned, batch: usize, d: usize) -> Result<()> {
    if pruned.valid.len() != batch || pruned.kept.len() != batch {
        return Err(Error::Contract("pruned batch size mismatch".into()));
    }
    let new_len = pruned.valid[0].len();
    if pruned.valid.iter().any(|v| v.len() != new_len) {
        return Err(Error::Contract("pruned sequences have mixed lengths".into()));
    }
    if g.shape(pruned.hidden) != [batch * new_len, d] {
        return Err(Error::Contract(format!(
            "pruned hidden shape {:?}, want [{}, {}]",
            g.shape(pruned.hidden),
            batch * new_len,
            d
        )));
    }
    for (vb, kb) in pruned.valid.iter().zip(pruned.kept.iter()) {
        let n_valid = vb.iter().filter(|&&v| v).count();
        if kb.len() != n_valid {
            return Err(Error::Contract(format!(
                "kept map has {} entries for {} valid slots",
                kb.len(),
                n_valid
            )));
        }
        if kb.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Contract(
                "kept indices must be strictly increasing (no duplicates)".into(),
            ));
        }
    }
    Ok(())
}

/// Mean over the batch of the summed NLL of the L target tokens, aligned
/// to the final L prediction positions. PAD rows contribute exactly zero.
pub fn nll_loss(g: &mut Graph, trace: &ForwardTrace, batch: &TokenBatch) -> Result<Var> {
    let depth = batch
        .targets
        .first()
        .map(|t| t.len())
        .ok_or_else(|| Error::Contract("batch carries no targets".into()))?;
    let rows = trace.prediction_rows(depth)?;
    let mut targets = vec![IGNORE_ROW; trace.batch * trace.seq_len];
    for (b, rowids) in rows.iter().enumerate() {
        for (j, &row) in rowids.iter().enumerate() {
            targets[row] = batch.targets[b][j];
        }
    }
    let per_row = g.nll_rows(trace.logits, &targets)?;
    let total = g.sum(per_row);
    Ok(g.scale(total, 1.0 / trace.batch as f64))
}

// ---------------------------------------------------------------------------
// Checkpoint format
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 8] = b"SIDGRCK1";

#[derive(Serialize, Deserialize)]
struct CkptHeader {
    config: ModelConfig,
    tensors: Vec<(String, Vec<usize>)>,
}

pub fn write_checkpoint<W: Write>(
    mut w: W,
    cfg: &ModelConfig,
    sets: &[&Parameters],
) -> Result<()> {
    let tensors: Vec<(String, Vec<usize>)> = sets
        .iter()
        .flat_map(|p| p.entries.iter().map(|e| (e.name.clone(), e.shape.clone())))
        .collect();
    let header = serde_json::to_vec(&CkptHeader {
        config: *cfg,
        tensors,
    })?;
    w.write_all(CKPT_MAGIC)?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    for p in sets.iter().flat_map(|p| p.entries.iter()) {
        for v in p.data.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub struct Checkpoint {
    pub config: ModelConfig,
    pub tensors: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Checkpoint {
    /// Split into backbone parameters and any `map.*` head parameters,
    /// validating names and shapes against the config's fixed layout.
    pub fn into_model(self) -> Result<(Model, Option<Parameters>)> {
        let mut backbone = Parameters::default();
        let mut head = Parameters::default();
        for (name, shape, data) in self.tensors {
            if name.starts_with("map.") {
                head.push(name, shape, data);
            } else {
                backbone.push(name, shape, data);
            }
        }
        let model = Model::from_parameters(self.config, backbone)?;
        Ok((model, (!head.entries.is_empty()).then_some(head)))
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(Error::Contract("not a checkpoint file".into()));
    }
    let mut len8 = [0u8; 8];
    r.read_exact(&mut len8)?;
    let hlen = u64::from_le_bytes(len8) as usize;
    let mut hbuf = vec![0u8; hlen];
    r.read_exact(&mut hbuf)?;
    let header: CkptHeader = serde_json::from_slice(&hbuf)?;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for (name, shape) in header.tensors {
        let n: usize = shape.iter().product();
        let mut data = vec![0.0f64; n];
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)?;
        for (i, chunk) in bytes.chunks_exact(8).enumerate() {
            data[i] = f64::from_le_bytes(chunk.try_into().expect("chunk of 8"));
        }
        tensors.push((name, shape, data));
    }
    Ok(Checkpoint {
        config: header.config,
        tensors,
    })
}
