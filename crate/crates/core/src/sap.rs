//! Semantic adaptive pruning: per-token utility from semantic saliency and
//! attention centrality, a budgeted order-preserving selection with a
//! protected trailing window, and the baseline strategies it is compared
//! against (magnitude-only, attention-only, max/avg pooling).

use crate::error::{Error, Result};
use crate::kernel::{AttentionProbsBatch, Graph, Var, SENTINEL_ROW};
use crate::model::{PruneHook, Pruned};
use serde::{Deserialize, Serialize};

/// Sentinel importance for PAD slots.
pub const NEG_INF: f64 = f64::NEG_INFINITY;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Sap,
    L2,
    AttentionOnly,
    MaxPool,
    AvgPool,
    None,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Strategy::Sap => "sap",
            Strategy::L2 => "l2",
            Strategy::AttentionOnly => "attention_only",
            Strategy::MaxPool => "max_pool",
            Strategy::AvgPool => "avg_pool",
            Strategy::None => "none",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sap" => Ok(Strategy::Sap),
            "l2" => Ok(Strategy::L2),
            "attention_only" => Ok(Strategy::AttentionOnly),
            "max_pool" => Ok(Strategy::MaxPool),
            "avg_pool" => Ok(Strategy::AvgPool),
            "none" => Ok(Strategy::None),
            other => Err(Error::Config(format!("unknown pruning strategy '{}'", other))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    /// Retention ratio in (0, 1].
    pub alpha: f64,
    /// 1-based block index after which pruning runs.
    pub l_prune: usize,
    /// Trailing valid positions retained unconditionally.
    pub window_w: usize,
    pub strategy: Strategy,
}

impl PruneConfig {
    pub fn none() -> Self {
        PruneConfig {
            alpha: 1.0,
            l_prune: 1,
            window_w: 0,
            strategy: Strategy::None,
        }
    }

    /// `depth` is the SID level count L; the final L prediction positions
    /// must survive pruning, so the window may not be smaller.
    pub fn validate(&self, depth: usize) -> Result<()> {
        if self.strategy == Strategy::None {
            return Ok(());
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha {} outside (0, 1]", self.alpha)));
        }
        if self.window_w < depth {
            return Err(Error::Config(format!(
                "protected window {} smaller than code depth {}",
                self.window_w, depth
            )));
        }
        if self.l_prune == 0 {
            return Err(Error::Config("l_prune is 1-based and must be >= 1".into()));
        }
        Ok(())
    }

    /// Tokens kept for a sequence with `n_valid` valid positions.
    pub fn budget(&self, n_valid: usize) -> usize {
        ((self.alpha * n_valid as f64).floor() as usize).max(self.window_w)
    }
}

/// Per-token utility scores over one sequence's slots.
#[derive(Debug, Clone)]
pub struct ImportanceVector {
    pub s_sem: Vec<f64>,
    pub s_attn: Vec<f64>,
    pub importance: Vec<f64>,
    pub valid: Vec<bool>,
}

/// Normalized per-token l1 mass of the hidden states: row l1 norms divided
/// by the maximum over valid slots (all zeros if that maximum is zero).
/// PAD slots score zero.
pub fn semantic_saliency(hidden: &[f64], d: usize, valid: &[bool]) -> Vec<f64> {
    debug_assert_eq!(hidden.len(), valid.len() * d);
    let mut raw: Vec<f64> = valid
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v {
                hidden[i * d..(i + 1) * d].iter().map(|x| x.abs()).sum()
            } else {
                0.0
            }
        })
        .collect();
    let mx = raw
        .iter()
        .zip(valid.iter())
        .filter(|(_, &v)| v)
        .map(|(&r, _)| r)
        .fold(0.0f64, f64::max);
    if mx > 0.0 {
        for r in raw.iter_mut() {
            *r /= mx;
        }
    } else {
        raw.iter_mut().for_each(|r| *r = 0.0);
    }
    raw
}

/// Row l2 norms under the same max normalization (magnitude baseline).
pub fn l2_saliency(hidden: &[f64], d: usize, valid: &[bool]) -> Vec<f64> {
    let mut raw: Vec<f64> = valid
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v {
                hidden[i * d..(i + 1) * d]
                    .iter()
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mx = raw
        .iter()
        .zip(valid.iter())
        .filter(|(_, &v)| v)
        .map(|(&r, _)| r)
        .fold(0.0f64, f64::max);
    if mx > 0.0 {
        for r in raw.iter_mut() {
            *r /= mx;
        }
    }
    raw
}

/// Total attention mass received by each key: sum over heads and valid
/// query rows of the probability assigned to that key. PAD keys get zero.
pub fn attention_centrality(
    probs: &[f64],
    heads: usize,
    nq: usize,
    nk: usize,
    valid: &[bool],
) -> Vec<f64> {
    debug_assert_eq!(probs.len(), heads * nq * nk);
    debug_assert_eq!(valid.len().max(nk), valid.len());
    let mut s = vec![0.0f64; nk];
    for h in 0..heads {
        for (q, &vq) in valid.iter().enumerate().take(nq) {
            if !vq {
                continue;
            }
            let row = &probs[(h * nq + q) * nk..(h * nq + q + 1) * nk];
            for (k, sk) in s.iter_mut().enumerate() {
                *sk += row[k];
            }
        }
    }
    for (k, sk) in s.iter_mut().enumerate() {
        if !valid[k] {
            *sk = 0.0;
        }
    }
    s
}

/// Importance = saliency x centrality; invalid slots carry the -inf
/// sentinel so they can never be selected.
pub fn importance(s_sem: &[f64], s_attn: &[f64], valid: &[bool]) -> Result<ImportanceVector> {
    if s_sem.len() != s_attn.len() || s_sem.len() != valid.len() {
        return Err(Error::Contract(format!(
            "importance inputs of lengths {}, {}, {}",
            s_sem.len(),
            s_attn.len(),
            valid.len()
        )));
    }
    let importance = valid
        .iter()
        .enumerate()
        .map(|(i, &v)| if v { s_sem[i] * s_attn[i] } else { NEG_INF })
        .collect();
    Ok(ImportanceVector {
        s_sem: s_sem.to_vec(),
        s_attn: s_attn.to_vec(),
        importance,
        valid: valid.to_vec(),
    })
}

/// Budgeted order-preserving selection: the last `window_w` valid positions
/// are always kept; the remaining budget goes to the highest-importance
/// other valid positions, ties to the lower original index. Returns
/// original indices sorted ascending.
pub fn select_tokens(
    iv: &ImportanceVector,
    cfg: &PruneConfig,
    n_valid: usize,
) -> Result<Vec<usize>> {
    let valid_idx: Vec<usize> = iv
        .valid
        .iter()
        .enumerate()
        .filter_map(|(i, &v)| v.then_some(i))
        .collect();
    if valid_idx.len() != n_valid {
        return Err(Error::Contract(format!(
            "n_valid {} does not match {} valid slots",
            n_valid,
            valid_idx.len()
        )));
    }
    if cfg.window_w > n_valid {
        return Err(Error::Config(format!(
            "protected window {} exceeds {} valid tokens",
            cfg.window_w, n_valid
        )));
    }
    let budget = cfg.budget(n_valid).min(n_valid);
    let protected_from = n_valid - cfg.window_w;
    let mut selected: Vec<usize> = valid_idx[protected_from..].to_vec();
    let free = budget - cfg.window_w;
    if free > 0 {
        let mut candidates: Vec<usize> = valid_idx[..protected_from].to_vec();
        // Highest importance first, ties to the lower original index.
        candidates.sort_by(|&a, &b| {
            iv.importance[b]
                .total_cmp(&iv.importance[a])
                .then(a.cmp(&b))
        });
        selected.extend_from_slice(&candidates[..free]);
    }
    selected.sort_unstable();
    Ok(selected)
}

/// Gather the hidden rows named by a strictly increasing index list.
pub fn compress(g: &mut Graph, hidden: Var, k_sorted: &[usize]) -> Result<Var> {
    if k_sorted.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Contract(
            "compress requires strictly increasing indices".into(),
        ));
    }
    g.gather_rows(hidden, k_sorted)
}

/// Scores for the non-pooling baseline strategies.
pub fn baseline_score(
    strategy: Strategy,
    hidden: &[f64],
    d: usize,
    probs: Option<(&[f64], usize, usize, usize)>,
    valid: &[bool],
) -> Result<Vec<f64>> {
    match strategy {
        Strategy::L2 => Ok(l2_saliency(hidden, d, valid)),
        Strategy::AttentionOnly => {
            let (p, heads, nq, nk) = probs.ok_or_else(|| {
                Error::Contract("attention_only scoring needs attention probabilities".into())
            })?;
            Ok(attention_centrality(p, heads, nq, nk, valid))
        }
        other => Err(Error::Config(format!(
            "'{}' is not a scoring strategy",
            other
        ))),
    }
}

/// Pool consecutive groups of `group_size` rows by elementwise max or mean
/// (the aggregation baselines). The trailing partial group is kept.
pub fn baseline_pool(g: &mut Graph, strategy: Strategy, hidden: Var, group_size: usize) -> Result<Var> {
    if group_size == 0 {
        return Err(Error::Config("group_size must be >= 1".into()));
    }
    let rows = g.shape(hidden)[0];
    let mut groups = Vec::new();
    let mut start = 0;
    while start < rows {
        let end = (start + group_size).min(rows);
        groups.push((start, end));
        start = end;
    }
    match strategy {
        Strategy::MaxPool => g.pool_rows(hidden, &groups, true),
        Strategy::AvgPool => g.pool_rows(hidden, &groups, false),
        other => Err(Error::Config(format!("'{}' is not a pooling strategy", other))),
    }
}

/// Per-sequence pooling plan: the protected tail stays 1:1, the leading
/// valid slots collapse into `budget - window` near-equal consecutive
/// groups, so pooled variants land on the same compressed length as the
/// selection strategies.
fn pool_partition(valid_slots: &[usize], budget: usize, window: usize) -> Vec<Vec<usize>> {
    let n = valid_slots.len();
    let head = &valid_slots[..n - window];
    let k = budget - window;
    let mut groups: Vec<Vec<usize>> = Vec::with_capacity(budget);
    if k > 0 && !head.is_empty() {
        let base = head.len() / k;
        let rem = head.len() % k;
        let mut off = 0;
        for i in 0..k {
            let size = base + (i < rem) as usize;
            groups.push(head[off..off + size].to_vec());
            off += size;
        }
    }
    for &s in &valid_slots[n - window..] {
        groups.push(vec![s]);
    }
    groups
}

/// The pruning hook: scores tokens at the designated layer, selects or
/// pools per sequence, and reassembles a right-aligned compressed batch.
pub struct SapHook {
    pub cfg: PruneConfig,
}

impl SapHook {
    /// No hook for `Strategy::None`.
    pub fn for_config(cfg: &PruneConfig) -> Option<SapHook> {
        (cfg.strategy != Strategy::None).then(|| SapHook { cfg: *cfg })
    }
}

impl PruneHook for SapHook {
    fn layer(&self) -> usize {
        self.cfg.l_prune
    }

    fn prune(
        &self,
        g: &mut Graph,
        hidden: Var,
        probs: &AttentionProbsBatch,
        valid: &[Vec<bool>],
    ) -> Result<Pruned> {
        let batch = valid.len();
        let seq = probs.nq;
        let d = g.shape(hidden)[1];
        debug_assert_eq!(g.shape(hidden)[0], batch * seq);

        match self.cfg.strategy {
            Strategy::None => {
                let kept: Vec<Vec<usize>> = valid
                    .iter()
                    .map(|vb| vb.iter().enumerate().filter_map(|(i, &v)| v.then_some(i)).collect())
                    .collect();
                Ok(Pruned {
                    hidden,
                    valid: valid.to_vec(),
                    kept,
                })
            }
            Strategy::Sap | Strategy::L2 | Strategy::AttentionOnly => {
                let mut kept: Vec<Vec<usize>> = Vec::with_capacity(batch);
                for (b, vb) in valid.iter().enumerate() {
                    let rows = &g.value(hidden)[b * seq * d..(b + 1) * seq * d];
                    let per = probs.heads * probs.nq * probs.nk;
                    let pb = &probs.values[b * per..(b + 1) * per];
                    let iv = match self.cfg.strategy {
                        Strategy::Sap => {
                            let s_sem = semantic_saliency(rows, d, vb);
                            let s_attn =
                                attention_centrality(pb, probs.heads, probs.nq, probs.nk, vb);
                            importance(&s_sem, &s_attn, vb)?
                        }
                        Strategy::L2 => {
                            let score = l2_saliency(rows, d, vb);
                            importance(&score, &vec![1.0; vb.len()], vb)?
                        }
                        Strategy::AttentionOnly => {
                            let score =
                                attention_centrality(pb, probs.heads, probs.nq, probs.nk, vb);
                            importance(&vec![1.0; vb.len()], &score, vb)?
                        }
                        _ => unreachable!(),
                    };
                    let n_valid = vb.iter().filter(|&&v| v).count();
                    // Sequences shorter than the protected window (short
                    // generation prefixes) keep everything.
                    let cfg = PruneConfig {
                        window_w: self.cfg.window_w.min(n_valid),
                        ..self.cfg
                    };
                    kept.push(select_tokens(&iv, &cfg, n_valid)?);
                }
                let new_len = kept.iter().map(Vec::len).max().unwrap_or(0);
                let mut idx = Vec::with_capacity(batch * new_len);
                let mut new_valid = Vec::with_capacity(batch);
                for (b, kb) in kept.iter().enumerate() {
                    let pad = new_len - kb.len();
                    idx.extend(std::iter::repeat(SENTINEL_ROW).take(pad));
                    idx.extend(kb.iter().map(|&i| b * seq + i));
                    let mut vb = vec![false; pad];
                    vb.extend(std::iter::repeat(true).take(kb.len()));
                    new_valid.push(vb);
                }
                let compressed = g.gather_rows(hidden, &idx)?;
                Ok(Pruned {
                    hidden: compressed,
                    valid: new_valid,
                    kept,
                })
            }
            Strategy::MaxPool | Strategy::AvgPool => {
                // Compact the valid rows, then pool group ranges in the
                // compact coordinate space.
                let mut compact_idx = Vec::new();
                let mut offsets = Vec::with_capacity(batch + 1);
                offsets.push(0usize);
                let mut plans: Vec<Vec<Vec<usize>>> = Vec::with_capacity(batch);
                for (b, vb) in valid.iter().enumerate() {
                    let slots: Vec<usize> =
                        vb.iter().enumerate().filter_map(|(i, &v)| v.then_some(i)).collect();
                    let n_valid = slots.len();
                    let window = self.cfg.window_w.min(n_valid);
                    let cfg = PruneConfig { window_w: window, ..self.cfg };
                    let budget = cfg.budget(n_valid).min(n_valid);
                    compact_idx.extend(slots.iter().map(|&i| b * seq + i));
                    offsets.push(compact_idx.len());
                    plans.push(pool_partition(&slots, budget, window));
                }
                let compact = g.gather_rows(hidden, &compact_idx)?;
                let new_len = plans.iter().map(Vec::len).max().unwrap_or(0);
                let mut groups = Vec::with_capacity(batch * new_len);
                let mut new_valid = Vec::with_capacity(batch);
                let mut kept = Vec::with_capacity(batch);
                for (b, plan) in plans.iter().enumerate() {
                    let pad = new_len - plan.len();
                    groups.extend(std::iter::repeat((0usize, 0usize)).take(pad));
                    let mut vb = vec![false; pad];
                    vb.extend(std::iter::repeat(true).take(plan.len()));
                    new_valid.push(vb);
                    // compact rows of sequence b start at offsets[b]; group
                    // members are consecutive there by construction.
                    let base = offsets[b];
                    let slots: Vec<usize> = valid[b]
                        .iter()
                        .enumerate()
                        .filter_map(|(i, &v)| v.then_some(i))
                        .collect();
                    let rank_of = |slot: usize| slots.binary_search(&slot).expect("slot is valid");
                    let mut reps = Vec::with_capacity(plan.len());
                    for group in plan {
                        let first = rank_of(group[0]);
                        let last = rank_of(*group.last().expect("non-empty group"));
                        groups.push((base + first, base + last + 1));
                        reps.push(*group.last().expect("non-empty group"));
                    }
                    kept.push(reps);
                }
                let pooled = g.pool_rows(
                    compact,
                    &groups,
                    matches!(self.cfg.strategy, Strategy::MaxPool),
                )?;
                Ok(Pruned {
                    hidden: pooled,
                    valid: new_valid,
                    kept,
                })
            }
        }
    }
}

/// Keep-everything hook (PAD included): the compressed batch is bitwise
/// the uncompressed one.
pub struct IdentityHook {
    pub l_prune: usize,
}

impl PruneHook for IdentityHook {
    fn layer(&self) -> usize {
        self.l_prune
    }

    fn prune(
        &self,
        g: &mut Graph,
        hidden: Var,
        _probs: &AttentionProbsBatch,
        valid: &[Vec<bool>],
    ) -> Result<Pruned> {
        let _ = g;
        let kept = valid
            .iter()
            .map(|vb| vb.iter().enumerate().filter_map(|(i, &v)| v.then_some(i)).collect())
            .collect();
        Ok(Pruned {
            hidden,
            valid: valid.to_vec(),
            kept,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(alpha: f64, w: usize) -> PruneConfig {
        PruneConfig {
            alpha,
            l_prune: 1,
            window_w: w,
            strategy: Strategy::Sap,
        }
    }

    #[test]
    fn saliency_normalizes_by_max() {
        let hidden = [1.0, -1.0, 2.0, 2.0];
        let s = semantic_saliency(&hidden, 2, &[true, true]);
        assert_eq!(s, vec![0.5, 1.0]);
    }

    #[test]
    fn saliency_zero_hidden_guard() {
        let hidden = [0.0; 6];
        let s = semantic_saliency(&hidden, 2, &[true, true, true]);
        assert_eq!(s, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn saliency_argmax_matches_l1_oracle() {
        let mut rng = crate::kernel::DetRng::new(21);
        let n = 17;
        let d = 9;
        let hidden: Vec<f64> = (0..n * d).map(|_| rng.normal()).collect();
        let valid = vec![true; n];
        let s = semantic_saliency(&hidden, d, &valid);
        let oracle: Vec<f64> = (0..n)
            .map(|i| hidden[i * d..(i + 1) * d].iter().map(|x| x.abs()).sum())
            .collect();
        let argmax = |v: &[f64]| {
            v.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        };
        assert_eq!(argmax(&s), argmax(&oracle));
    }

    #[test]
    fn centrality_uniform_attention() {
        // Uniform rows over 4 valid keys, 2 heads: each key receives
        // 4 queries * (1/4) per head = 1, times 2 heads = 2.
        let n = 4;
        let heads = 2;
        let probs = vec![0.25; heads * n * n];
        let valid = vec![true; n];
        let s = attention_centrality(&probs, heads, n, n, &valid);
        for &v in &s {
            assert!((v - 2.0).abs() < 1e-12);
        }
        let total: f64 = s.iter().sum();
        assert!((total - (heads * n) as f64).abs() < 1e-9);
    }

    #[test]
    fn centrality_causal_uniform_closed_form() {
        // Causal, uniform within allowed keys, one head, three tokens:
        // column masses 1 + 1/2 + 1/3, 1/2 + 1/3, 1/3.
        let n = 3;
        let mut probs = vec![0.0; n * n];
        for q in 0..n {
            for k in 0..=q {
                probs[q * n + k] = 1.0 / (q + 1) as f64;
            }
        }
        let s = attention_centrality(&probs, 1, n, n, &[true; 3]);
        let want = [1.0 + 0.5 + 1.0 / 3.0, 0.5 + 1.0 / 3.0, 1.0 / 3.0];
        for (a, b) in s.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn importance_product_and_sentinel() {
        let iv = importance(&[0.5, 1.0, 0.0], &[2.0, 1.0, 9.0], &[true, true, true]).unwrap();
        assert_eq!(iv.importance[0], 1.0);
        assert_eq!(iv.importance[1], 1.0);
        assert_eq!(iv.importance[2], 0.0); // zero saliency absorbs
        let iv = importance(&[0.5], &[2.0], &[false]).unwrap();
        assert_eq!(iv.importance[0], NEG_INF);
        assert!(importance(&[0.0], &[0.0, 1.0], &[true]).is_err());
    }

    #[test]
    fn select_spec_example() {
        // Six valid tokens, alpha=0.5, W=2: budget 3, last two protected,
        // one free slot goes to the highest importance among the rest.
        let iv = ImportanceVector {
            s_sem: vec![1.0; 6],
            s_attn: vec![1.0; 6],
            importance: vec![5.0, 1.0, 4.0, 2.0, 0.0, 0.0],
            valid: vec![true; 6],
        };
        let k = select_tokens(&iv, &cfg(0.5, 2), 6).unwrap();
        assert_eq!(k, vec![0, 4, 5]);
    }

    #[test]
    fn select_alpha_one_is_identity() {
        let iv = ImportanceVector {
            s_sem: vec![1.0; 5],
            s_attn: vec![1.0; 5],
            importance: vec![0.1, 0.5, 0.2, 0.9, 0.3],
            valid: vec![true; 5],
        };
        let k = select_tokens(&iv, &cfg(1.0, 2), 5).unwrap();
        assert_eq!(k, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn select_tie_breaks_to_lower_index() {
        let iv = ImportanceVector {
            s_sem: vec![1.0; 4],
            s_attn: vec![1.0; 4],
            importance: vec![1.0, 1.0, 1.0, 1.0],
            valid: vec![true; 4],
        };
        let k = select_tokens(&iv, &cfg(0.5, 1), 4).unwrap();
        assert_eq!(k, vec![0, 3]);
    }

    #[test]
    fn select_skips_invalid_slots() {
        // Two leading PAD slots carry the sentinel and can never win.
        let iv = ImportanceVector {
            s_sem: vec![0.0, 0.0, 1.0, 1.0, 1.0, 1.0],
            s_attn: vec![0.0, 0.0, 1.0, 1.0, 1.0, 1.0],
            importance: vec![NEG_INF, NEG_INF, 0.3, 0.9, 0.1, 0.2],
            valid: vec![false, false, true, true, true, true],
        };
        let k = select_tokens(&iv, &cfg(0.75, 2), 4).unwrap();
        assert_eq!(k, vec![3, 4, 5]);
    }

    #[test]
    fn window_larger_than_valid_is_config_error() {
        let iv = ImportanceVector {
            s_sem: vec![1.0; 2],
            s_attn: vec![1.0; 2],
            importance: vec![1.0, 1.0],
            valid: vec![true, true],
        };
        assert!(matches!(
            select_tokens(&iv, &cfg(0.5, 3), 2),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn budget_clamps_to_window() {
        let c = cfg(0.1, 4);
        assert_eq!(c.budget(10), 4);
        assert_eq!(c.budget(100), 10);
    }

    #[test]
    fn l2_baseline_raw_values() {
        let hidden = [3.0, 4.0, 0.0, 1.0];
        let s = l2_saliency(&hidden, 2, &[true, true]);
        // raw [5, 1] then normalized by max
        assert!((s[0] - 1.0).abs() < 1e-12);
        assert!((s[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn pool_partition_exact_budget() {
        let slots: Vec<usize> = (10..30).collect();
        for budget in 3..=20 {
            let plan = pool_partition(&slots, budget, 3);
            assert_eq!(plan.len(), budget, "budget {}", budget);
            // Protected tail is singleton-mapped.
            for (i, g) in plan[budget - 3..].iter().enumerate() {
                assert_eq!(g, &vec![slots[slots.len() - 3 + i]]);
            }
            // Every leading slot appears exactly once, in order, unless the
            // whole budget is consumed by the protected window.
            let flat: Vec<usize> = plan[..budget - 3].iter().flatten().copied().collect();
            if budget > 3 {
                assert_eq!(flat, slots[..slots.len() - 3].to_vec());
            } else {
                assert!(flat.is_empty());
            }
        }
    }
}
